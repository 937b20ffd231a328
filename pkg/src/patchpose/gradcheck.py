"""Finite-difference oracles for the analytic gradients.

Central differences with step 1e-5 in double precision; the pose head's
chamfer pairing is frozen at the evaluation point so the comparison is
against the same piecewise-smooth branch the analytic gradient lives on.
"""

from __future__ import annotations

import numpy as np

from . import patchnet
from .icosa import build_icosahedral_group
from .pose import (
    HeadParams,
    _head_features,
    _head_forward_full,
    head_loss_and_grad,
    init_head_params,
)

FD_STEP = 1e-5

# A finite-difference probe perturbs hidden pre-activations by roughly
# |step| * |feature|; configurations whose ReLU inputs or max-pool margins
# sit closer than this to a kink would compare the analytic subgradient
# against differences straddling two smooth branches.
KINK_MARGIN = 1e-3


def _central_diff(f, x0: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    grad = np.empty_like(x0)
    for k in range(len(x0)):
        xp = x0.copy()
        xm = x0.copy()
        xp[k] += step
        xm[k] -= step
        grad[k] = (f(xp) - f(xm)) / (2.0 * step)
    return grad


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradcheck_patchnet(seed: int = 7, n_configs: int = 20, hidden_dim: int = 5,
                       n_points: int = 12) -> float:
    """Max relative error of the patchnet gradient over random configs."""
    worst = 0.0
    for c in range(n_configs):
        rng = np.random.default_rng([seed, c])
        params = patchnet.init_params(hidden_dim, rng.integers(0, 2**63))
        cloud = rng.normal(0.0, 0.4, size=(n_points, 3))
        labels = rng.integers(0, 2, size=n_points).astype(float)
        analytic = patchnet.gradient(params, cloud, labels).as_vector()

        def f(vec):
            p = patchnet.MlpParams.from_vector(vec, hidden_dim)
            return patchnet.loss(p, cloud, labels)

        numeric = _central_diff(f, params.as_vector())
        worst = max(worst, _rel_err(analytic, numeric))
    return worst


def _near_kink(params, observed, patch) -> bool:
    """True when a ReLU input or a max-pool margin is within KINK_MARGIN
    of a tie, i.e. where central differences would straddle two smooth
    branches of the piecewise-smooth head."""
    feats = _head_features(observed, patch)
    pre, hid, _, _, _, _ = _head_forward_full(params, feats)
    if np.min(np.abs(pre)) < KINK_MARGIN:
        return True
    top2 = np.sort(hid, axis=0)[-2:, :]
    return bool(np.min(top2[1] - top2[0]) < KINK_MARGIN)


def gradcheck_posehead(seed: int = 7, n_configs: int = 20, hidden_dim: int = 6,
                       n_points: int = 16) -> float:
    """Max relative error of the pose-head gradient over random configs.

    Chamfer nearest-neighbor assignments are held fixed at the evaluation
    point for both the analytic gradient and the numeric oracle, and
    configurations sampled within KINK_MARGIN of a ReLU or max-pool tie
    are redrawn (the loss is piecewise smooth; differences across a branch
    boundary don't estimate the branch's gradient).
    """
    group = build_icosahedral_group()
    worst = 0.0
    accepted = 0
    c = 0
    while accepted < n_configs:
        rng = np.random.default_rng([seed, c])
        c += 1
        params = init_head_params(hidden_dim, rng.integers(0, 2**63))
        template = rng.normal(0.0, 0.4, size=(n_points, 3))
        template -= template.mean(axis=0)
        observed = rng.normal(0.0, 0.4, size=(n_points, 3))
        observed -= observed.mean(axis=0)
        true_mode = int(rng.integers(0, 60))
        patch = rng.choice(n_points, size=max(2, n_points // 4), replace=False)
        if _near_kink(params, observed, patch):
            continue
        accepted += 1
        loss0, grads, assignments = head_loss_and_grad(
            params, template, observed, true_mode, group, patch
        )
        analytic = grads.as_vector()

        def f(vec):
            p = HeadParams.from_vector(vec, hidden_dim)
            loss, _, _ = head_loss_and_grad(
                p, template, observed, true_mode, group, patch, assignments=assignments
            )
            return loss

        numeric = _central_diff(f, params.as_vector())
        worst = max(worst, _rel_err(analytic, numeric))
    return worst
