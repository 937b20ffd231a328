"""Classify-then-refine pose estimation over the 60 icosahedral modes.

The search estimator scores every mode by (optionally patch-weighted)
chamfer distance, picks the argmin, then refines a bounded residual
rotation by derivative-free coordinate descent. The learned head is a
desk-scale pooled point feature with a 60-way mode classifier and a
4-parameter bounded-residual regressor; its gradients are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import quaternions as quat
from .errors import EmptyPatch, LengthMismatch
from .geometry import as_cloud, centroid
from .icosa import IcosaGroup, build_icosahedral_group, constrain_delta, sigmoid, COS_PI_10
from .patchnet import cross_entropy_loss


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray  # unit quaternion, canonical sign
    translation: np.ndarray


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    mode_index: int
    residual: np.ndarray
    score: float
    mode_scores: np.ndarray


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    pose_rec: float
    q_norm: float
    patch: float
    total: float


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 40
    initial_step_deg: float = 18.0
    shrink_factor: float = 0.5
    angle_bound_deg: float = 35.999
    candidates: int = 20

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ValueError("shrink_factor must be in (0, 1)")
        if not 0.0 < self.initial_step_deg <= self.angle_bound_deg:
            raise ValueError("initial_step_deg must be in (0, angle_bound_deg]")
        if not self.angle_bound_deg < 36.0:
            raise ValueError("angle_bound_deg must stay below 36")


class ChamferScorer:
    """Chamfer score of rotate(template, R) against a fixed observed cloud,
    with an optional additive patch-restricted term weighted by beta.

    Trees are built once; each mode evaluation only rotates and queries.
    """

    def __init__(self, template, observed, patch_template=None, patch_observed=None, beta=1.0):
        self.template = as_cloud(template)
        self.observed = as_cloud(observed)
        self.beta = float(beta)
        self._tree_t = cKDTree(self.template)
        self._tree_o = cKDTree(self.observed)
        if (patch_template is None) != (patch_observed is None):
            raise EmptyPatch("either both patch sets or neither must be given")
        self._patch = None
        if patch_template is not None:
            pt = np.asarray(patch_template, dtype=int)
            po = np.asarray(patch_observed, dtype=int)
            if len(pt) == 0 or len(po) == 0:
                raise EmptyPatch("patch index set is empty")
            tp = self.template[pt]
            op = self.observed[po]
            self._patch = (tp, op, cKDTree(tp), cKDTree(op))

    def score_matrix(self, R: np.ndarray) -> float:
        d1 = self._tree_o.query(self.template @ R.T)[0]
        d2 = self._tree_t.query(self.observed @ R)[0]
        total = float(np.mean(d1**2) + np.mean(d2**2))
        if self._patch is not None and self.beta != 0.0:
            tp, op, tree_tp, tree_op = self._patch
            d1 = tree_op.query(tp @ R.T)[0]
            d2 = tree_tp.query(op @ R)[0]
            total += self.beta * float(np.mean(d1**2) + np.mean(d2**2))
        return total

    def score_many(self, Rs: np.ndarray) -> np.ndarray:
        """Scores for a stack of rotation matrices via batched tree queries."""
        Rs = np.asarray(Rs, dtype=float)
        k = len(Rs)
        rot_t = np.einsum("kij,nj->kni", Rs, self.template).reshape(-1, 3)
        d1 = self._tree_o.query(rot_t)[0].reshape(k, -1)
        rot_o = np.einsum("kji,nj->kni", Rs, self.observed).reshape(-1, 3)
        d2 = self._tree_t.query(rot_o)[0].reshape(k, -1)
        out = np.mean(d1**2, axis=1) + np.mean(d2**2, axis=1)
        if self._patch is not None and self.beta != 0.0:
            tp, op, tree_tp, tree_op = self._patch
            p1 = tree_op.query(np.einsum("kij,nj->kni", Rs, tp).reshape(-1, 3))[0]
            p2 = tree_tp.query(np.einsum("kji,nj->kni", Rs, op).reshape(-1, 3))[0]
            out = out + self.beta * (
                np.mean(p1.reshape(k, -1) ** 2, axis=1)
                + np.mean(p2.reshape(k, -1) ** 2, axis=1)
            )
        return out

    def score(self, q) -> float:
        return self.score_matrix(quat.to_matrix(np.asarray(q, dtype=float)))


def score_modes(
    template, observed, group: IcosaGroup | None = None,
    patch_template=None, patch_observed=None, beta: float = 1.0,
) -> np.ndarray:
    """Chamfer score of every rotation mode, as a length-60 array."""
    if group is None:
        group = build_icosahedral_group()
    scorer = ChamferScorer(template, observed, patch_template, patch_observed, beta)
    return np.array([scorer.score(g) for g in group.elements])


_AXES = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))


def refine_delta(
    template, observed, g, patch_template=None, patch_observed=None,
    beta: float = 1.0, cfg: RefineConfig | None = None,
) -> np.ndarray:
    """Coordinate descent on the residual: probe +/- step about x, y, z.

    Probes whose residual angle would exceed cfg.angle_bound_deg are
    rejected, so the bound holds by construction; the returned residual's
    score never exceeds the initial one. Clouds are expected mean-centered.
    """
    cfg = cfg or RefineConfig()
    scorer = ChamferScorer(template, observed, patch_template, patch_observed, beta)
    g = np.asarray(g, dtype=float)
    residual = quat.identity()
    best = scorer.score(quat.compose(residual, g))
    step = cfg.initial_step_deg
    for _ in range(cfg.iterations):
        cands = []
        for axis in _AXES:
            for sign in (1.0, -1.0):
                probe = quat.from_axis_angle(axis, np.radians(sign * step))
                cand = quat.compose(probe, residual)
                if quat.rotation_angle_degrees(cand) <= cfg.angle_bound_deg:
                    cands.append(cand)
        if cands:
            mats = np.array([quat.to_matrix(quat.compose(c, g)) for c in cands])
            scores = scorer.score_many(mats)
            k = int(np.argmin(scores))
            if scores[k] < best:
                best = float(scores[k])
                residual = cands[k]
                continue
        step *= cfg.shrink_factor
    return residual


def estimate_pose_search(
    template, observed, group: IcosaGroup | None = None,
    patch_template=None, patch_observed=None, beta: float = 1.0,
    cfg: RefineConfig | None = None,
) -> PoseEstimate:
    """Full search pipeline: center, score all modes, refine the best one.

    Translation is centroid alignment: mean(observed) - R * mean(template).
    """
    if group is None:
        group = build_icosahedral_group()
    t = as_cloud(template)
    o = as_cloud(observed)
    mu_t = centroid(t)
    mu_o = centroid(o)
    tc = t - mu_t
    oc = o - mu_o
    scores = score_modes(tc, oc, group, patch_template, patch_observed, beta)
    if cfg is None:
        cfg = RefineConfig()
    scorer = ChamferScorer(tc, oc, patch_template, patch_observed, beta)
    # The coarse per-mode score cannot separate neighboring modes when the
    # true residual approaches the bound, so refine the best few candidates
    # and keep whichever ends lowest (ties: lowest mode index).
    mode, residual, final_score = -1, None, np.inf
    for cand in np.argsort(scores, kind="stable")[: cfg.candidates]:
        res = refine_delta(tc, oc, group[cand], patch_template, patch_observed, beta, cfg)
        s = scorer.score(quat.compose(res, group[cand]))
        if s < final_score:
            mode, residual, final_score = int(cand), res, s
        if final_score < 1e-8:  # exact recovery; later candidates can't win
            break
    rotation = quat.compose(residual, group[mode])
    translation = mu_o - quat.to_matrix(rotation) @ mu_t
    return PoseEstimate(
        pose=Pose(rotation=rotation, translation=translation),
        mode_index=mode,
        residual=residual,
        score=final_score,
        mode_scores=scores,
    )


def pose_loss(
    mode_logits, raw_delta, template, observed, patch_probs, patch_labels,
    weights: LossWeights, group: IcosaGroup | None = None,
) -> LossBreakdown:
    """Total training loss: chamfer reconstruction + residual-norm
    regularizer + patch cross entropy.

    The predicted rotation is constrain_delta(raw) composed onto the argmax
    mode (first max on ties). Clouds are expected mean-centered.
    """
    if group is None:
        group = build_icosahedral_group()
    logits = np.asarray(mode_logits, dtype=float)
    if logits.shape != (len(group),):
        raise LengthMismatch(f"expected {len(group)} logits, got {logits.shape}")
    mode = int(np.argmax(logits))
    raw_scale, raw_axis = raw_delta
    delta = constrain_delta(raw_scale, raw_axis)
    rotation = quat.compose(delta, group[mode])
    scorer = ChamferScorer(template, observed)
    pose_rec = scorer.score(rotation)
    q_norm = float((np.linalg.norm(delta) - 1.0) ** 2)
    patch = cross_entropy_loss(patch_probs, patch_labels)
    total = pose_rec + weights.lambda1 * q_norm + weights.lambda2 * patch
    return LossBreakdown(pose_rec=pose_rec, q_norm=q_norm, patch=patch, total=total)


# ---------------------------------------------------------------------------
# Learned head: shared point-wise layer, max+mean pooling, two linear heads.
# ---------------------------------------------------------------------------


@dataclass
class HeadParams:
    w1: np.ndarray  # (H, 4)
    b1: np.ndarray  # (H,)
    wm: np.ndarray  # (60, 2H)
    bm: np.ndarray  # (60,)
    wd: np.ndarray  # (4, 2H)
    bd: np.ndarray  # (4,)

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "HeadParams":
        return HeadParams(*(a.copy() for a in self._arrays()))

    def _arrays(self):
        return (self.w1, self.b1, self.wm, self.bm, self.wd, self.bd)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._arrays()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, hidden_dim: int, n_modes: int = 60) -> "HeadParams":
        h = hidden_dim
        shapes = [(h, 4), (h,), (n_modes, 2 * h), (n_modes,), (4, 2 * h), (4,)]
        arrays = []
        k = 0
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(vec[k : k + size].reshape(shape).copy())
            k += size
        return cls(*arrays)


def init_head_params(hidden_dim: int, seed, n_modes: int = 60) -> HeadParams:
    if hidden_dim < 1:
        raise ValueError("hidden_dim must be >= 1")
    rng = np.random.default_rng(seed)

    def glorot(fan_out, fan_in):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    return HeadParams(
        w1=glorot(hidden_dim, 4),
        b1=np.zeros(hidden_dim),
        wm=glorot(n_modes, 2 * hidden_dim),
        bm=np.zeros(n_modes),
        wd=glorot(4, 2 * hidden_dim),
        bd=np.zeros(4),
    )


def _head_features(cloud, patch_indices) -> np.ndarray:
    pts = as_cloud(cloud)
    flags = np.zeros(len(pts))
    if patch_indices is not None:
        flags[np.asarray(patch_indices, dtype=int)] = 1.0
    return np.hstack([pts, flags[:, None]])


def _head_forward_full(params: HeadParams, feats: np.ndarray):
    pre = feats @ params.w1.T + params.b1
    hid = np.maximum(pre, 0.0)
    argmax = hid.argmax(axis=0)
    pooled = np.concatenate([hid.max(axis=0), hid.mean(axis=0)])
    logits = params.wm @ pooled + params.bm
    raw = params.wd @ pooled + params.bd
    return pre, hid, argmax, pooled, logits, raw


def learned_head_forward(params: HeadParams, cloud, patch_indices=None):
    """Returns (60 mode logits, (raw_scale, raw_axis)). Permutation-invariant."""
    feats = _head_features(cloud, patch_indices)
    _, _, _, _, logits, raw = _head_forward_full(params, feats)
    return logits, (float(raw[0]), raw[1:4].copy())


# -- analytic gradient machinery for the head loss --------------------------

def _rotation_matrix_jacobian(q: np.ndarray) -> np.ndarray:
    """d(R)/d(q) for a unit quaternion, shape (4, 3, 3)."""
    w, x, y, z = q
    dw = 2.0 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]], dtype=float)
    dx = 2.0 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]], dtype=float)
    dy = 2.0 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]], dtype=float)
    dz = 2.0 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]], dtype=float)
    return np.stack([dw, dx, dy, dz])


def _right_mult_matrix(g: np.ndarray) -> np.ndarray:
    """Matrix M with hamilton(p, g) == M @ p."""
    w, x, y, z = g
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, z, -y],
            [y, -z, w, x],
            [z, y, -x, w],
        ]
    )


def _constrain_delta_jacobian(raw_scale: float, raw_axis: np.ndarray):
    """delta and d(delta)/d(raw_scale, raw_axis) -> (delta, (4,), (4, 3))."""
    axis = np.asarray(raw_axis, dtype=float)
    n = np.linalg.norm(axis)
    if n > 1e-12:
        u = axis / n
        du_da = (np.eye(3) - np.outer(u, u)) / n
    else:
        u = np.array([0.0, 0.0, 1.0])
        du_da = np.zeros((3, 3))
    sig = sigmoid(raw_scale)
    w = COS_PI_10 + (1.0 - COS_PI_10) * sig
    k = np.sqrt(max(1.0 - w * w, 1e-300))
    delta = np.array([w, *(k * u)])
    dw_ds = (1.0 - COS_PI_10) * sig * (1.0 - sig)
    dk_ds = (-w / k) * dw_ds
    d_ds = np.array([dw_ds, *(dk_ds * u)])
    d_da = np.zeros((4, 3))
    d_da[1:, :] = k * du_da
    return delta, d_ds, d_da


def pose_rec_loss_and_grad(raw, template_c, observed_c, g_true, assignments=None):
    """Chamfer reconstruction loss at constrain(raw) ∘ g_true and its exact
    gradient w.r.t. the 4 raw residual parameters.

    `assignments` freezes the nearest-neighbor pairing (used by the
    finite-difference oracle); when None the pairing is recomputed at the
    evaluation point and treated as locally constant.
    """
    raw = np.asarray(raw, dtype=float)
    delta, d_ds, d_da = _constrain_delta_jacobian(raw[0], raw[1:4])
    g_true = np.asarray(g_true, dtype=float)
    qp = quat.hamilton(delta, g_true)
    R = quat.to_matrix(qp)
    t = as_cloud(template_c)
    o = as_cloud(observed_c)
    rt = t @ R.T
    if assignments is None:
        a = cKDTree(o).query(rt)[1]
        b = cKDTree(rt).query(o)[1]
    else:
        a, b = assignments
    r1 = rt - o[a]
    r2 = rt[b] - o
    loss = float(np.mean(np.sum(r1**2, axis=1)) + np.mean(np.sum(r2**2, axis=1)))
    dL_dR = (2.0 / len(t)) * (r1.T @ t) + (2.0 / len(o)) * (r2.T @ t[b])
    dR_dq = _rotation_matrix_jacobian(qp)
    dL_dqp = np.tensordot(dR_dq, dL_dR, axes=([1, 2], [0, 1]))
    dL_ddelta = _right_mult_matrix(g_true).T @ dL_dqp
    grad = np.empty(4)
    grad[0] = float(dL_ddelta @ d_ds)
    grad[1:] = dL_ddelta @ d_da
    return loss, grad, (a, b)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def head_loss_and_grad(
    params: HeadParams, template_c, observed_c, true_mode: int,
    group: IcosaGroup, patch_indices=None, ce_weight: float = 1.0,
    rec_weight: float = 1.0, assignments=None,
):
    """Full head loss (mode cross entropy + teacher-forced reconstruction)
    and its exact gradient, as (loss, HeadParams-shaped grads, assignments)."""
    feats = _head_features(observed_c, patch_indices)
    pre, hid, argmax, pooled, logits, raw = _head_forward_full(params, feats)
    soft = _softmax(logits)
    ce = -float(np.log(max(soft[true_mode], 1e-300)))
    if rec_weight != 0.0:
        rec, draw, used_assignments = pose_rec_loss_and_grad(
            raw, template_c, observed_c, group[true_mode], assignments
        )
    else:
        rec, draw, used_assignments = 0.0, np.zeros(4), assignments
    loss = ce_weight * ce + rec_weight * rec

    dlogits = soft.copy()
    dlogits[true_mode] -= 1.0
    dlogits *= ce_weight
    draw = rec_weight * draw
    dwm = np.outer(dlogits, pooled)
    dbm = dlogits
    dwd = np.outer(draw, pooled)
    dbd = draw
    dpooled = params.wm.T @ dlogits + params.wd.T @ draw
    h = params.hidden_dim
    dhid = np.zeros_like(hid)
    dhid[argmax, np.arange(h)] += dpooled[:h]
    dhid += dpooled[h:] / len(feats)
    dhid[pre <= 0.0] = 0.0
    dw1 = dhid.T @ feats
    db1 = dhid.sum(axis=0)
    grads = HeadParams(w1=dw1, b1=db1, wm=dwm, bm=dbm, wd=dwd, bd=dbd)
    return loss, grads, used_assignments


def train_pose_head(params: HeadParams, dataset, group: IcosaGroup, cfg, ce_weight=1.0, rec_weight=1.0):
    """Full-batch gradient descent on the head loss.

    `dataset` items are (template_centered, observed_centered, true_mode,
    patch_indices). Returns (final params, per-epoch mean loss trace).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    cur = params.copy()
    trace = []
    for _ in range(cfg.epochs):
        total = 0.0
        acc = HeadParams(*(np.zeros_like(a) for a in cur._arrays()))
        for template_c, observed_c, true_mode, patch_indices in dataset:
            loss, grads, _ = head_loss_and_grad(
                cur, template_c, observed_c, true_mode, group, patch_indices,
                ce_weight=ce_weight, rec_weight=rec_weight,
            )
            total += loss
            for a, g in zip(acc._arrays(), grads._arrays()):
                a += g
        k = cfg.learning_rate / len(dataset)
        for a, g in zip(cur._arrays(), acc._arrays()):
            a -= k * g
        trace.append(total / len(dataset))
    return cur, trace
