"""Scikit-learn style wrappers around the trainable and predictive surfaces.

These classes expose fit/predict plus get_params/set_params so the toolkit
composes with ecosystem utilities (grid search, pipelines operating on
lists of clouds). The functional kernels live in the sibling modules.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import patchnet
from .geometry import as_cloud
from .icosa import build_icosahedral_group
from .patches import PatchParams, annotate_patch
from .pose import RefineConfig, estimate_pose_search


def check_cloud(X) -> np.ndarray:
    """Validate an (N, 3) finite float cloud (sklearn-ish input check)."""
    return as_cloud(X)


def check_clouds(Xs) -> list:
    return [as_cloud(x) for x in Xs]


class PatchNetClassifier(BaseEstimator):
    """Per-point patch membership classifier (two shared point-wise layers).

    fit(X, y): X is a list of (N, 3) clouds, y a list of binary per-point
    label arrays. predict_proba/predict operate on a single cloud.
    """

    def __init__(self, hidden_dim=16, epochs=300, learning_rate=0.5, seed=0):
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y):
        clouds = check_clouds(X)
        if len(clouds) != len(y):
            raise ValueError("X and y lengths differ")
        dataset = [(c, np.asarray(labels, dtype=float)) for c, labels in zip(clouds, y)]
        params = patchnet.init_params(self.hidden_dim, self.seed)
        cfg = patchnet.TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate, seed=self.seed
        )
        self.params_, self.loss_trace_ = patchnet.train(params, dataset, cfg)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit first")

    def predict_proba(self, X):
        self._check_fitted()
        return patchnet.forward(self.params_, check_cloud(X))

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(int)

    def predict_patch_indices(self, X, count: int):
        self._check_fitted()
        return patchnet.predict_patch(self.params_, check_cloud(X), count)


class PatchAnnotator(BaseEstimator):
    """Transformer-style wrapper for the deterministic annotation pipeline."""

    def __init__(self, n_points=1024, max_vectors=20, cos_threshold_deg=10.0,
                 ball_radius=0.1, min_cluster_size=1):
        self.n_points = n_points
        self.max_vectors = max_vectors
        self.cos_threshold_deg = cos_threshold_deg
        self.ball_radius = ball_radius
        self.min_cluster_size = min_cluster_size

    def _params(self) -> PatchParams:
        return PatchParams(
            n_points=self.n_points,
            max_vectors=self.max_vectors,
            cos_threshold_deg=self.cos_threshold_deg,
            ball_radius=self.ball_radius,
            min_cluster_size=self.min_cluster_size,
        )

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        """Annotate one cloud or a list of clouds."""
        arr = np.asarray(X, dtype=object) if isinstance(X, list) else X
        if isinstance(arr, np.ndarray) and arr.ndim == 2:
            return annotate_patch(check_cloud(arr), self._params())
        return [annotate_patch(check_cloud(c), self._params()) for c in X]


class IcosahedralPoseEstimator(BaseEstimator):
    """Search-based pose estimator: fit on a template, predict on observed.

    predict returns PoseEstimate objects carrying the quaternion, the mode
    index, the bounded residual, and the final chamfer score.
    """

    def __init__(self, beta=1.0, iterations=40, initial_step_deg=18.0,
                 shrink_factor=0.5, angle_bound_deg=35.999):
        self.beta = beta
        self.iterations = iterations
        self.initial_step_deg = initial_step_deg
        self.shrink_factor = shrink_factor
        self.angle_bound_deg = angle_bound_deg

    def fit(self, X, y=None, patch_indices=None):
        """X: the (N, 3) template cloud; patch_indices: optional template patch."""
        self.template_ = check_cloud(X)
        self.template_patch_ = (
            None if patch_indices is None else np.asarray(patch_indices, dtype=int)
        )
        self.group_ = build_icosahedral_group()
        return self

    def _check_fitted(self):
        if not hasattr(self, "template_"):
            raise NotFittedError("call fit first")

    def _cfg(self) -> RefineConfig:
        return RefineConfig(
            iterations=self.iterations,
            initial_step_deg=self.initial_step_deg,
            shrink_factor=self.shrink_factor,
            angle_bound_deg=self.angle_bound_deg,
        )

    def predict(self, X, patch_indices=None):
        """Estimate the pose of one observed cloud (or a list of clouds)."""
        self._check_fitted()
        single = isinstance(X, np.ndarray) and X.ndim == 2
        clouds = [X] if single else list(X)
        patches = [patch_indices] * len(clouds) if single or patch_indices is None else list(
            patch_indices
        )
        out = []
        for cloud, patch in zip(clouds, patches):
            use_patch = self.template_patch_ is not None and patch is not None
            out.append(
                estimate_pose_search(
                    self.template_,
                    check_cloud(cloud),
                    self.group_,
                    patch_template=self.template_patch_ if use_patch else None,
                    patch_observed=np.asarray(patch, dtype=int) if use_patch else None,
                    beta=self.beta,
                    cfg=self._cfg(),
                )
            )
        return out[0] if single else out
