"""Point-cloud and mesh geometry kernels.

Clouds are float64 numpy arrays of shape (N, 3); row order is meaningful
(it carries instance identity through sampling and shuffling). All
functions here are pure: they never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import quaternions as quat
from .errors import DegenerateCloud, EmptyCloud, EmptyMesh, NonUnitQuaternion, TooFewPoints


def as_cloud(points) -> np.ndarray:
    """Validate and return a (N, 3) float64 cloud with finite entries."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise EmptyCloud(f"expected (N, 3) point array, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise EmptyCloud("cloud has no points")
    if not np.all(np.isfinite(arr)):
        raise DegenerateCloud("cloud contains non-finite coordinates")
    return arr


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle soup: vertices (V, 3) and zero-based faces (F, 3)."""

    vertices: np.ndarray
    faces: np.ndarray
    dropped_faces: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=int).reshape(-1, 3))
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise EmptyMesh("face index exceeds vertex count")

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(cross, axis=1)


@dataclass(frozen=True)
class NormalizationRecord:
    """Center subtracted and scale divided out by :func:`normalize_cloud`."""

    center: np.ndarray
    scale: float


@dataclass(frozen=True)
class PerturbationConfig:
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def sample_surface_points(mesh: TriangleMesh, count: int, seed) -> np.ndarray:
    """Draw `count` points area-uniformly from the mesh surface.

    Deterministic given `seed`. Zero-area faces carry no probability mass;
    a mesh without any positive-area face raises EmptyMesh.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if len(areas) == 0 or total <= 0.0:
        raise EmptyMesh("mesh has no face with positive area")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(areas), size=count, p=areas / total)
    u, v = rng.random((2, count))
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.vertices[mesh.faces[face_idx]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return pts


def farthest_point_sample(cloud, n: int, start_index: int = 0):
    """Greedy FPS: each pick maximizes min distance to the selected set.

    Ties break to the lowest index (numpy argmax convention). Returns the
    sampled cloud in selection order plus the selected indices.
    """
    pts = as_cloud(cloud)
    count = len(pts)
    if n > count:
        raise TooFewPoints(f"requested {n} of {count} points")
    if not 0 <= start_index < count:
        raise IndexError(f"start_index {start_index} out of range")
    selected = np.empty(n, dtype=int)
    selected[0] = start_index
    dist = np.linalg.norm(pts - pts[start_index], axis=1)
    for k in range(1, n):
        idx = int(np.argmax(dist))
        selected[k] = idx
        dist = np.minimum(dist, np.linalg.norm(pts - pts[idx], axis=1))
    return pts[selected], selected


def centroid(cloud) -> np.ndarray:
    return as_cloud(cloud).mean(axis=0)


def normalize_cloud(cloud):
    """Center at the mean and divide by the largest axis range.

    Returns (normalized cloud, NormalizationRecord). Raises DegenerateCloud
    when the cloud has no extent.
    """
    pts = as_cloud(cloud)
    center = pts.mean(axis=0)
    centered = pts - center
    scale = float((centered.max(axis=0) - centered.min(axis=0)).max())
    if scale < 1e-12:
        raise DegenerateCloud("zero coordinate range")
    return centered / scale, NormalizationRecord(center=center, scale=scale)


def apply_rotation(cloud, q, center=None) -> np.ndarray:
    """Rotate every point about `center` (default origin): q(p - c)q^-1 + c."""
    pts = as_cloud(cloud)
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise NonUnitQuaternion(f"norm {np.linalg.norm(q)}")
    R = quat.to_matrix(q)
    if center is None:
        return pts @ R.T
    center = np.asarray(center, dtype=float)
    return (pts - center) @ R.T + center


def chamfer_distance(x, y) -> float:
    """Symmetric mean-of-squared nearest-neighbor distances (both directions)."""
    xs = as_cloud(x)
    ys = as_cloud(y)
    d_xy = cKDTree(ys).query(xs)[0]
    d_yx = cKDTree(xs).query(ys)[0]
    return float(np.mean(d_xy**2) + np.mean(d_yx**2))


def nearest_assignments(x, y):
    """Indices (a, b): a[i] = argmin_j |x_i - y_j|, b[j] = argmin_i |y_j - x_i|."""
    xs = as_cloud(x)
    ys = as_cloud(y)
    a = cKDTree(ys).query(xs)[1]
    b = cKDTree(xs).query(ys)[1]
    return a, b


def chamfer_fixed(x, y, assignments) -> float:
    """Chamfer value with precomputed nearest-neighbor assignments held fixed."""
    xs = as_cloud(x)
    ys = as_cloud(y)
    a, b = assignments
    t1 = np.mean(np.sum((xs - ys[a]) ** 2, axis=1))
    t2 = np.mean(np.sum((ys - xs[b]) ** 2, axis=1))
    return float(t1 + t2)


def perturb(cloud, cfg: PerturbationConfig) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian offsets (std cfg.sigma per coordinate)."""
    pts = as_cloud(cloud)
    if cfg.sigma == 0.0:
        return pts.copy()
    rng = np.random.default_rng(cfg.seed)
    return pts + rng.normal(0.0, cfg.sigma, size=pts.shape)
