"""Semi-automatic patch annotation: longest pairwise vectors, direction
clustering, endpoint grouping, and ball-neighborhood expansion.

The patch is a rotation-invariant cue: pairwise lengths do not change under
rotation, so the same endpoint regions are selected (statistically) for any
orientation of the cloud. Directions are canonicalized to the upper
hemisphere (z >= 0, ties broken on y then x) before clustering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import quaternions as quat
from .errors import DegenerateCloud, TooFewPoints
from .geometry import PerturbationConfig, apply_rotation, as_cloud, centroid, perturb


@dataclass(frozen=True)
class PatchParams:
    n_points: int = 1024
    max_vectors: int = 20
    cos_threshold_deg: float = 10.0
    ball_radius: float = 0.1
    min_cluster_size: int = 1

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        if not 1 <= self.max_vectors <= self.n_points * (self.n_points - 1) // 2:
            raise ValueError("max_vectors out of range")
        if not 0.0 < self.cos_threshold_deg < 90.0:
            raise ValueError("cos_threshold_deg must be in (0, 90)")
        if self.ball_radius <= 0.0:
            raise ValueError("ball_radius must be positive")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")


@dataclass(frozen=True)
class FeatureVector:
    """Canonicalized direction between points i < j plus its length."""

    i: int
    j: int
    direction: np.ndarray
    length: float


@dataclass
class DirectionCluster:
    members: list = field(default_factory=list)
    mean_direction: np.ndarray = None
    flagged_small: bool = False


@dataclass(frozen=True)
class PatchAnnotation:
    params: PatchParams
    patch_indices: np.ndarray
    patch_centers: list
    cluster_count: int


@dataclass(frozen=True)
class StabilityReport:
    trials: int
    stable_trials: int
    per_trial_stable: list
    reference_centers: list


def canonical_direction(v: np.ndarray) -> np.ndarray:
    """Flip sign so z >= 0; on z == 0 require y >= 0, then x >= 0."""
    for c in (v[2], v[1], v[0]):
        if c > 0.0:
            return v.copy()
        if c < 0.0:
            return -v
    return v.copy()


def pairwise_vectors(cloud) -> list:
    """One FeatureVector per unordered pair (i < j). O(N^2); for large
    clouds use :func:`top_m_from_cloud` which avoids materializing them."""
    pts = as_cloud(cloud)
    n = len(pts)
    if n < 2:
        raise TooFewPoints("need at least 2 points for pairwise vectors")
    out = []
    for i in range(n - 1):
        diff = pts[i + 1 :] - pts[i]
        lengths = np.linalg.norm(diff, axis=1)
        for k, j in enumerate(range(i + 1, n)):
            length = float(lengths[k])
            if length < 1e-15:
                direction = np.array([0.0, 0.0, 1.0])
            else:
                direction = canonical_direction(diff[k] / length)
            out.append(FeatureVector(i=i, j=j, direction=direction, length=length))
    return out


def top_m_by_length(vectors, m: int) -> list:
    """The m longest vectors, descending; ties broken by (i, j)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return sorted(vectors, key=lambda v: (-v.length, v.i, v.j))[:m]


def top_m_from_cloud(cloud, m: int) -> list:
    """Equivalent to top_m_by_length(pairwise_vectors(cloud), m), vectorized."""
    pts = as_cloud(cloud)
    n = len(pts)
    if n < 2:
        raise TooFewPoints("need at least 2 points for pairwise vectors")
    ii, jj = np.triu_indices(n, k=1)
    diff = pts[jj] - pts[ii]
    lengths = np.linalg.norm(diff, axis=1)
    total = len(lengths)
    take = min(m, total)
    # Preselect a candidate pool so the tie-breaking sort never touches
    # all O(n^2) pairs; fall back to the full sort when length ties at
    # the cut would make the pool ambiguous.
    cand = np.arange(total)
    k = 4 * take + 64
    if total > k:
        cand = np.argpartition(-lengths, k - 1)[:k]
        if np.count_nonzero(lengths >= lengths[cand].min()) > k:
            cand = np.arange(total)
    order = cand[np.lexsort((jj[cand], ii[cand], -lengths[cand]))][:take]
    out = []
    for k in order:
        length = float(lengths[k])
        if length < 1e-15:
            direction = np.array([0.0, 0.0, 1.0])
        else:
            direction = canonical_direction(diff[k] / length)
        out.append(FeatureVector(i=int(ii[k]), j=int(jj[k]), direction=direction, length=length))
    return out


def cluster_by_cosine(vectors, th_deg: float, min_cluster_size: int = 1) -> list:
    """Greedy agglomeration in the given (descending-length) order.

    Each vector joins the first cluster whose mean direction lies within
    th_deg, else opens a new cluster; the cluster mean is renormalized
    after every assignment. Small clusters are kept but flagged.
    """
    if not vectors:
        raise ValueError("vector list is empty")
    if not 0.0 < th_deg < 90.0:
        raise ValueError("th_deg must be in (0, 90)")
    cos_th = np.cos(np.radians(th_deg))
    clusters: list[DirectionCluster] = []
    for v in vectors:
        placed = False
        for c in clusters:
            if float(np.dot(c.mean_direction, v.direction)) >= cos_th:
                c.members.append(v)
                mean = np.mean([m.direction for m in c.members], axis=0)
                norm = np.linalg.norm(mean)
                if norm > 1e-12:
                    c.mean_direction = mean / norm
                placed = True
                break
        if not placed:
            clusters.append(DirectionCluster(members=[v], mean_direction=v.direction.copy()))
    for c in clusters:
        c.flagged_small = len(c.members) < min_cluster_size
    return clusters


def endpoints_of_clusters(clusters, cloud, linkage_radius: float) -> list:
    """Deduplicated endpoint indices pooled over clusters, partitioned into
    spatial groups by single linkage at `linkage_radius`.

    Groups are returned as sorted index lists, ordered by smallest member.
    """
    if not clusters:
        raise ValueError("cluster list is empty")
    pts = as_cloud(cloud)
    endpoint_set = sorted({e for c in clusters for v in c.members for e in (v.i, v.j)})
    idx = np.array(endpoint_set, dtype=int)
    parent = list(range(len(idx)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    coords = pts[idx]
    tree = cKDTree(coords)
    for a, b in tree.query_pairs(linkage_radius):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list] = {}
    for k in range(len(idx)):
        groups.setdefault(find(k), []).append(int(idx[k]))
    return [sorted(g) for _, g in sorted(groups.items())]


def ball_query(cloud, centers, radius: float) -> np.ndarray:
    """Sorted union of indices within `radius` of any center."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    pts = as_cloud(cloud)
    tree = cKDTree(pts)
    hits = set()
    for c in np.atleast_2d(np.asarray(centers, dtype=float)):
        hits.update(tree.query_ball_point(c, radius))
    return np.array(sorted(hits), dtype=int)


def annotate_patch(cloud, params: PatchParams) -> PatchAnnotation:
    """End-to-end annotation: longest vectors -> direction clusters ->
    endpoint groups -> ball neighborhoods. Deterministic."""
    pts = as_cloud(cloud)
    vectors = top_m_from_cloud(pts, params.max_vectors)
    if vectors[0].length < 1e-12:
        raise DegenerateCloud("all points coincide; no usable directions")
    clusters = cluster_by_cosine(vectors, params.cos_threshold_deg, params.min_cluster_size)
    groups = endpoints_of_clusters(clusters, pts, params.ball_radius)
    centers = []
    all_indices = set()
    for g in groups:
        neighborhood = ball_query(pts, pts[g], params.ball_radius)
        centers.append(pts[neighborhood].mean(axis=0))
        all_indices.update(int(k) for k in neighborhood)
    return PatchAnnotation(
        params=params,
        patch_indices=np.array(sorted(all_indices), dtype=int),
        patch_centers=centers,
        cluster_count=len(clusters),
    )


def match_center_sets(reference, recovered, tolerance: float) -> bool:
    """Greedy nearest-pair matching; stable iff cardinalities match and every
    matched pair is within `tolerance`."""
    ref = [np.asarray(c, dtype=float) for c in reference]
    rec = [np.asarray(c, dtype=float) for c in recovered]
    if len(ref) != len(rec):
        return False
    while ref:
        dmat = np.array([[np.linalg.norm(a - b) for b in rec] for a in ref])
        i, j = np.unravel_index(np.argmin(dmat), dmat.shape)
        if dmat[i, j] > tolerance:
            return False
        ref.pop(int(i))
        rec.pop(int(j))
    return True


def patch_stability_trial(
    cloud, params: PatchParams, trials: int, sigma: float, seed: int
) -> StabilityReport:
    """Re-annotate under random rotation + noise + shuffling, `trials` times.

    A trial is stable when the recovered patch centers, rotated back into
    the reference frame, match the reference centers within 2*ball_radius
    (equal cardinality, greedy pairing). Trials use derived seeds
    (seed, trial index), so they are independent and reproducible.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pts = as_cloud(cloud)
    reference = annotate_patch(pts, params)
    center = centroid(pts)
    tol = 2.0 * params.ball_radius
    per_trial = []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        q = quat.random_rotations(1, rng)[0]
        trial_cloud = apply_rotation(pts, q, center)
        trial_cloud = perturb(
            trial_cloud, PerturbationConfig(sigma=sigma, seed=rng.integers(0, 2**63))
        )
        trial_cloud = trial_cloud[rng.permutation(len(trial_cloud))]
        try:
            ann = annotate_patch(trial_cloud, params)
        except (DegenerateCloud, TooFewPoints):
            per_trial.append(False)
            continue
        recovered = [
            apply_rotation(np.asarray(c, float)[None, :], quat.conjugate(q), center)[0]
            for c in ann.patch_centers
        ]
        per_trial.append(match_center_sets(reference.patch_centers, recovered, tol))
    return StabilityReport(
        trials=trials,
        stable_trials=int(sum(per_trial)),
        per_trial_stable=per_trial,
        reference_centers=list(reference.patch_centers),
    )
