"""The 60-element icosahedral rotation group and bounded residual rotations.

The group is built in a fixed orientation with two icosahedron vertices on
the z-axis, so mode indices are stable across runs and files. Element 0 is
the identity; the rest are ordered by (rotation angle, canonical axis,
lexicographic).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import quaternions as quat
from .errors import IndexOutOfRange

COS_PI_10 = float(np.cos(np.pi / 10.0))  # lower bound on residual w
RESIDUAL_BOUND_DEG = 36.0  # residual angle strictly below pi/5


class IcosaGroup:
    """Immutable container for the 60 rotation modes."""

    def __init__(self, elements: np.ndarray):
        self.elements = np.asarray(elements, dtype=float)
        self.elements.setflags(write=False)

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, index: int) -> np.ndarray:
        if not 0 <= index < len(self.elements):
            raise IndexOutOfRange(f"mode index {index} outside [0, {len(self.elements)})")
        return self.elements[index]

    def angles_to(self, q) -> np.ndarray:
        """Geodesic angle (degrees) from q to every element.

        Uses the chord form 4*arcsin(|a -/+ b|/2) (equal to 2*arccos|<a,b>|)
        to stay accurate near zero.
        """
        q = np.asarray(q, dtype=float)
        d = np.minimum(
            np.linalg.norm(self.elements - q, axis=1),
            np.linalg.norm(self.elements + q, axis=1),
        )
        return np.degrees(4.0 * np.arcsin(np.minimum(0.5 * d, 1.0)))


@dataclass(frozen=True)
class RotationDecomposition:
    """Nearest mode plus the left residual: residual ∘ mode == input."""

    mode_index: int
    residual: np.ndarray


def _closure(generators, tol_deg=1e-3):
    cos_half = np.cos(np.radians(tol_deg) / 2.0)
    elements = [quat.identity()]

    def known(q):
        return any(abs(np.dot(q, e)) > cos_half for e in elements)

    frontier = list(generators)
    while frontier:
        q = frontier.pop()
        if known(q):
            continue
        elements.append(q)
        for e in list(elements):
            for prod in (quat.compose(q, e), quat.compose(e, q)):
                if not known(prod):
                    frontier.append(prod)
    return elements


@lru_cache(maxsize=1)
def build_icosahedral_group() -> IcosaGroup:
    """Rotation group of the regular icosahedron (two vertices on z)."""
    five_fold = quat.from_axis_angle([0.0, 0.0, 1.0], 2.0 * np.pi / 5.0)
    # Edge between the north-pole vertex and a ring-one vertex at azimuth 0.
    ring_vertex = np.array([2.0, 0.0, 1.0]) / np.sqrt(5.0)
    edge_axis = np.array([0.0, 0.0, 1.0]) + ring_vertex
    two_fold = quat.from_axis_angle(edge_axis, np.pi)
    elements = _closure([five_fold, two_fold])
    if len(elements) != 60:
        raise RuntimeError(f"group closure produced {len(elements)} elements, expected 60")

    def sort_key(q):
        angle = quat.rotation_angle_degrees(q)
        axis = quat.rotation_axis(q) if angle > 1e-9 else np.zeros(3)
        return (round(angle, 6), round(axis[0], 9), round(axis[1], 9), round(axis[2], 9))

    ordered = sorted(elements, key=sort_key)
    assert quat.rotation_angle_degrees(ordered[0]) < 1e-9
    return IcosaGroup(np.array(ordered))


def nearest_group_element(q, group: IcosaGroup | None = None) -> RotationDecomposition:
    """Closest mode by geodesic angle (ties to the lowest index) and its residual."""
    if group is None:
        group = build_icosahedral_group()
    q = np.asarray(q, dtype=float)
    idx = int(np.argmin(group.angles_to(q)))
    residual = quat.compose(q, quat.conjugate(group[idx]))
    return RotationDecomposition(mode_index=idx, residual=residual)


def sigmoid(s: float) -> float:
    s = min(max(float(s), -500.0), 500.0)
    return 1.0 / (1.0 + np.exp(-s))


def constrain_delta(raw_scale: float, raw_axis) -> np.ndarray:
    """Bounded residual quaternion: w in (cos(pi/10), 1), angle < 36 degrees.

    w = cos(pi/10) + (1 - cos(pi/10)) * sigmoid(raw_scale); the vector part
    carries the remaining mass along the normalized raw axis (+z fallback
    for a near-zero axis). The output is unit by construction.
    """
    axis = np.asarray(raw_axis, dtype=float)
    n = np.linalg.norm(axis)
    u = axis / n if n > 1e-12 else np.array([0.0, 0.0, 1.0])
    w = COS_PI_10 + (1.0 - COS_PI_10) * sigmoid(raw_scale)
    v = np.sqrt(max(1.0 - w * w, 0.0)) * u
    return np.array([w, v[0], v[1], v[2]])


def compose_mode_and_delta(group: IcosaGroup, mode_index: int, delta) -> np.ndarray:
    """Full rotation delta ∘ mode (residual applied after the mode)."""
    return quat.compose(delta, group[mode_index])


def clamp_residual(residual, max_angle_deg: float = 35.999) -> np.ndarray:
    """Shrink a residual's angle to max_angle_deg if it exceeds the bound."""
    residual = np.asarray(residual, dtype=float)
    angle = quat.rotation_angle_degrees(residual)
    if angle <= max_angle_deg:
        return residual.copy()
    return quat.from_axis_angle(quat.rotation_axis(residual), np.radians(max_angle_deg))


def closure_residual_degrees(group: IcosaGroup) -> float:
    """Max over all 3600 products of the angle to the closest element."""
    worst = 0.0
    for a in group.elements:
        for b in group.elements:
            prod = quat.compose(a, b)
            worst = max(worst, float(group.angles_to(prod).min()))
    return worst


def inverses_present(group: IcosaGroup, tol_deg: float = 1e-6) -> bool:
    for e in group.elements:
        if group.angles_to(quat.conjugate(e)).min() > tol_deg:
            return False
    return True


def covering_radius_degrees(group: IcosaGroup, samples: int = 100_000, seed: int = 0) -> float:
    """Empirical covering radius: max over uniform samples of the nearest-mode angle."""
    rng = np.random.default_rng(seed)
    qs = quat.random_rotations(samples, rng)
    dots = np.abs(qs @ group.elements.T)
    nearest = np.degrees(2.0 * np.arccos(np.minimum(dots.max(axis=1), 1.0)))
    return float(nearest.max())
