"""Unit-quaternion utilities (wxyz convention, canonical sign w >= 0).

All quaternions are numpy arrays of shape (4,) ordered (w, x, y, z).
Canonical sign means w >= 0; when w == 0 the first nonzero of (x, y, z)
is made nonnegative, so equality tests are well defined under the
double cover.
"""

from __future__ import annotations

import numpy as np

from .errors import NonUnitQuaternion

UNIT_TOL = 1e-6


def identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def canonical(q: np.ndarray) -> np.ndarray:
    """Return q with canonical sign (w >= 0, ties resolved on x, y, z)."""
    q = np.asarray(q, dtype=float)
    for c in q:
        if c > 0.0:
            return q.copy()
        if c < 0.0:
            return -q
    return q.copy()


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise NonUnitQuaternion("zero-norm quaternion")
    return canonical(q / n)


def check_unit(q: np.ndarray, tol: float = UNIT_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise NonUnitQuaternion(f"expected shape (4,), got {q.shape}")
    n = np.linalg.norm(q)
    if abs(n - 1.0) > tol:
        raise NonUnitQuaternion(f"norm {n} deviates from 1 by more than {tol}")
    return q


def conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def hamilton(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Raw Hamilton product a*b (no normalization, no sign fix)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Composition a ∘ b (apply b first, then a), renormalized, canonical."""
    return normalize(hamilton(np.asarray(a, float), np.asarray(b, float)))


def from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise NonUnitQuaternion("axis has zero norm")
    h = 0.5 * angle_rad
    q = np.empty(4)
    q[0] = np.cos(h)
    q[1:] = np.sin(h) * axis / n
    return canonical(q)


def to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def geodesic_degrees(a: np.ndarray, b: np.ndarray) -> float:
    """Angular distance 2*arccos(|<a,b>|) in degrees, in [0, 180].

    Evaluated as 4*arcsin(min(|a-b|, |a+b|)/2), which is the same quantity
    without the arccos cancellation near zero (accurate to ~1e-13 degrees
    for nearby rotations).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = min(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))
    return float(np.degrees(4.0 * np.arcsin(min(0.5 * d, 1.0))))


def rotation_angle_degrees(q: np.ndarray) -> float:
    """Rotation angle of q in degrees, in [0, 180]."""
    return float(np.degrees(2.0 * np.arccos(min(abs(float(q[0])), 1.0))))


def rotation_axis(q: np.ndarray) -> np.ndarray:
    """Unit rotation axis of q; +z for (near-)identity rotations."""
    v = np.asarray(q, float)[1:]
    n = np.linalg.norm(v)
    if n < 1e-12:
        return np.array([0.0, 0.0, 1.0])
    return v / n


def twist_angle_degrees(q: np.ndarray, axis) -> float:
    """Signed twist of q about `axis` (swing-twist split), wrapped to [-180, 180]."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    q = np.asarray(q, dtype=float)
    proj = float(np.dot(q[1:], axis))
    ang = np.degrees(2.0 * np.arctan2(proj, float(q[0])))
    if ang > 180.0:
        ang -= 360.0
    elif ang < -180.0:
        ang += 360.0
    return float(ang)


def random_rotation(seed) -> np.ndarray:
    """Uniform (Haar) random rotation, Shoemake construction."""
    rng = np.random.default_rng(seed)
    return random_rotations(1, rng)[0]


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """n uniform random rotations as an (n, 4) array, canonical sign."""
    u1, u2, u3 = rng.random((3, n))
    a = np.sqrt(1.0 - u1)
    b = np.sqrt(u1)
    q = np.stack(
        [
            b * np.cos(2 * np.pi * u3),
            a * np.sin(2 * np.pi * u2),
            a * np.cos(2 * np.pi * u2),
            b * np.sin(2 * np.pi * u3),
        ],
        axis=1,
    )
    return canonical_batch(q)


def canonical_batch(q: np.ndarray) -> np.ndarray:
    """Canonical sign applied row-wise to an (n, 4) array."""
    q = np.asarray(q, dtype=float)
    out = q.copy()
    for k in range(4):
        undecided = np.all(out[:, :k] == 0.0, axis=1) if k else np.ones(len(out), bool)
        out[undecided & (out[:, k] < 0.0)] *= -1.0
    return out
