"""Symmetry-aware rotation error metrics and orientation disambiguation.

Ground truths are expanded with the object's symmetry rotations before
measuring geodesic error, so a bottle spun about its axis is not penalized.
Continuous axial symmetry is discretized (default 36 steps of 10 degrees),
bounding the discretization error at 5 degrees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quaternions as quat
from .errors import DegenerateProjection, EmptySet, MissingGroundTruth, SchemaError
from .geometry import as_cloud


@dataclass(frozen=True)
class SymmetrySpec:
    """Object symmetry: none, cyclic(order, axis), or continuous(axis)."""

    kind: str = "none"
    order: int = 0
    axis: tuple = (0.0, 0.0, 1.0)
    discretization: int = 36

    def __post_init__(self):
        if self.kind not in ("none", "cyclic", "continuous"):
            raise ValueError(f"unknown symmetry kind {self.kind!r}")
        if self.kind == "cyclic" and self.order < 2:
            raise ValueError("cyclic symmetry needs order >= 2")
        if self.kind == "continuous" and self.discretization < 4:
            raise ValueError("continuous symmetry needs discretization >= 4")
        if self.kind != "none":
            axis = np.asarray(self.axis, dtype=float)
            n = np.linalg.norm(axis)
            if n < 1e-12:
                raise ValueError("symmetry axis has zero norm")
            object.__setattr__(self, "axis", tuple(axis / n))

    @classmethod
    def none(cls) -> "SymmetrySpec":
        return cls(kind="none")

    @classmethod
    def cyclic(cls, order: int, axis) -> "SymmetrySpec":
        return cls(kind="cyclic", order=order, axis=tuple(np.asarray(axis, dtype=float)))

    @classmethod
    def continuous(cls, axis, discretization: int = 36) -> "SymmetrySpec":
        return cls(
            kind="continuous",
            axis=tuple(np.asarray(axis, dtype=float)),
            discretization=discretization,
        )

    def to_json(self) -> dict:
        doc = {"kind": self.kind}
        if self.kind == "cyclic":
            doc["order"] = self.order
            doc["axis"] = list(self.axis)
        elif self.kind == "continuous":
            doc["axis"] = list(self.axis)
            doc["discretization"] = self.discretization
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SymmetrySpec":
        if not isinstance(doc, dict) or "kind" not in doc:
            raise SchemaError("symmetry.kind", "missing")
        kind = doc["kind"]
        try:
            if kind == "none":
                return cls.none()
            if kind == "cyclic":
                return cls.cyclic(int(doc["order"]), doc["axis"])
            if kind == "continuous":
                return cls.continuous(doc["axis"], int(doc.get("discretization", 36)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError("symmetry", str(exc)) from exc
        raise SchemaError("symmetry.kind", f"unknown kind {kind!r}")


@dataclass(frozen=True)
class EvalReport:
    count: int
    mean_deg: float
    median_deg: float
    map_5deg: float
    per_instance_errors: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "mean_deg": self.mean_deg,
            "median_deg": self.median_deg,
            "map_5deg": self.map_5deg,
            "errors": [{"id": i, "deg": d} for i, d in self.per_instance_errors],
        }


def expand_ground_truth(q_gt, spec: SymmetrySpec) -> list:
    """All symmetry-equivalent ground truths {q_gt ∘ s}."""
    q_gt = np.asarray(q_gt, dtype=float)
    if spec.kind == "none":
        return [q_gt.copy()]
    axis = np.asarray(spec.axis, dtype=float)
    steps = spec.order if spec.kind == "cyclic" else spec.discretization
    out = []
    for k in range(steps):
        s = quat.from_axis_angle(axis, 2.0 * np.pi * k / steps)
        out.append(quat.compose(q_gt, s))
    return out


def symmetry_error_degrees(q_est, gt_set) -> float:
    """Minimum geodesic error over the expanded ground-truth set."""
    if not len(gt_set):
        raise EmptySet("ground-truth set is empty")
    return min(quat.geodesic_degrees(q_est, g) for g in gt_set)


def orient_by_projection(cloud, frame) -> np.ndarray:
    """Sign-disambiguate `frame` by the summed signed coordinates of the
    cloud expressed in that frame.

    Axes whose coordinate sum is negative are flipped via a 180-degree
    rotation about the remaining axis; an odd flip set is repaired by
    toggling the least-confident axis (smallest |sum|), keeping the result
    a proper rotation. Raises DegenerateProjection when any sum is within
    1e-9 of zero.
    """
    pts = as_cloud(cloud)
    frame = np.asarray(frame, dtype=float)
    R = quat.to_matrix(frame)
    sums = (pts @ R).sum(axis=0)  # S_a = sum_i <R^T p_i, e_a>
    if np.any(np.abs(sums) < 1e-9):
        raise DegenerateProjection(f"ambiguous projection sums {sums}")
    marked = [k for k in range(3) if sums[k] < 0.0]
    if len(marked) % 2 == 1:
        weakest = int(np.argmin(np.abs(sums)))
        if weakest in marked:
            marked.remove(weakest)
        else:
            marked.append(weakest)
    if not marked:
        return quat.canonical(frame)
    kept = ({0, 1, 2} - set(marked)).pop()
    flip_axis = np.zeros(3)
    flip_axis[kept] = 1.0
    flip = quat.from_axis_angle(flip_axis, np.pi)
    return quat.compose(frame, flip)


def evaluate(estimates, ground_truths) -> EvalReport:
    """Aggregate symmetry-aware errors: mean, lower-middle median, 5-degree mAP.

    `estimates` is a list of (id, quaternion); `ground_truths` a list of
    (id, quaternion, SymmetrySpec). Every estimate id must be present.
    """
    gt_map = {gid: (q, spec) for gid, q, spec in ground_truths}
    per_instance = []
    for eid, q_est in estimates:
        if eid not in gt_map:
            raise MissingGroundTruth(eid)
        q_gt, spec = gt_map[eid]
        err = symmetry_error_degrees(q_est, expand_ground_truth(q_gt, spec))
        per_instance.append((eid, err))
    errors = np.array([e for _, e in per_instance])
    if len(errors) == 0:
        raise EmptySet("no estimates to evaluate")
    lower_middle = float(np.sort(errors)[(len(errors) - 1) // 2])
    return EvalReport(
        count=len(errors),
        mean_deg=float(errors.mean()),
        median_deg=lower_middle,
        map_5deg=float(np.mean(errors < 5.0)),
        per_instance_errors=per_instance,
    )
