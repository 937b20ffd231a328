"""File formats and dataset synthesis.

ASCII-only in v1: OBJ (v/f subset) for meshes, ASCII PLY for clouds,
versioned JSON for annotations and manifests, CSV for pose estimates.
Floats are written with 17 significant digits so every file round-trips
bit-exactly; JSON is dumped with sorted keys and fixed separators so
identical inputs produce byte-identical artifacts.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import quaternions as quat
from .errors import EmptyMesh, ParseError, SchemaError, UnsupportedFormat
from .geometry import (
    PerturbationConfig,
    TriangleMesh,
    apply_rotation,
    as_cloud,
    centroid,
    farthest_point_sample,
    normalize_cloud,
    perturb,
    sample_surface_points,
)
from .patches import PatchAnnotation, PatchParams, annotate_patch
from .symmetry import SymmetrySpec

logger = logging.getLogger(__name__)

PATCH_COLOR = (255, 0, 0)
REST_COLOR = (128, 128, 128)
ESTIMATE_FIELDS = ["instance_id", "mode", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "score"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ": "), indent=1) + "\n"


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------


def load_obj(path) -> TriangleMesh:
    """Parse v/f statements; polygons are fan-triangulated; 1-based and
    negative indices resolved; other statements ignored. Zero-area faces
    are dropped (a warning reports the count)."""
    vertices = []
    faces = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise ParseError(lineno, "vertex needs 3 coordinates")
                try:
                    vertices.append([float(c) for c in rest[:3]])
                except ValueError as exc:
                    raise ParseError(lineno, f"bad vertex coordinate: {exc}") from exc
            elif tag == "f":
                if len(rest) < 3:
                    raise ParseError(lineno, "face needs at least 3 vertices")
                idx = []
                for token in rest:
                    first = token.split("/")[0]
                    try:
                        k = int(first)
                    except ValueError as exc:
                        raise ParseError(lineno, f"bad face index {token!r}") from exc
                    if k == 0:
                        raise ParseError(lineno, "OBJ face indices are 1-based; 0 is invalid")
                    resolved = k - 1 if k > 0 else len(vertices) + k
                    if not 0 <= resolved < len(vertices):
                        raise ParseError(lineno, f"face index {k} out of range")
                    idx.append(resolved)
                for a, b in zip(idx[1:-1], idx[2:]):
                    faces.append([idx[0], a, b])
            # all other statements (vn, vt, o, g, s, usemtl, ...) are ignored
    if not faces:
        raise EmptyMesh(f"{path}: no faces")
    mesh = TriangleMesh(np.array(vertices), np.array(faces))
    areas = mesh.face_areas()
    keep = areas > 1e-14
    dropped = int(np.sum(~keep))
    if dropped:
        logger.warning("%s: dropped %d zero-area face(s)", path, dropped)
        mesh = TriangleMesh(mesh.vertices, mesh.faces[keep], dropped_faces=dropped)
    if len(mesh.faces) == 0:
        raise EmptyMesh(f"{path}: all faces degenerate")
    return mesh


def save_obj(path, mesh: TriangleMesh) -> None:
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def save_ply(path, cloud, colors=None) -> None:
    """ASCII PLY with x,y,z (17 significant digits) and optional uchar RGB."""
    pts = as_cloud(cloud)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float64 x",
        "property float64 y",
        "property float64 z",
    ]
    if colors is not None:
        colors = np.asarray(colors, dtype=int)
        if colors.shape != (len(pts), 3):
            raise ValueError("colors must be (N, 3)")
        header += [
            "property uchar red",
            "property uchar green",
            "property uchar blue",
        ]
    header.append("end_header")
    lines = header
    for k, (x, y, z) in enumerate(pts):
        row = f"{_fmt(x)} {_fmt(y)} {_fmt(z)}"
        if colors is not None:
            row += f" {colors[k, 0]} {colors[k, 1]} {colors[k, 2]}"
        lines.append(row)
    atomic_write_text(path, "\n".join(lines) + "\n")


def patch_colors(n_points: int, patch_indices) -> np.ndarray:
    """Red for patch members, gray for the rest."""
    colors = np.tile(np.array(REST_COLOR, dtype=int), (n_points, 1))
    colors[np.asarray(patch_indices, dtype=int)] = PATCH_COLOR
    return colors


def load_ply(path) -> np.ndarray:
    """ASCII PLY reader for vertex clouds with x,y,z float properties."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(1, "not a PLY file")
    n_vertex = None
    properties = []
    in_vertex = False
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise UnsupportedFormat(f"binary PLY not supported ({tok[1]})")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            properties.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = lineno
            break
    if body_start is None:
        raise ParseError(len(lines), "missing end_header")
    if n_vertex is None:
        raise ParseError(body_start, "missing vertex element")
    for coord in ("x", "y", "z"):
        if coord not in properties:
            raise ParseError(body_start, f"missing {coord!r} property")
    cols = [properties.index(c) for c in ("x", "y", "z")]
    rows = []
    for k in range(n_vertex):
        lineno = body_start + 1 + k
        if lineno > len(lines):
            raise ParseError(lineno, "truncated vertex list")
        tok = lines[lineno - 1].split()
        if len(tok) < len(properties):
            raise ParseError(lineno, f"expected {len(properties)} values, got {len(tok)}")
        try:
            rows.append([float(tok[c]) for c in cols])
        except ValueError as exc:
            raise ParseError(lineno, f"bad coordinate: {exc}") from exc
    return np.array(rows, dtype=float).reshape(-1, 3)


# ---------------------------------------------------------------------------
# Annotation records and manifests
# ---------------------------------------------------------------------------


def _params_to_json(params: PatchParams) -> dict:
    return {
        "n_points": params.n_points,
        "max_vectors": params.max_vectors,
        "cos_threshold_deg": params.cos_threshold_deg,
        "ball_radius": params.ball_radius,
        "min_cluster_size": params.min_cluster_size,
    }


def _params_from_json(doc) -> PatchParams:
    try:
        return PatchParams(**doc)
    except (TypeError, ValueError) as exc:
        raise SchemaError("params", str(exc)) from exc


@dataclass(frozen=True)
class AnnotationRecord:
    model_id: str
    params: PatchParams
    patch_indices: np.ndarray
    patch_centers: list
    cluster_count: int

    @classmethod
    def from_annotation(cls, model_id: str, ann: PatchAnnotation) -> "AnnotationRecord":
        return cls(
            model_id=model_id,
            params=ann.params,
            patch_indices=np.asarray(ann.patch_indices, dtype=int),
            patch_centers=[np.asarray(c, dtype=float) for c in ann.patch_centers],
            cluster_count=ann.cluster_count,
        )


def save_annotation(path, record: AnnotationRecord) -> None:
    doc = {
        "version": 1,
        "model_id": record.model_id,
        "params": _params_to_json(record.params),
        "patch_indices": [int(i) for i in record.patch_indices],
        "patch_centers": [[float(v) for v in c] for c in record.patch_centers],
        "cluster_count": record.cluster_count,
    }
    atomic_write_text(path, _dump_json(doc))


def load_annotation(path) -> AnnotationRecord:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("version", "model_id", "params", "patch_indices", "patch_centers", "cluster_count"):
        if key not in doc:
            raise SchemaError(key, "missing")
    if doc["version"] != 1:
        raise SchemaError("version", f"unsupported version {doc['version']}")
    return AnnotationRecord(
        model_id=doc["model_id"],
        params=_params_from_json(doc["params"]),
        patch_indices=np.asarray(doc["patch_indices"], dtype=int),
        patch_centers=[np.asarray(c, dtype=float) for c in doc["patch_centers"]],
        cluster_count=int(doc["cluster_count"]),
    )


@dataclass(frozen=True)
class ModelEntry:
    model_id: str
    source_path: str
    symmetry: SymmetrySpec
    ref_cloud_path: str = ""
    annotation_path: str = ""


@dataclass(frozen=True)
class InstanceEntry:
    instance_id: str
    model_id: str
    rotation: np.ndarray
    sigma: float
    seed: int
    cloud_path: str


@dataclass(frozen=True)
class DatasetManifest:
    version: int
    models: list = field(default_factory=list)
    instances: list = field(default_factory=list)
    params: PatchParams = PatchParams()

    def model(self, model_id: str) -> ModelEntry:
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise SchemaError("model_id", f"unknown model {model_id!r}")


def save_manifest(path, manifest: DatasetManifest) -> None:
    doc = {
        "version": manifest.version,
        "params": _params_to_json(manifest.params),
        "models": [
            {
                "model_id": m.model_id,
                "source_path": m.source_path,
                "symmetry": m.symmetry.to_json(),
                "ref_cloud_path": m.ref_cloud_path,
                "annotation_path": m.annotation_path,
            }
            for m in manifest.models
        ],
        "instances": [
            {
                "instance_id": i.instance_id,
                "model_id": i.model_id,
                "rotation": [float(v) for v in i.rotation],
                "sigma": i.sigma,
                "seed": i.seed,
                "cloud_path": i.cloud_path,
            }
            for i in manifest.instances
        ],
    }
    atomic_write_text(path, _dump_json(doc))


def load_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("version", "params", "models", "instances"):
        if key not in doc:
            raise SchemaError(key, "missing")
    if doc["version"] != 1:
        raise SchemaError("version", f"unsupported version {doc['version']}")
    models = []
    for m in doc["models"]:
        for key in ("model_id", "source_path", "symmetry"):
            if key not in m:
                raise SchemaError(f"models.{key}", "missing")
        models.append(
            ModelEntry(
                model_id=m["model_id"],
                source_path=m["source_path"],
                symmetry=SymmetrySpec.from_json(m["symmetry"]),
                ref_cloud_path=m.get("ref_cloud_path", ""),
                annotation_path=m.get("annotation_path", ""),
            )
        )
    model_ids = {m.model_id for m in models}
    instances = []
    seen = set()
    for i in doc["instances"]:
        for key in ("instance_id", "model_id", "rotation", "sigma", "seed", "cloud_path"):
            if key not in i:
                raise SchemaError(f"instances.{key}", "missing")
        if i["instance_id"] in seen:
            raise SchemaError("instances.instance_id", f"duplicate {i['instance_id']!r}")
        seen.add(i["instance_id"])
        if i["model_id"] not in model_ids:
            raise SchemaError("instances.model_id", f"unknown model {i['model_id']!r}")
        rotation = np.asarray(i["rotation"], dtype=float)
        if rotation.shape != (4,) or abs(np.linalg.norm(rotation) - 1.0) > 1e-6:
            raise SchemaError("instances.rotation", "not a unit quaternion")
        instances.append(
            InstanceEntry(
                instance_id=i["instance_id"],
                model_id=i["model_id"],
                rotation=rotation,
                sigma=float(i["sigma"]),
                seed=int(i["seed"]),
                cloud_path=i["cloud_path"],
            )
        )
    return DatasetManifest(
        version=1, models=models, instances=instances, params=_params_from_json(doc["params"])
    )


# ---------------------------------------------------------------------------
# Estimates CSV
# ---------------------------------------------------------------------------


def save_estimates_csv(path, rows) -> None:
    """rows: iterable of (instance_id, mode, quaternion, translation, score)."""
    out = [",".join(ESTIMATE_FIELDS)]
    for instance_id, mode, q, t, score in rows:
        vals = [instance_id, str(int(mode))]
        vals += [_fmt(v) for v in q]
        vals += [_fmt(v) for v in t]
        vals.append(_fmt(score))
        out.append(",".join(vals))
    atomic_write_text(path, "\n".join(out) + "\n")


def load_estimates_csv(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ESTIMATE_FIELDS:
            raise SchemaError("header", f"expected {ESTIMATE_FIELDS}, got {reader.fieldnames}")
        for rec in reader:
            q = np.array([float(rec[k]) for k in ("qw", "qx", "qy", "qz")])
            t = np.array([float(rec[k]) for k in ("tx", "ty", "tz")])
            rows.append((rec["instance_id"], int(rec["mode"]), q, t, float(rec["score"])))
    return rows


# ---------------------------------------------------------------------------
# Dataset synthesis
# ---------------------------------------------------------------------------


def derive_seed(*parts: int) -> int:
    """Stable scalar seed from a tuple of small integers."""
    h = 0
    for p in parts:
        h = (h * 1_000_003 + int(p)) % (2**63)
    return h


def synthesize_dataset(
    models,
    rotations_per_model: int,
    sigma: float,
    seed: int,
    out_dir,
    params: PatchParams | None = None,
    surface_pool: int = 8192,
) -> DatasetManifest:
    """Build a dataset: per model a normalized reference cloud plus
    annotation; per instance a rotated, noisy, shuffled cloud with its
    ground-truth rotation recorded in the manifest.

    `models` is a list of (model_id, source, SymmetrySpec) where `source`
    is an OBJ path or a TriangleMesh. Everything is deterministic from
    `seed`; the manifest is written to out_dir/manifest.json.
    """
    params = params or PatchParams()
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    model_entries = []
    instance_entries = []
    for midx, (model_id, source, sym) in enumerate(models):
        if isinstance(source, TriangleMesh):
            mesh = source
            source_path = f"<procedural:{model_id}>"
        else:
            mesh = load_obj(source)
            source_path = os.fspath(source)
        pool = sample_surface_points(mesh, surface_pool, seed=derive_seed(seed, midx, 0))
        start = int(np.argmax(np.linalg.norm(pool - pool.mean(axis=0), axis=1)))
        cloud, _ = farthest_point_sample(pool, params.n_points, start_index=start)
        ref, _ = normalize_cloud(cloud)
        ann = annotate_patch(ref, params)
        ref_path = os.path.join(out_dir, f"{model_id}_ref.ply")
        ann_path = os.path.join(out_dir, f"{model_id}_annotation.json")
        save_ply(ref_path, ref)
        save_annotation(ann_path, AnnotationRecord.from_annotation(model_id, ann))
        model_entries.append(
            ModelEntry(
                model_id=model_id,
                source_path=source_path,
                symmetry=sym,
                ref_cloud_path=ref_path,
                annotation_path=ann_path,
            )
        )
        center = centroid(ref)
        for r in range(rotations_per_model):
            inst_seed = derive_seed(seed, midx, r + 1)
            rng = np.random.default_rng(inst_seed)
            q = quat.random_rotations(1, rng)[0]
            inst = apply_rotation(ref, q, center)
            inst = perturb(inst, PerturbationConfig(sigma=sigma, seed=int(rng.integers(0, 2**63))))
            inst = inst[rng.permutation(len(inst))]
            instance_id = f"{model_id}_r{r:03d}"
            cloud_path = os.path.join(out_dir, f"{instance_id}.ply")
            save_ply(cloud_path, inst)
            instance_entries.append(
                InstanceEntry(
                    instance_id=instance_id,
                    model_id=model_id,
                    rotation=q,
                    sigma=sigma,
                    seed=inst_seed,
                    cloud_path=cloud_path,
                )
            )
    manifest = DatasetManifest(
        version=1, models=model_entries, instances=instance_entries, params=params
    )
    save_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest
