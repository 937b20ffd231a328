"""Procedural triangle meshes used for dataset synthesis and experiments.

Desk-scale stand-ins for a real CAD corpus: boxes, cylinders, cones,
ellipsoids, mugs (cylinder plus handle), and asymmetric composites with
distinct extremities. Meshes are triangle soups; they need not be
watertight, only area-sampleable.
"""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh
from .symmetry import SymmetrySpec


def _mesh(vertices, faces) -> TriangleMesh:
    return TriangleMesh(np.asarray(vertices, dtype=float), np.asarray(faces, dtype=int))


def merge_meshes(*meshes: TriangleMesh) -> TriangleMesh:
    verts = []
    faces = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return _mesh(np.vstack(verts), np.vstack(faces))


def translate_mesh(mesh: TriangleMesh, offset) -> TriangleMesh:
    return _mesh(mesh.vertices + np.asarray(offset, dtype=float), mesh.faces)


def box_mesh(lx: float, ly: float, lz: float, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    hx, hy, hz = lx / 2.0, ly / 2.0, lz / 2.0
    c = np.asarray(center, dtype=float)
    verts = np.array(
        [[sx, sy, sz] for sx in (-hx, hx) for sy in (-hy, hy) for sz in (-hz, hz)]
    ) + c
    faces = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # x = -hx
            [4, 6, 7], [4, 7, 5],  # x = +hx
            [0, 4, 5], [0, 5, 1],  # y = -hy
            [2, 3, 7], [2, 7, 6],  # y = +hy
            [0, 2, 6], [0, 6, 4],  # z = -hz
            [1, 5, 7], [1, 7, 3],  # z = +hz
        ]
    )
    return _mesh(verts, faces)


def cylinder_mesh(radius: float, height: float, segments: int = 32) -> TriangleMesh:
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.hstack([ring, np.full((segments, 1), -height / 2.0)])
    top = np.hstack([ring, np.full((segments, 1), height / 2.0)])
    verts = np.vstack([bottom, top, [[0, 0, -height / 2.0]], [[0, 0, height / 2.0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for k in range(segments):
        k2 = (k + 1) % segments
        faces += [[k, k2, segments + k], [k2, segments + k2, segments + k]]
        faces += [[cb, k2, k], [ct, segments + k, segments + k2]]
    return _mesh(verts, faces)


def cone_mesh(radius: float, height: float, segments: int = 32) -> TriangleMesh:
    ang = 2.0 * np.pi * np.arange(segments) / segments
    base = np.stack(
        [radius * np.cos(ang), radius * np.sin(ang), np.full(segments, -height / 2.0)], axis=1
    )
    verts = np.vstack([base, [[0, 0, height / 2.0]], [[0, 0, -height / 2.0]]])
    apex, center = segments, segments + 1
    faces = []
    for k in range(segments):
        k2 = (k + 1) % segments
        faces += [[k, k2, apex], [center, k2, k]]
    return _mesh(verts, faces)


def ellipsoid_mesh(a: float, b: float, c: float, rings: int = 12, segments: int = 24) -> TriangleMesh:
    verts = [[0.0, 0.0, c], [0.0, 0.0, -c]]
    for r in range(1, rings):
        phi = np.pi * r / rings
        for s in range(segments):
            th = 2.0 * np.pi * s / segments
            verts.append(
                [a * np.sin(phi) * np.cos(th), b * np.sin(phi) * np.sin(th), c * np.cos(phi)]
            )
    faces = []

    def ring_index(r, s):
        return 2 + (r - 1) * segments + (s % segments)

    for s in range(segments):
        faces.append([0, ring_index(1, s), ring_index(1, s + 1)])
        faces.append([1, ring_index(rings - 1, s + 1), ring_index(rings - 1, s)])
    for r in range(1, rings - 1):
        for s in range(segments):
            q = [ring_index(r, s), ring_index(r + 1, s), ring_index(r + 1, s + 1), ring_index(r, s + 1)]
            faces += [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
    return _mesh(verts, faces)


def mug_mesh(radius: float = 0.35, height: float = 1.0, handle_size: float = 0.3,
             segments: int = 32) -> TriangleMesh:
    """Cylinder with a box handle sticking out along +x, slightly above
    mid-height.

    The small vertical offset makes the shape nearly, but not exactly,
    invariant under a 180-degree flip about x: full-cloud chamfer barely
    distinguishes the two poses under noise, while a handle-focused patch
    term resolves them. That near-ambiguity is what the spin-ablation
    experiments exercise."""
    body = cylinder_mesh(radius, height, segments)
    handle = box_mesh(handle_size, handle_size * 0.4, handle_size * 0.9,
                      center=(radius + handle_size / 2.0, 0.0, 0.08 * height))
    return merge_meshes(body, handle)


def asymmetric_composite_mesh(seed: int = 0) -> TriangleMesh:
    """Elongated box with a cone on one end and an off-axis bump: no
    rotational symmetry, distinct extremities in every direction."""
    rng = np.random.default_rng(seed)
    lx = 1.0
    ly = 0.30 + 0.10 * rng.random()
    lz = 0.18 + 0.08 * rng.random()
    body = box_mesh(lx, ly, lz)
    nose = cone_mesh(0.4 * ly, 0.35, segments=16)
    # Cone points along +z by construction; place it axis-out past +x.
    nose = TriangleMesh(nose.vertices[:, [2, 0, 1]], nose.faces)
    nose = translate_mesh(nose, (lx / 2.0 + 0.175, 0.0, 0.0))
    bump = box_mesh(0.18, 0.16, 0.22, center=(-lx / 4.0, ly / 2.0 + 0.08, lz / 4.0))
    return merge_meshes(body, nose, bump)


def handle_bar_mesh(rod_radius: float = 0.05, knob_size: float = 0.16,
                    length: float = 1.0) -> TriangleMesh:
    """Bar handle: slim rod with box knobs at both ends."""
    rod = cylinder_mesh(rod_radius, length, segments=16)
    knobs = [
        translate_mesh(box_mesh(knob_size, knob_size, knob_size), (0.0, 0.0, s * length / 2.0))
        for s in (-1.0, 1.0)
    ]
    return merge_meshes(rod, *knobs)


def stability_corpus(count: int = 64):
    """(model_id, mesh, SymmetrySpec) triples spanning boxes, cylinders,
    cones, and bar handles, with per-shape size variation.

    Elongated proportions: patch annotation keys on the endpoints of the
    longest pairwise vectors, so shapes need two distinct extremities to
    carry a stable patch signature through heavy noise."""
    out = []
    kinds = ["box", "cylinder", "cone", "handle"]
    for k in range(count):
        kind = kinds[k % len(kinds)]
        rng = np.random.default_rng([202406, k])
        if kind == "box":
            mesh = box_mesh(1.0, 0.12 + 0.08 * rng.random(), 0.10 + 0.06 * rng.random())
            sym = SymmetrySpec.cyclic(2, (1.0, 0.0, 0.0))
        elif kind == "cylinder":
            mesh = cylinder_mesh(0.04 + 0.05 * rng.random(), 1.0, segments=24)
            sym = SymmetrySpec.continuous((0.0, 0.0, 1.0))
        elif kind == "cone":
            mesh = cone_mesh(0.12 + 0.08 * rng.random(), 1.0, segments=24)
            sym = SymmetrySpec.continuous((0.0, 0.0, 1.0))
        else:
            mesh = handle_bar_mesh(0.04 + 0.02 * rng.random(), 0.12 + 0.06 * rng.random())
            sym = SymmetrySpec.cyclic(4, (0.0, 0.0, 1.0))
        out.append((f"{kind}_{k:03d}", mesh, sym))
    return out


def asymmetric_family(count: int = 10):
    """(model_id, mesh, SymmetrySpec) asymmetric composites."""
    return [
        (f"asym_{k:03d}", asymmetric_composite_mesh(seed=k), SymmetrySpec.none())
        for k in range(count)
    ]


def mug_family(count: int = 6):
    """(model_id, mesh, SymmetrySpec) handled cylinders for spin ablations.

    Squat proportions with a prominent handle: the handle must register in
    the longest-pairwise-vector annotation, otherwise no patch covers it
    and patch guidance has nothing to key on."""
    out = []
    for k in range(count):
        rng = np.random.default_rng([7171, k])
        mesh = mug_mesh(0.30 + 0.04 * rng.random(), 0.68 + 0.06 * rng.random(),
                        handle_size=0.42 + 0.06 * rng.random())
        out.append((f"mug_{k:03d}", mesh, SymmetrySpec.none()))
    return out
