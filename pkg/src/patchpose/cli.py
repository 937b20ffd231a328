"""Command-line surface: reproducible annotation, synthesis, estimation,
evaluation, training, and diagnostics.

Exit codes: 0 success, 1 domain or I/O error, 2 usage error. Every
subcommand is deterministic given its flags; artifacts are written
atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import zlib

import numpy as np

from . import gradcheck, io, patchnet, quaternions as quat
from .errors import PatchPoseError
from .geometry import as_cloud, centroid, farthest_point_sample, normalize_cloud, sample_surface_points
from .icosa import (
    build_icosahedral_group,
    closure_residual_degrees,
    covering_radius_degrees,
    inverses_present,
    nearest_group_element,
)
from .patches import PatchParams, annotate_patch, ball_query, patch_stability_trial
from .pose import estimate_pose_search, init_head_params, train_pose_head
from .patchnet import TrainConfig
from .symmetry import evaluate


def _patch_params(args) -> PatchParams:
    return PatchParams(
        n_points=args.n,
        max_vectors=args.m,
        cos_threshold_deg=args.th,
        ball_radius=args.radius,
    )


def _mesh_to_reference_cloud(mesh, params: PatchParams, seed: int):
    pool = sample_surface_points(mesh, max(8 * params.n_points, params.n_points), seed=seed)
    start = int(np.argmax(np.linalg.norm(pool - pool.mean(axis=0), axis=1)))
    cloud, _ = farthest_point_sample(pool, params.n_points, start_index=start)
    ref, _ = normalize_cloud(cloud)
    return ref


def cmd_annotate(args) -> int:
    params = _patch_params(args)
    mesh = io.load_obj(args.mesh)
    ref = _mesh_to_reference_cloud(mesh, params, args.seed)
    ann = annotate_patch(ref, params)
    record = io.AnnotationRecord.from_annotation(os.path.basename(args.mesh), ann)
    io.save_annotation(args.out, record)
    if args.viz:
        io.save_ply(args.viz, ref, io.patch_colors(len(ref), ann.patch_indices))
    if not args.quiet:
        print(
            f"annotated {args.mesh}: {len(ann.patch_indices)} patch points, "
            f"{len(ann.patch_centers)} centers, {ann.cluster_count} clusters"
        )
    return 0


def cmd_synth(args) -> int:
    names = sorted(f for f in os.listdir(args.models) if f.endswith(".obj"))
    if not names:
        print(f"error: no .obj models in {args.models}", file=sys.stderr)
        return 1
    from .symmetry import SymmetrySpec

    models = [
        (os.path.splitext(n)[0], os.path.join(args.models, n), SymmetrySpec.none())
        for n in names
    ]
    params = _patch_params(args)
    manifest = io.synthesize_dataset(
        models, args.rotations, args.sigma, args.seed, args.out, params=params
    )
    if not args.quiet:
        print(f"{len(manifest.instances)} instances")
    return 0


def cmd_stability(args) -> int:
    manifest = io.load_manifest(args.manifest)
    per_model = {}
    for m in manifest.models:
        ref = io.load_ply(m.ref_cloud_path)
        report = patch_stability_trial(
            ref, manifest.params, trials=args.trials, sigma=args.sigma,
            seed=io.derive_seed(args.seed, zlib.crc32(m.model_id.encode()) % (2**31)),
        )
        per_model[m.model_id] = report.stable_trials
    threshold = max(1, int(round(0.8 * args.trials)))
    fraction = float(np.mean([v >= threshold for v in per_model.values()]))
    doc = {
        "trials": args.trials,
        "sigma": args.sigma,
        "stable_threshold": threshold,
        "per_model_stable_trials": per_model,
        "fraction_stable": fraction,
    }
    io.atomic_write_text(args.out, io._dump_json(doc))
    if not args.quiet:
        print(f"fraction stable at >= {threshold}/{args.trials}: {fraction:.3f}")
    return 0


def cmd_estimate(args) -> int:
    template = io.load_ply(args.template)
    observed = io.load_ply(args.observed)
    patch_t = patch_o = None
    if args.annot:
        record = io.load_annotation(args.annot)
        patch_t = record.patch_indices
        # The annotation pipeline is rotation-invariant, so re-annotating
        # the observed cloud recovers the matching patch subset.
        patch_o = annotate_patch(normalize_cloud(observed)[0], record.params).patch_indices
    estimate = estimate_pose_search(
        template, observed, patch_template=patch_t, patch_observed=patch_o, beta=args.beta
    )
    io.save_estimates_csv(
        args.out,
        [(args.id, estimate.mode_index, estimate.pose.rotation, estimate.pose.translation,
          estimate.score)],
    )
    if not args.quiet:
        msg = f"mode={estimate.mode_index} score={estimate.score:.6g}"
        if args.gt:
            gt = np.array(args.gt)
            msg += f" angle_error_deg={quat.geodesic_degrees(estimate.pose.rotation, gt):.4f}"
        print(msg)
    return 0


def cmd_evaluate(args) -> int:
    manifest = io.load_manifest(args.manifest)
    rows = io.load_estimates_csv(args.estimates)
    gts = [
        (i.instance_id, i.rotation, manifest.model(i.model_id).symmetry)
        for i in manifest.instances
    ]
    report = evaluate([(r[0], r[2]) for r in rows], gts)
    io.atomic_write_text(args.out, io._dump_json(report.to_json()))
    if not args.quiet:
        print(
            f"mean={report.mean_deg:.4f} median={report.median_deg:.4f} "
            f"map5={report.map_5deg:.4f}"
        )
    return 0


def _loss_trace_csv(path, trace) -> None:
    lines = ["epoch,loss"] + [f"{k},{format(v, '.17g')}" for k, v in enumerate(trace)]
    io.atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_train_patchnet(args) -> int:
    manifest = io.load_manifest(args.manifest)
    dataset = []
    for m in manifest.models:
        ref = io.load_ply(m.ref_cloud_path)
        record = io.load_annotation(m.annotation_path)
        labels = np.zeros(len(ref))
        labels[record.patch_indices] = 1.0
        dataset.append((ref, labels))
    params = patchnet.init_params(args.hidden, args.seed)
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    final, trace = patchnet.train(params, dataset, cfg)
    patchnet.save_params(args.out, final)
    _loss_trace_csv(args.out + ".loss.csv", trace)
    if not args.quiet:
        first = trace[0] if trace else float("nan")
        last = trace[-1] if trace else float("nan")
        print(f"trained {args.epochs} epochs: loss {first:.6g} -> {last:.6g}")
    return 0


def cmd_train_posehead(args) -> int:
    manifest = io.load_manifest(args.manifest)
    group = build_icosahedral_group()
    dataset = []
    refs = {}
    annotations = {}
    for m in manifest.models:
        refs[m.model_id] = io.load_ply(m.ref_cloud_path)
        annotations[m.model_id] = io.load_annotation(m.annotation_path)
    for inst in manifest.instances:
        ref = refs[inst.model_id]
        record = annotations[inst.model_id]
        observed = io.load_ply(inst.cloud_path)
        template_c = ref - centroid(ref)
        observed_c = observed - centroid(observed)
        true_mode = nearest_group_element(inst.rotation, group).mode_index
        # Observed-side patch flags: points near the rotated patch centers.
        centers = [
            quat.to_matrix(inst.rotation) @ np.asarray(c, float) for c in record.patch_centers
        ]
        flags = ball_query(observed_c, centers, record.params.ball_radius)
        dataset.append((template_c, observed_c, true_mode, flags))
    params = init_head_params(args.hidden, args.seed)
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    final, trace = train_pose_head(params, dataset, group, cfg)
    doc = {
        "version": 1,
        "hidden_dim": final.hidden_dim,
        **{name: arr.tolist() for name, arr in zip(
            ("w1", "b1", "wm", "bm", "wd", "bd"), final._arrays())},
    }
    io.atomic_write_text(args.out, io._dump_json(doc))
    _loss_trace_csv(args.out + ".loss.csv", trace)
    if not args.quiet:
        first = trace[0] if trace else float("nan")
        last = trace[-1] if trace else float("nan")
        print(f"trained {args.epochs} epochs: loss {first:.6g} -> {last:.6g}")
    return 0


def cmd_gradcheck(args) -> int:
    pn = gradcheck.gradcheck_patchnet(seed=args.seed)
    ph = gradcheck.gradcheck_posehead(seed=args.seed)
    print(f"patchnet max_rel_err={pn:.3e}")
    print(f"posehead max_rel_err={ph:.3e}")
    return 0 if pn <= 1e-4 and ph <= 1e-3 else 1


def cmd_group(args) -> int:
    group = build_icosahedral_group()
    print(f"elements={len(group)}")
    ok = len(group) == 60
    if args.check:
        closure = closure_residual_degrees(group)
        covering = covering_radius_degrees(group, samples=args.samples, seed=args.seed)
        inverses = inverses_present(group)
        print(f"closure_residual_deg={closure:.3e}")
        print(f"inverses_present={inverses}")
        print(f"covering_radius_deg={covering:.4f}")
        ok = ok and closure < 1e-6 and inverses
        if args.list:
            for k, q in enumerate(group.elements):
                print(k, " ".join(format(v, ".17g") for v in q))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchpose",
        description="Point-cloud pose estimation from rotation-invariant patch features.",
    )
    parser.add_argument("--seed", type=int, default=7, help="global seed (default 7)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate", help="annotate a mesh's patch points")
    p.add_argument("--mesh", required=True)
    p.add_argument("--n", type=int, default=1024, help="points after FPS (default 1024)")
    p.add_argument("--m", type=int, default=20, help="feature vectors kept (default 20)")
    p.add_argument("--th", type=float, default=10.0, help="cluster angle threshold, deg")
    p.add_argument("--radius", type=float, default=0.1, help="ball query radius")
    p.add_argument("--out", required=True)
    p.add_argument("--viz", default="", help="optional colored PLY output")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("synth", help="synthesize a rotated/noisy dataset from OBJ models")
    p.add_argument("--models", required=True, help="directory of .obj files")
    p.add_argument("--rotations", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--th", type=float, default=10.0)
    p.add_argument("--radius", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stability", help="patch-center stability over rotated noisy trials")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.1)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("estimate", help="estimate the pose of an observed cloud")
    p.add_argument("--template", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--annot", default="", help="template annotation JSON (enables patch term)")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--id", default="instance_000", help="instance id for the CSV row")
    p.add_argument("--gt", type=float, nargs=4, default=None, metavar=("QW", "QX", "QY", "QZ"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="symmetry-aware aggregate metrics")
    p.add_argument("--estimates", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train-patchnet", help="train the per-point patch classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_patchnet)

    p = sub.add_parser("train-posehead", help="train the mode classifier / residual head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_posehead)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("group", help="icosahedral group diagnostics")
    p.add_argument("--check", action="store_true")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--list", action="store_true", help="print all 60 quaternions")
    p.set_defaults(func=cmd_group)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PatchPoseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
