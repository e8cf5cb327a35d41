"""Command-line entry points.

Exit codes: 0 ok, 1 validation failure, 2 runtime failure over budget.
"""

from __future__ import annotations

import argparse
import sys

from . import dataset as dataset_mod
from .mesh import DegenerateMesh, ParseError, ValidationError, load_mesh, normalize_mesh, orient_up, validate_mesh
from .placement import load_segmask, has_person, valid_region
from .skeleton import (
    AllViewsFailed,
    ExternalDetector,
    SkeletonConfig,
    estimate_skeleton,
    make_default_rig,
    skeleton_sidecar_path,
    write_skeleton,
)


def _cmd_validate(args) -> int:
    try:
        manifest = dataset_mod.load_manifest(args.manifest)
    except (OSError, dataset_mod.ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    problems = dataset_mod.validate_manifest(manifest)
    for problem in problems:
        print(f"problem: {problem}")

    usable, rejected = dataset_mod.filter_backgrounds(manifest)
    print(f"backgrounds: {len(usable)} usable, {len(rejected)} rejected")
    for entry, reason in rejected:
        print(f"  rejected {entry.image_path}: {reason}")
    for entry in usable:
        mask = load_segmask(entry.mask_path)
        region = valid_region(mask, manifest.placement.resolved_for(mask.width, mask.height))
        print(f"  {entry.image_path}: {int(region.sum())} valid placement pixels")

    for model in manifest.models:
        try:
            mesh = load_mesh(model.mesh_path)
        except (OSError, ParseError, ValidationError) as exc:
            print(f"problem: {model.mesh_path}: {exc}")
            problems.append(str(exc))
            continue
        report = validate_mesh(mesh)
        print(f"mesh {model.mesh_path}:")
        for line in report.format().splitlines():
            print(f"  {line}")
    return 1 if problems else 0


def _cmd_extract_skeleton(args) -> int:
    try:
        mesh = load_mesh(args.mesh)
    except (OSError, ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        mesh = normalize_mesh(orient_up(mesh, args.up_axis), args.height)
    except (DegenerateMesh, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg = SkeletonConfig(
        n_views=args.views,
        elevation=args.elevation,
        radius_scale=args.radius_scale,
        image_size=args.image_size,
        focal=args.focal,
        min_confidence=args.min_confidence,
        outlier_k=args.outlier_k,
    )
    rig = make_default_rig(mesh, cfg)
    detector = ExternalDetector(args.detector, timeout=args.timeout, reentrant=args.reentrant)
    try:
        joints = estimate_skeleton(mesh, rig, detector, cfg)
    except AllViewsFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out or skeleton_sidecar_path(args.mesh)
    write_skeleton(joints, out)
    print(f"resolved {joints.resolved_count}/{len(joints)} joints -> {out}")
    return 0


def _cmd_generate(args) -> int:
    try:
        manifest = dataset_mod.load_manifest(args.manifest)
        report = dataset_mod.generate(manifest, args.out, seed=args.seed, workers=args.workers)
    except (OSError, dataset_mod.ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except dataset_mod.GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {report.written}/{report.requested} images to {report.out_dir}")
    print(f"splits: train {report.train_size}, test {report.test_size}")
    for index, reason in report.failed:
        print(f"  failed image {index}: {reason}")
    for path, reason in report.rejected_backgrounds:
        print(f"  rejected background {path}: {reason}")
    return 0


def _cmd_preview(args) -> int:
    try:
        manifest = dataset_mod.load_manifest(args.manifest)
        paths = dataset_mod.preview(manifest, args.out, count=args.count, seed=args.seed)
    except (OSError, dataset_mod.ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="humanforge",
                                     description="Synthetic human dataset generator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest and its assets")
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("extract-skeleton",
                       help="recover a mesh skeleton via multi-view detection")
    p.add_argument("--mesh", required=True)
    p.add_argument("--views", type=int, default=24)
    p.add_argument("--detector", required=True,
                   help="command invoked per view; gets the exchange file path as its "
                        "argument and the image path in $HFORGE_IMAGE")
    p.add_argument("--out", default=None, help="sidecar path (default: <mesh>.skeleton.json)")
    p.add_argument("--height", type=float, default=1.0, help="normalized model height")
    p.add_argument("--up-axis", default="+y", choices=["+y", "-y", "+z", "-z"])
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--radius-scale", type=float, default=1.5)
    p.add_argument("--image-size", type=int, default=512)
    p.add_argument("--focal", type=float, default=500.0)
    p.add_argument("--min-confidence", type=float, default=0.3)
    p.add_argument("--outlier-k", type=float, default=3.0)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--reentrant", action="store_true",
                   help="detector command is safe to run concurrently")
    p.set_defaults(func=_cmd_extract_skeleton)

    p = sub.add_parser("generate", help="generate the dataset described by a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("preview", help="emit annotation-overlay preview images")
    p.add_argument("manifest")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--out", default="preview")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_preview)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
