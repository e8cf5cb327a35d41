"""Dataset assembly: manifests, background filtering, splits, COCO output.

A TOML manifest names background images (with segmentation masks and
optional per-background perspective calibration), normalized human meshes
(with skeleton sidecars), the placement configuration, a global seed, and
the requested image count. Generation is deterministic: per-image seeds
are derived from (global seed, image index), so output bytes do not
depend on worker count or scheduling.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .geometry import CameraIntrinsics
from .mesh import Mesh, compute_bounds, load_mesh, normalize_mesh, orient_up
from .placement import (
    ModelRef,
    PlacementConfig,
    SegMask,
    has_person,
    load_segmask,
    placement_config_from_dict,
    plan_scene,
)
from .render import load_png, save_png
from .compose import (
    AnnotationRecord,
    annotate,
    composite_scene,
    draw_overlay,
    render_person_sprite,
    save_owner_png,
)
from .skeleton import (
    JOINT_COUNT,
    JOINT_NAMES,
    SKELETON_EDGES,
    JointSet3D,
    read_skeleton,
    skeleton_sidecar_path,
)

TOOL_VERSION = "0.1.0"


class ManifestError(Exception):
    """Manifest refers to missing files or is internally inconsistent."""


class InvariantViolation(Exception):
    """Refusing to serialize annotation records that break their contract."""


class GenerationError(Exception):
    """More than the tolerated fraction of images failed."""


@dataclass(frozen=True)
class BackgroundEntry:
    image_path: str
    mask_path: str
    horizon_row: float | None = None
    camera_height: float | None = None
    focal: float | None = None


@dataclass(frozen=True)
class ModelEntry:
    mesh_path: str
    skeleton_path: str
    identity: int
    up_axis: str = "+y"


@dataclass(frozen=True)
class DatasetManifest:
    backgrounds: tuple[BackgroundEntry, ...]
    models: tuple[ModelEntry, ...]
    placement: PlacementConfig
    seed: int = 0
    image_count: int = 0
    train_fraction: float = 0.8
    source_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "backgrounds", tuple(self.backgrounds))
        object.__setattr__(self, "models", tuple(self.models))
        identities = [m.identity for m in self.models]
        if len(set(identities)) != len(identities):
            raise ManifestError("model identity ids must be unique")


def load_manifest(path: str) -> DatasetManifest:
    """Parse a TOML manifest; relative paths resolve against its directory."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    ds = data.get("dataset", {})
    backgrounds = []
    for entry in data.get("backgrounds", []):
        if "image" not in entry or "mask" not in entry:
            raise ManifestError(f"{path}: background entries need 'image' and 'mask'")
        backgrounds.append(BackgroundEntry(
            image_path=resolve(entry["image"]),
            mask_path=resolve(entry["mask"]),
            horizon_row=entry.get("horizon_row"),
            camera_height=entry.get("camera_height"),
            focal=entry.get("focal"),
        ))
    models = []
    for index, entry in enumerate(data.get("models", [])):
        if "mesh" not in entry:
            raise ManifestError(f"{path}: model entries need 'mesh'")
        mesh_path = resolve(entry["mesh"])
        skeleton_path = (resolve(entry["skeleton"]) if "skeleton" in entry
                         else skeleton_sidecar_path(mesh_path))
        models.append(ModelEntry(
            mesh_path=mesh_path,
            skeleton_path=skeleton_path,
            identity=int(entry.get("identity", index)),
            up_axis=str(entry.get("up_axis", "+y")),
        ))
    return DatasetManifest(
        backgrounds=tuple(backgrounds),
        models=tuple(models),
        placement=placement_config_from_dict(data.get("placement", {})),
        seed=int(ds.get("seed", 0)),
        image_count=int(ds.get("image_count", 0)),
        train_fraction=float(ds.get("train_fraction", 0.8)),
        source_path=os.path.abspath(path),
    )


def validate_manifest(manifest: DatasetManifest) -> list[str]:
    """Return human-readable problems; empty list means the manifest is usable."""
    problems = []
    if not manifest.backgrounds:
        problems.append("no backgrounds listed")
    if not manifest.models:
        problems.append("no models listed")
    for entry in manifest.backgrounds:
        for p in (entry.image_path, entry.mask_path):
            if not os.path.exists(p):
                problems.append(f"missing file: {p}")
    for entry in manifest.models:
        if not os.path.exists(entry.mesh_path):
            problems.append(f"missing file: {entry.mesh_path}")
        if not os.path.exists(entry.skeleton_path):
            problems.append(
                f"missing skeleton sidecar: {entry.skeleton_path} "
                f"(run `humanforge extract-skeleton --mesh {entry.mesh_path} ...`)"
            )
    return problems


def filter_backgrounds(manifest: DatasetManifest):
    """Drop backgrounds that already contain humans (per their masks).

    Returns (usable entries, rejection report) where the report is a list
    of (entry, reason) pairs; per-entry IO problems are collected there
    rather than raised.
    """
    usable = []
    rejected = []
    for entry in manifest.backgrounds:
        try:
            mask = load_segmask(entry.mask_path)
        except (OSError, ValueError) as exc:
            rejected.append((entry, f"io-error: {exc}"))
            continue
        if has_person(mask, manifest.placement):
            rejected.append((entry, "contains person class"))
        else:
            usable.append(entry)
    return usable, rejected


def split_dataset(image_ids, train_fraction: float, seed: int,
                  identities: dict | None = None):
    """Seeded shuffle split with |train| = round-half-up(fraction * n).

    When an image -> identity-set mapping is given, a best-effort repair
    pass swaps images so every identity that appears anywhere also appears
    in the train split (sizes preserved; skipped when impossible).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    ids = list(image_ids)
    n = len(ids)
    n_train = int(np.floor(train_fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    train = {ids[k] for k in perm[:n_train]}
    test = {ids[k] for k in perm[n_train:]}

    if identities:
        counts: dict = {}
        for img in train:
            for ident in identities.get(img, ()):
                counts[ident] = counts.get(ident, 0) + 1
        everywhere = set()
        for img in ids:
            everywhere.update(identities.get(img, ()))
        for ident in sorted(everywhere - set(counts), key=str):
            candidates = sorted((img for img in test if ident in identities.get(img, ())),
                                key=str)
            swapped = False
            for incoming in candidates:
                for outgoing in sorted(train, key=str):
                    safe = all(
                        counts.get(t, 0) >= 2 or t in identities.get(incoming, ())
                        for t in identities.get(outgoing, ())
                    )
                    if safe:
                        train.remove(outgoing)
                        test.add(outgoing)
                        test.remove(incoming)
                        train.add(incoming)
                        for t in identities.get(outgoing, ()):
                            counts[t] -= 1
                        for t in identities.get(incoming, ()):
                            counts[t] = counts.get(t, 0) + 1
                        swapped = True
                        break
                if swapped:
                    break
    order = {img: k for k, img in enumerate(ids)}
    return (sorted(train, key=order.get), sorted(test, key=order.get))


@dataclass(frozen=True)
class ImageAnnotations:
    """One composed image plus its per-person records, ready to serialize."""

    file_name: str
    width: int
    height: int
    records: tuple[AnnotationRecord, ...]
    identities: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "identities",
                           frozenset(r.identity_id for r in self.records))


def _validate_record(record: AnnotationRecord, width: int, height: int) -> None:
    x, y, w, h = record.bbox
    if not (0 <= x and 0 <= y and w >= 1 and h >= 1 and x + w <= width and y + h <= height):
        raise InvariantViolation(f"bbox {record.bbox} outside {width}x{height} image")
    if len(record.keypoints) != JOINT_COUNT:
        raise InvariantViolation(f"expected {JOINT_COUNT} keypoints, got {len(record.keypoints)}")
    labeled = 0
    for u, v, vis in record.keypoints:
        if vis not in (0, 1, 2):
            raise InvariantViolation(f"bad visibility {vis}")
        if vis > 0:
            labeled += 1
        if vis == 2 and not (x - 2 <= u <= x + w + 2 and y - 2 <= v <= y + h + 2):
            raise InvariantViolation(f"visible keypoint ({u}, {v}) outside dilated bbox")
    if labeled != record.num_keypoints:
        raise InvariantViolation(
            f"num_keypoints {record.num_keypoints} != {labeled} labeled flags"
        )
    if record.area < 1:
        raise InvariantViolation("area must be >= 1")
    if record.face_bbox is not None:
        fx, fy, fw, fh = record.face_bbox
        if not (0 <= fx and 0 <= fy and fw > 0 and fh > 0
                and fx + fw <= width and fy + fh <= height):
            raise InvariantViolation(f"face_bbox {record.face_bbox} outside image")


def coco_document(images) -> dict:
    """Build the COCO-keypoints document (plus identity/face extensions)."""
    doc = {
        "images": [],
        "annotations": [],
        "categories": [{
            "id": 1,
            "name": "person",
            "supercategory": "person",
            "keypoints": list(JOINT_NAMES),
            "skeleton": [list(edge) for edge in SKELETON_EDGES],
        }],
    }
    ann_id = 1
    for image_id, image in enumerate(images, start=1):
        doc["images"].append({
            "id": image_id,
            "file_name": image.file_name,
            "width": image.width,
            "height": image.height,
        })
        for record in image.records:
            _validate_record(record, image.width, image.height)
            flat = []
            for u, v, vis in record.keypoints:
                flat.extend([float(u), float(v), int(vis)])
            entry = {
                "id": ann_id,
                "image_id": image_id,
                "category_id": 1,
                "bbox": [int(c) for c in record.bbox],
                "area": int(record.area),
                "iscrowd": 0,
                "keypoints": flat,
                "num_keypoints": int(record.num_keypoints),
                "identity_id": record.identity_id,
            }
            if record.face_bbox is not None:
                entry["face_bbox"] = [float(c) for c in record.face_bbox]
            doc["annotations"].append(entry)
            ann_id += 1
    return doc


def write_coco(images, out_path: str) -> None:
    """Serialize annotations for a list of ImageAnnotations, byte-stable."""
    doc = coco_document(images)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


@dataclass
class GenerateReport:
    out_dir: str
    requested: int
    written: int
    failed: list = field(default_factory=list)        # (image index, reason)
    rejected_backgrounds: list = field(default_factory=list)
    train_size: int = 0
    test_size: int = 0


@dataclass
class _Assets:
    backgrounds: list          # (entry, image array, mask, resolved cfg)
    meshes: dict               # model index -> normalized Mesh
    skeletons: dict            # model index -> JointSet3D
    pool: list                 # ModelRef per model index
    identity: dict             # model index -> identity id


def _load_assets(manifest: DatasetManifest) -> tuple[_Assets, list]:
    usable, rejected = filter_backgrounds(manifest)
    backgrounds = []
    for entry in usable:
        image = load_png(entry.image_path)
        mask = load_segmask(entry.mask_path)
        if (mask.height, mask.width) != image.shape[:2]:
            rejected.append((entry, "mask size does not match image"))
            continue
        cfg = manifest.placement
        overrides = {}
        if entry.horizon_row is not None:
            overrides["horizon_row"] = entry.horizon_row
        if entry.camera_height is not None:
            overrides["camera_height"] = entry.camera_height
        if entry.focal is not None:
            overrides["focal"] = entry.focal
        if overrides:
            cfg = replace(cfg, **overrides)
        cfg = cfg.resolved_for(image.shape[1], image.shape[0])
        backgrounds.append((entry, image, mask, cfg))

    meshes: dict[int, Mesh] = {}
    skeletons: dict[int, JointSet3D] = {}
    pool = []
    identity = {}
    for index, entry in enumerate(manifest.models):
        mesh = normalize_mesh(orient_up(load_mesh(entry.mesh_path), entry.up_axis), 1.0)
        meshes[index] = mesh
        skeletons[index] = read_skeleton(entry.skeleton_path)
        size = compute_bounds(mesh).size
        pool.append(ModelRef(model_id=index, aspect=float(max(size[0], size[2]) / size[1])))
        identity[index] = entry.identity
    return _Assets(backgrounds, meshes, skeletons, pool, identity), rejected


def _compose_one(assets: _Assets, seed: int, index: int, overlay: bool = False):
    """Plan, render, composite, and annotate one image; pure given the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    bg_index = int(rng.integers(len(assets.backgrounds)))
    plan_seed = int(rng.integers(np.iinfo(np.int64).max))
    entry, bg_image, mask, cfg = assets.backgrounds[bg_index]
    plan = plan_scene(bg_index, mask, assets.pool, cfg, plan_seed)
    height, width = bg_image.shape[:2]
    template = CameraIntrinsics(cfg.focal, cfg.focal, width / 2, height / 2, width, height)
    sprites = [
        render_person_sprite(assets.meshes[p.model_id], assets.skeletons[p.model_id],
                             p.yaw, p.pixel_height, template)
        for p in plan.placements
    ]
    comp = composite_scene(bg_image, plan, sprites)
    records = annotate(plan, sprites, comp, identity_of=assets.identity.get)
    image = draw_overlay(comp.image, records, SKELETON_EDGES) if overlay else comp.image
    return image, records, comp


def generate(manifest: DatasetManifest, out_dir: str, seed: int | None = None,
             workers: int = 1, failure_budget: float = 0.1) -> GenerateReport:
    """Produce the full dataset: images, split COCO files, reproducibility record.

    Deterministic for a given (manifest, seed) regardless of worker count.
    Per-image failures are logged and skipped; the run aborts only when
    more than failure_budget of the requested images fail.
    """
    problems = validate_manifest(manifest)
    if problems:
        raise ManifestError("; ".join(problems))
    assets, rejected = _load_assets(manifest)
    if not assets.backgrounds:
        raise ManifestError("no usable backgrounds after filtering")
    seed = manifest.seed if seed is None else seed

    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "annotations"), exist_ok=True)

    def job(index: int):
        image, records, _ = _compose_one(assets, seed, index)
        file_name = f"images/img_{index:06d}.png"
        save_png(image, os.path.join(out_dir, file_name))
        return ImageAnnotations(file_name, image.shape[1], image.shape[0], tuple(records))

    results: dict[int, ImageAnnotations] = {}
    failures: list[tuple[int, str]] = []
    indices = range(manifest.image_count)
    if workers <= 1:
        for index in indices:
            try:
                results[index] = job(index)
            except Exception as exc:
                failures.append((index, f"{type(exc).__name__}: {exc}"))
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(job, index): index for index in indices}
            for future in concurrent.futures.as_completed(futures):
                index = futures[future]
                try:
                    results[index] = future.result()
                except Exception as exc:
                    failures.append((index, f"{type(exc).__name__}: {exc}"))
    failures.sort()
    if manifest.image_count and len(failures) > failure_budget * manifest.image_count:
        raise GenerationError(
            f"{len(failures)}/{manifest.image_count} images failed "
            f"(budget {failure_budget:.0%}); first: {failures[0][1]}"
        )

    ordered = [results[i] for i in sorted(results)]
    identities = {img.file_name: img.identities for img in ordered}
    train, test = split_dataset([img.file_name for img in ordered],
                                manifest.train_fraction, seed, identities)
    by_name = {img.file_name: img for img in ordered}
    write_coco([by_name[n] for n in train],
               os.path.join(out_dir, "annotations", "person_keypoints_train.json"))
    write_coco([by_name[n] for n in test],
               os.path.join(out_dir, "annotations", "person_keypoints_test.json"))

    manifest_hash = ""
    if manifest.source_path and os.path.exists(manifest.source_path):
        with open(manifest.source_path, "rb") as fh:
            manifest_hash = hashlib.sha256(fh.read()).hexdigest()
    record = {
        "tool_version": TOOL_VERSION,
        "manifest_sha256": manifest_hash,
        "seed": seed,
        "requested_images": manifest.image_count,
        "written_images": len(ordered),
        "failed_images": [{"index": i, "reason": r} for i, r in failures],
        "rejected_backgrounds": [
            {"image": e.image_path, "reason": reason} for e, reason in rejected
        ],
        "train_size": len(train),
        "test_size": len(test),
    }
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")

    return GenerateReport(
        out_dir=out_dir,
        requested=manifest.image_count,
        written=len(ordered),
        failed=failures,
        rejected_backgrounds=[(e.image_path, reason) for e, reason in rejected],
        train_size=len(train),
        test_size=len(test),
    )


def preview(manifest: DatasetManifest, out_dir: str, count: int = 5,
            seed: int | None = None) -> list[str]:
    """Emit a debug bundle for the first ``count`` image jobs.

    Per image: a keypoint/bbox overlay PNG plus the ownership map as an
    indexed PNG (pixel value k+1 = nearest person k, 0 = background).
    """
    problems = validate_manifest(manifest)
    if problems:
        raise ManifestError("; ".join(problems))
    assets, _ = _load_assets(manifest)
    if not assets.backgrounds:
        raise ManifestError("no usable backgrounds after filtering")
    seed = manifest.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for index in range(count):
        image, _, comp = _compose_one(assets, seed, index, overlay=True)
        path = os.path.join(out_dir, f"preview_{index:03d}.png")
        save_png(image, path)
        save_owner_png(comp.owner, os.path.join(out_dir, f"preview_{index:03d}_owner.png"))
        paths.append(path)
    return paths
