"""Procedural demo assets: blocky people, marker meshes, street backdrops.

Nothing here ships in generated datasets; these builders exist so the
pipeline can be exercised end-to-end (tests, benchmarks, README walkthrough)
without external mesh or photo collections. People are low-poly box
figures in the canonical standing frame (height 1, feet at the origin,
up = -Y) with ground-truth joint positions to drive the synthetic
detectors and skeleton sidecars.
"""

from __future__ import annotations

import os

import numpy as np

from .mesh import Mesh
from .placement import SegMask
from .render import save_png
from .skeleton import JOINT_COUNT, JointEstimate, JointSet3D, write_skeleton
from .mesh import write_mesh

# Ground-truth joints for the blocky person, COCO order, canonical frame.
BLOCKY_JOINTS = np.array([
    [0.000, -0.940, 0.060],   # nose
    [0.025, -0.950, 0.055],   # left_eye
    [-0.025, -0.950, 0.055],  # right_eye
    [0.060, -0.930, 0.000],   # left_ear
    [-0.060, -0.930, 0.000],  # right_ear
    [0.140, -0.820, 0.000],   # left_shoulder
    [-0.140, -0.820, 0.000],  # right_shoulder
    [0.180, -0.700, 0.000],   # left_elbow
    [-0.180, -0.700, 0.000],  # right_elbow
    [0.180, -0.560, 0.000],   # left_wrist
    [-0.180, -0.560, 0.000],  # right_wrist
    [0.070, -0.500, 0.000],   # left_hip
    [-0.070, -0.500, 0.000],  # right_hip
    [0.070, -0.260, 0.000],   # left_knee
    [-0.070, -0.260, 0.000],  # right_knee
    [0.070, -0.040, 0.000],   # left_ankle
    [-0.070, -0.040, 0.000],  # right_ankle
])

_BOX_FACES = (
    (0, 1, 2), (0, 2, 3), (5, 4, 7), (5, 7, 6),
    (4, 0, 3), (4, 3, 7), (1, 5, 6), (1, 6, 2),
    (3, 2, 6), (3, 6, 7), (4, 5, 1), (4, 1, 0),
)


def _add_box(verts, tris, colors, lo, hi, color):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    base = len(verts)
    corners = [
        (lo[0], lo[1], lo[2]), (hi[0], lo[1], lo[2]),
        (hi[0], hi[1], lo[2]), (lo[0], hi[1], lo[2]),
        (lo[0], lo[1], hi[2]), (hi[0], lo[1], hi[2]),
        (hi[0], hi[1], hi[2]), (lo[0], hi[1], hi[2]),
    ]
    verts.extend(corners)
    colors.extend([color] * 8)
    tris.extend([(base + a, base + b, base + c) for a, b, c in _BOX_FACES])


def blocky_person(identity: int = 0) -> tuple[Mesh, np.ndarray]:
    """A box-figure human of height 1 plus its 17 ground-truth joints.

    Colors (skin/shirt/pants) vary deterministically with the identity so
    different "people" are visually distinct.
    """
    rng = np.random.default_rng(10_000 + identity)
    skin = np.array([0.85, 0.70, 0.55]) * rng.uniform(0.75, 1.1)
    shirt = rng.uniform(0.15, 0.9, size=3)
    pants = rng.uniform(0.1, 0.6, size=3)
    shoes = np.array([0.15, 0.12, 0.10])
    skin = np.clip(skin, 0.0, 1.0)

    verts: list = []
    tris: list = []
    colors: list = []
    _add_box(verts, tris, colors, (-0.060, -1.000, -0.060), (0.060, -0.850, 0.060), skin)
    _add_box(verts, tris, colors, (-0.140, -0.850, -0.060), (0.140, -0.500, 0.060), shirt)
    _add_box(verts, tris, colors, (0.140, -0.850, -0.040), (0.220, -0.550, 0.040), shirt * 0.9)
    _add_box(verts, tris, colors, (-0.220, -0.850, -0.040), (-0.140, -0.550, 0.040), shirt * 0.9)
    _add_box(verts, tris, colors, (0.020, -0.500, -0.050), (0.120, -0.060, 0.050), pants)
    _add_box(verts, tris, colors, (-0.120, -0.500, -0.050), (-0.020, -0.060, 0.050), pants)
    _add_box(verts, tris, colors, (0.015, -0.060, -0.070), (0.125, 0.000, 0.060), shoes)
    _add_box(verts, tris, colors, (-0.125, -0.060, -0.070), (-0.015, 0.000, 0.060), shoes)
    mesh = Mesh(vertices=np.asarray(verts), triangles=np.asarray(tris, dtype=np.int32),
                colors=np.clip(np.asarray(colors), 0.0, 1.0))
    return mesh, BLOCKY_JOINTS.copy()


# 17 well-separated marker colors (bytes); exact under unlit rendering.
MARKER_COLORS = (
    (255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0), (255, 0, 255),
    (0, 255, 255), (255, 128, 0), (128, 0, 255), (0, 128, 255), (128, 255, 0),
    (255, 0, 128), (0, 255, 128), (128, 64, 0), (64, 0, 128), (0, 64, 128),
    (192, 192, 192), (64, 64, 64),
)


def marker_mesh(joints, radius: float = 0.02) -> Mesh:
    """Octahedral markers of unique flat colors centered on each joint.

    Rendered unlit, every covered pixel carries its marker's exact color
    bytes, so a color-matching detector can localize markers precisely.
    """
    joints = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    if len(joints) != JOINT_COUNT:
        raise ValueError(f"expected {JOINT_COUNT} joints, got {len(joints)}")
    offsets = radius * np.array([
        [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
    ], dtype=np.float64)
    faces = ((0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4),
             (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5))
    verts, tris, colors = [], [], []
    for joint_id, center in enumerate(joints):
        base = len(verts)
        color = np.array(MARKER_COLORS[joint_id], dtype=np.float64) / 255.0
        verts.extend(center + offsets)
        colors.extend([color] * 6)
        tris.extend([(base + a, base + b, base + c) for a, b, c in faces])
    return Mesh(vertices=np.asarray(verts), triangles=np.asarray(tris, dtype=np.int32),
                colors=np.asarray(colors))


class MarkerDetector:
    """Finds marker centroids by exact color match in rendered views."""

    needs_image = True

    def detect(self, image, intr=None, pose=None):
        from .skeleton import Detection2D

        rgba = image.rgba if hasattr(image, "rgba") else np.asarray(image)
        rgb = rgba[..., :3]
        alpha = rgba[..., 3] if rgba.shape[2] == 4 else None
        detections = []
        for joint_id, color in enumerate(MARKER_COLORS):
            match = np.all(rgb == np.array(color, dtype=np.uint8), axis=-1)
            if alpha is not None:
                match &= alpha > 0
            if not match.any():
                continue
            ys, xs = np.nonzero(match)
            detections.append(Detection2D(joint_id, float(xs.mean() + 0.5),
                                          float(ys.mean() + 0.5), 1.0))
        return detections


# Cityscapes-style label ids used by the demo masks.
CLASS_ROAD = 7
CLASS_SIDEWALK = 8
CLASS_BUILDING = 11
CLASS_SKY = 23
CLASS_PERSON = 24


def street_scene(width: int, height: int, seed: int = 0,
                 with_person: bool = False) -> tuple[np.ndarray, SegMask]:
    """A synthetic street photo plus a matching class-id segmentation mask.

    Sky above the horizon, buildings just under it, a road filling the
    lower part with sidewalk bands at both edges. with_person stamps a
    person-class blob into the mask (and a dark figure into the image) so
    background filtering has something to reject.
    """
    rng = np.random.default_rng(seed)
    horizon = int(0.45 * height)
    building_top = int(0.18 * height)
    side = int(0.14 * width)

    mask = np.full((height, width), CLASS_SKY, dtype=np.int32)
    mask[building_top:horizon, :] = CLASS_BUILDING
    mask[horizon:, :] = CLASS_ROAD
    mask[horizon:, :side] = CLASS_SIDEWALK
    mask[horizon:, width - side:] = CLASS_SIDEWALK

    image = np.zeros((height, width, 3), dtype=np.float64)
    sky_t = np.linspace(0.0, 1.0, horizon)[:, None]
    image[:horizon] = (1 - sky_t[..., None]) * np.array([120, 160, 220]) \
        + sky_t[..., None] * np.array([190, 210, 235])
    building = 90 + 50 * rng.random((horizon - building_top, width, 1))
    image[building_top:horizon] = building * np.array([1.0, 0.95, 0.9])
    road = 70 + 18 * rng.random((height - horizon, width, 1))
    image[horizon:] = road
    image[horizon:, :side] = road[:, :side] * np.array([1.35, 1.3, 1.2])
    image[horizon:, width - side:] = road[:, width - side:] * np.array([1.35, 1.3, 1.2])
    center = width // 2
    image[horizon::6, center - 2:center + 2] = np.array([200, 200, 190])

    if with_person:
        pw, ph = max(6, width // 40), max(14, height // 10)
        px = int(rng.integers(side, width - side - pw))
        py = int(rng.integers(horizon + 4, height - ph))
        mask[py:py + ph, px:px + pw] = CLASS_PERSON
        image[py:py + ph, px:px + pw] = np.array([40, 35, 60])

    return np.clip(image, 0, 255).astype(np.uint8), SegMask(mask)


def save_segmask_png(mask: SegMask, path: str) -> None:
    from PIL import Image

    arr = mask.class_ids
    if arr.max() > 255:
        raise ValueError("demo masks only cover 8-bit class ids")
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def exact_skeleton(joints, views: int = 24) -> JointSet3D:
    """Sidecar-style joint set from known ground-truth positions."""
    return JointSet3D([JointEstimate(position=j, residual=0.0, views=views)
                       for j in np.asarray(joints, dtype=np.float64)])


def write_demo_dataset(root: str, n_backgrounds: int = 5, n_models: int = 5,
                       width: int = 640, height: int = 480, image_count: int = 50,
                       seed: int = 7, persons_per_image=(1, 4)) -> str:
    """Materialize a self-contained demo dataset tree; returns the manifest path.

    Writes blocky-person OBJs with exact skeleton sidecars, synthetic
    street backgrounds with masks, and a manifest wired to them.
    """
    os.makedirs(os.path.join(root, "models"), exist_ok=True)
    os.makedirs(os.path.join(root, "backgrounds"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)

    model_lines = []
    for k in range(n_models):
        mesh, joints = blocky_person(identity=k)
        mesh_rel = f"models/person_{k:02d}.obj"
        write_mesh(mesh, os.path.join(root, mesh_rel))
        write_skeleton(exact_skeleton(joints),
                       os.path.join(root, f"models/person_{k:02d}.skeleton.json"))
        model_lines.append(
            f'[[models]]\nmesh = "{mesh_rel}"\nidentity = {k + 1}\nup_axis = "-y"\n'
        )

    background_lines = []
    for k in range(n_backgrounds):
        image, mask = street_scene(width, height, seed=seed * 1000 + k)
        image_rel = f"backgrounds/bg_{k:02d}.png"
        mask_rel = f"masks/bg_{k:02d}.png"
        save_png(image, os.path.join(root, image_rel))
        save_segmask_png(mask, os.path.join(root, mask_rel))
        background_lines.append(f'[[backgrounds]]\nimage = "{image_rel}"\nmask = "{mask_rel}"\n')

    manifest = os.path.join(root, "manifest.toml")
    max_px = int(0.9 * height)
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write(
            "[dataset]\n"
            f"seed = {seed}\n"
            f"image_count = {image_count}\n"
            "train_fraction = 0.8\n\n"
            "[placement]\n"
            f"valid_class_ids = [{CLASS_ROAD}, {CLASS_SIDEWALK}]\n"
            f"person_class_ids = [{CLASS_PERSON}]\n"
            "camera_height = 1.5\n"
            f"persons_per_image = [{persons_per_image[0]}, {persons_per_image[1]}]\n"
            "min_anchor_separation = 24.0\n"
            "max_bbox_iou = 0.3\n"
            "min_pixel_height = 24.0\n"
            f"max_pixel_height = {max_px}.0\n\n"
        )
        fh.write("\n".join(background_lines))
        fh.write("\n")
        fh.write("\n".join(model_lines))
    return manifest
