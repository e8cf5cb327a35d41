"""Realize placement plans: sprites, depth-ordered compositing, annotations.

Each person is rendered as an RGBA+depth sprite from its own virtual
camera at the distance implied by its planned pixel height, then pasted
in 2D at its anchor. For non-interpenetrating figures this matches a
shared 3D render of the plane-plus-camera scene while allowing per-person
caching. Inter-person occlusion is resolved per pixel from sprite depth
buffers offset by each person's scene distance; the resulting "owned
pixels" map (nearest person per pixel) drives keypoint visibility.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import BehindCamera, CameraIntrinsics, CameraPose, project
from .mesh import Mesh, compute_bounds
from .placement import PlacementPlan
from .render import Framebuffer, RenderConfig, overlap_rects, render_mesh
from .skeleton import HEAD_JOINT_IDS, JOINT_COUNT, JointSet3D

# Slack around owned regions when classifying keypoint visibility; absorbs
# rasterization edge effects at silhouette boundaries.
VISIBILITY_DILATION_PX = 2


@dataclass
class PersonSprite:
    """One rendered person, plus everything needed to paste and annotate it.

    joints holds per-joint (u, v, camera depth) in sprite coordinates, or
    None where the skeleton was unresolved. anchor_offset and
    scene_distance are filled in during compositing.
    """

    frame: Framebuffer
    joints: list[tuple[float, float, float] | None]
    foot_uv: tuple[float, float]
    cam_distance: float
    intr: CameraIntrinsics | None = None
    pose: CameraPose | None = None
    anchor_offset: tuple[int, int] | None = None
    scene_distance: float | None = None


@dataclass(frozen=True)
class AnnotationRecord:
    """Per-person ground truth for one composed image.

    keypoints are 17 (u, v, visibility) triples in image coordinates,
    visibility 0 = unlabeled (unresolved joint or out of frame, coords
    zeroed), 1 = present but occluded, 2 = visible. area counts the
    person's in-frame alpha pixels; bbox is their tight bounding box.
    """

    person_id: int
    identity_id: object
    bbox: tuple[int, int, int, int]
    keypoints: tuple[tuple[float, float, int], ...]
    num_keypoints: int
    area: int
    face_bbox: tuple[float, float, float, float] | None = None


@dataclass
class CompositeResult:
    image: np.ndarray                      # (H, W, 3) uint8
    owner: np.ndarray                      # (H, W) int32, plan index or -1
    scene_depth: np.ndarray                # (H, W) float64, +inf where unowned
    clipped: tuple[int, ...] = field(default_factory=tuple)

    def owned_mask(self, person_index: int) -> np.ndarray:
        return self.owner == person_index


def _yaw_matrix(yaw: float) -> np.ndarray:
    # reduce first so yaw and yaw + 2*pi produce bitwise-identical sprites
    yaw = float(np.mod(yaw, 2.0 * np.pi))
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def render_person_sprite(mesh: Mesh, skeleton: JointSet3D, yaw: float,
                         pixel_height: float, intr_template: CameraIntrinsics,
                         render_cfg: RenderConfig = RenderConfig()) -> PersonSprite:
    """Render one person at a requested on-screen height.

    The mesh (already normalized: feet at the origin) is yawed about its
    vertical axis, then viewed head-on by a camera whose distance is
    solved so the projected vertex extent equals pixel_height; the
    rasterized alpha height then lands within a pixel of the request.
    Skeleton joints ride along and are projected into sprite coordinates;
    unresolved joints stay None.
    """
    if pixel_height < 1:
        raise ValueError(f"pixel_height must be >= 1, got {pixel_height}")
    rot = _yaw_matrix(yaw)
    turned = mesh.transformed(rotation=rot)
    bounds = compute_bounds(turned)
    body_height = float(bounds.size[1])
    mid_y = float(bounds.center[1])
    cam_x = float(bounds.center[0])
    fx, fy = intr_template.fx, intr_template.fy

    verts = turned.vertices
    # nearest body point must stay in front of the near plane
    z_floor = -float(verts[:, 2].min()) + 2.0 * intr_template.z_near
    distance = max(fy * body_height / pixel_height, z_floor)
    for _ in range(25):
        depths = verts[:, 2] + distance
        vs = fy * (verts[:, 1] - mid_y) / depths
        extent = float(vs.max() - vs.min())
        updated = max(distance * extent / pixel_height, z_floor)
        if abs(updated - distance) <= 1e-9 * distance:
            distance = updated
            break
        distance = updated

    depths = verts[:, 2] + distance
    us = fx * (verts[:, 0] - cam_x) / depths
    vs = fy * (verts[:, 1] - mid_y) / depths
    pad = 2
    width = int(np.ceil(us.max() - us.min())) + 2 * pad
    height = int(np.ceil(vs.max() - vs.min())) + 2 * pad
    intr = CameraIntrinsics(
        fx=fx, fy=fy,
        cx=pad - float(us.min()), cy=pad - float(vs.min()),
        width=width, height=height,
        z_near=min(intr_template.z_near, max(1e-3, 0.05 * distance)),
        z_far=max(intr_template.z_far, 4.0 * distance),
    )
    pose = CameraPose(position=np.array([cam_x, mid_y, -distance]))
    frame = render_mesh(turned, intr, pose, render_cfg)

    joints: list[tuple[float, float, float] | None] = []
    for est in skeleton:
        if not est.resolved:
            joints.append(None)
            continue
        try:
            joints.append(project(intr, pose, rot @ est.position))
        except BehindCamera:
            joints.append(None)
    foot = project(intr, pose, np.zeros(3))
    return PersonSprite(frame=frame, joints=joints, foot_uv=(foot[0], foot[1]),
                        cam_distance=distance, intr=intr, pose=pose)


def composite_scene(background: np.ndarray, plan: PlacementPlan,
                    sprites) -> CompositeResult:
    """Blend sprites over the background and resolve per-pixel ownership.

    Blending runs far-to-near regardless of the plan list's order (entries
    are re-sorted by a permutation-invariant key), so permuting the plan
    while keeping depths changes nothing. Sprites may clip at the frame
    edge; a fully-clipped person is dropped with a warning. Ownership at a
    pixel goes to the person with the smallest scene depth, where scene
    depth = sprite depth shifted from the sprite camera to the person's
    planned distance.
    """
    sprites = list(sprites)
    if len(sprites) != len(plan.placements):
        raise ValueError(
            f"{len(sprites)} sprites for {len(plan.placements)} placements"
        )
    background = np.asarray(background, dtype=np.uint8)
    h, w = background.shape[:2]
    image = background.copy()
    owner = np.full((h, w), -1, dtype=np.int32)
    scene_depth = np.full((h, w), np.inf, dtype=np.float64)
    clipped: list[int] = []

    order = sorted(
        range(len(sprites)),
        key=lambda i: (-plan.placements[i].distance, plan.placements[i].anchor.v,
                       plan.placements[i].anchor.u, str(plan.placements[i].model_id)),
    )
    for i in order:
        placement = plan.placements[i]
        sprite = sprites[i]
        offset = (int(round(placement.anchor.u - sprite.foot_uv[0])),
                  int(round(placement.anchor.v - sprite.foot_uv[1])))
        sprite.anchor_offset = offset
        sprite.scene_distance = placement.distance
        rects = overlap_rects((h, w), (sprite.frame.height, sprite.frame.width), offset)
        in_frame = False
        if rects is not None:
            dy0, dx0, sy0, sx0, ch, cw = rects
            alpha = sprite.frame.alpha[sy0:sy0 + ch, sx0:sx0 + cw] > 0
            in_frame = bool(alpha.any())
        if not in_frame:
            warnings.warn(f"person {i} fully outside the frame; dropped", stacklevel=2)
            clipped.append(i)
            continue
        depth_block = (sprite.frame.depth[sy0:sy0 + ch, sx0:sx0 + cw]
                       - sprite.cam_distance + placement.distance)
        owner_block = owner[dy0:dy0 + ch, dx0:dx0 + cw]
        scene_block = scene_depth[dy0:dy0 + ch, dx0:dx0 + cw]
        nearer = alpha & (depth_block < scene_block)
        owner_block[nearer] = i
        scene_block[nearer] = depth_block[nearer]

        # color blends back-to-front; painter's order matches the sort
        blended = _blend_region(image[dy0:dy0 + ch, dx0:dx0 + cw],
                                sprite.frame.rgba[sy0:sy0 + ch, sx0:sx0 + cw])
        image[dy0:dy0 + ch, dx0:dx0 + cw] = blended
    return CompositeResult(image=image, owner=owner, scene_depth=scene_depth,
                           clipped=tuple(clipped))


def _blend_region(dst_rgb: np.ndarray, src_rgba: np.ndarray) -> np.ndarray:
    a = src_rgba[..., 3:4].astype(np.float64) / 255.0
    out = np.rint(a * src_rgba[..., :3].astype(np.float64)
                  + (1.0 - a) * dst_rgb.astype(np.float64))
    return out.astype(np.uint8)


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Grow a boolean mask by city-block radius (matches a 2px Euclidean disk)."""
    out = mask.copy()
    for _ in range(radius):
        padded = np.pad(out, 1)
        out = (out
               | padded[:-2, 1:-1] | padded[2:, 1:-1]
               | padded[1:-1, :-2] | padded[1:-1, 2:])
    return out


FACE_BOX_EXPAND = 1.6


def annotate(plan: PlacementPlan, sprites, comp: CompositeResult,
             identity_of=None) -> list[AnnotationRecord]:
    """Produce per-person annotation records for one composed image.

    bbox is the tight bounds of the person's in-frame alpha support; a
    keypoint is visible (2) when its pixel falls in the person's owned
    region dilated by 2 px, occluded (1) when on-frame but owned by
    someone else, and unlabeled (0) when unresolved or out of frame.
    Persons with no in-frame alpha or no owned pixels are dropped.
    The face box is a square around the visible head keypoints expanded
    by 1.6x, absent when fewer than two head keypoints are labeled.
    """
    if identity_of is None:
        identity_of = lambda model_id: model_id  # noqa: E731
    h, w = comp.image.shape[:2]
    records: list[AnnotationRecord] = []
    for index, (placement, sprite) in enumerate(zip(plan.placements, sprites)):
        if index in comp.clipped:
            continue
        support = np.zeros((h, w), dtype=bool)
        rects = overlap_rects((h, w), (sprite.frame.height, sprite.frame.width),
                              sprite.anchor_offset)
        if rects is not None:
            dy0, dx0, sy0, sx0, ch, cw = rects
            support[dy0:dy0 + ch, dx0:dx0 + cw] = \
                sprite.frame.alpha[sy0:sy0 + ch, sx0:sx0 + cw] > 0
        if not support.any():
            continue
        owned = comp.owner == index
        if not owned.any():
            warnings.warn(f"person {index} fully occluded; dropped", stacklevel=2)
            continue
        rows = np.flatnonzero(support.any(axis=1))
        cols = np.flatnonzero(support.any(axis=0))
        bbox = (int(cols[0]), int(rows[0]),
                int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))
        area = int(support.sum())
        owned_near = dilate_mask(owned, VISIBILITY_DILATION_PX)

        keypoints: list[tuple[float, float, int]] = []
        for j in range(JOINT_COUNT):
            joint = sprite.joints[j]
            if joint is None:
                keypoints.append((0.0, 0.0, 0))
                continue
            u = joint[0] + sprite.anchor_offset[0]
            v = joint[1] + sprite.anchor_offset[1]
            if not (0.0 <= u < w and 0.0 <= v < h):
                keypoints.append((0.0, 0.0, 0))
                continue
            px = min(w - 1, max(0, int(round(u))))
            py = min(h - 1, max(0, int(round(v))))
            vis = 2 if owned_near[py, px] else 1
            keypoints.append((float(u), float(v), vis))

        head = [(kpu, kpv) for jid in HEAD_JOINT_IDS
                for kpu, kpv, kvis in (keypoints[jid],) if kvis > 0]
        face_bbox = None
        if len(head) >= 2:
            us = [p[0] for p in head]
            vs = [p[1] for p in head]
            side = FACE_BOX_EXPAND * max(max(us) - min(us), max(vs) - min(vs), 1.0)
            cx = (min(us) + max(us)) / 2.0
            cy = (min(vs) + max(vs)) / 2.0
            x0 = max(0.0, cx - side / 2.0)
            y0 = max(0.0, cy - side / 2.0)
            x1 = min(float(w), cx + side / 2.0)
            y1 = min(float(h), cy + side / 2.0)
            if x1 > x0 and y1 > y0:
                face_bbox = (x0, y0, x1 - x0, y1 - y0)

        records.append(AnnotationRecord(
            person_id=index,
            identity_id=identity_of(placement.model_id),
            bbox=bbox,
            keypoints=tuple(keypoints),
            num_keypoints=sum(1 for _, _, vis in keypoints if vis > 0),
            area=area,
            face_bbox=face_bbox,
        ))
    return records


_OVERLAY_PALETTE = (
    (230, 60, 60), (60, 160, 230), (240, 190, 40), (150, 90, 220),
    (60, 200, 120), (240, 120, 40), (90, 210, 210), (220, 100, 180),
)


def _draw_line(image, u0, v0, u1, v1, color):
    steps = int(max(abs(u1 - u0), abs(v1 - v0))) + 1
    us = np.rint(np.linspace(u0, u1, steps)).astype(int)
    vs = np.rint(np.linspace(v0, v1, steps)).astype(int)
    h, w = image.shape[:2]
    ok = (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
    image[vs[ok], us[ok]] = color


def _draw_rect(image, bbox, color):
    x, y, bw, bh = (int(round(c)) for c in bbox)
    _draw_line(image, x, y, x + bw - 1, y, color)
    _draw_line(image, x, y + bh - 1, x + bw - 1, y + bh - 1, color)
    _draw_line(image, x, y, x, y + bh - 1, color)
    _draw_line(image, x + bw - 1, y, x + bw - 1, y + bh - 1, color)


def save_owner_png(owner: np.ndarray, path: str) -> None:
    """Write an ownership map as an indexed PNG (0 = unowned, k = person k-1)."""
    from PIL import Image

    indexed = (np.clip(owner, -1, 254) + 1).astype(np.uint8)
    img = Image.fromarray(indexed, mode="P")
    palette = [0, 0, 0]
    for k in range(255):
        palette.extend(_OVERLAY_PALETTE[k % len(_OVERLAY_PALETTE)])
    img.putpalette(palette)
    img.save(path)


def draw_overlay(image: np.ndarray, records, skeleton_edges) -> np.ndarray:
    """Preview rendering of annotations: boxes, skeleton edges, keypoints."""
    out = np.asarray(image, dtype=np.uint8).copy()
    h, w = out.shape[:2]
    for record in records:
        color = _OVERLAY_PALETTE[record.person_id % len(_OVERLAY_PALETTE)]
        _draw_rect(out, record.bbox, color)
        if record.face_bbox is not None:
            _draw_rect(out, record.face_bbox, (255, 255, 255))
        for a, b in skeleton_edges:
            ka, kb = record.keypoints[a - 1], record.keypoints[b - 1]
            if ka[2] > 0 and kb[2] > 0:
                _draw_line(out, ka[0], ka[1], kb[0], kb[1], color)
        for u, v, vis in record.keypoints:
            if vis == 0:
                continue
            dot = (60, 230, 60) if vis == 2 else (240, 170, 40)
            py, px = int(round(v)), int(round(u))
            out[max(0, py - 1):min(h, py + 2), max(0, px - 1):min(w, px + 2)] = dot
    return out
