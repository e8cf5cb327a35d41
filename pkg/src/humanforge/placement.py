"""Where and how large human figures go in a background image.

Placement is driven by two inputs: a semantic segmentation mask (only
pixels of walkable classes, below the horizon, are eligible anchors) and
a flat-ground pinhole model tying a foot row to camera distance:

    Z = f * camera_height / (v_foot - horizon_row)
    pixel_height = person_height_m * (v_foot - horizon_row) / camera_height

Anchors live at pixel centers: mask pixel (row r, col c) is the point
(c + 0.5, r + 0.5). Planning is pure given a seed, so plans for different
backgrounds can be computed in parallel with independently derived seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image


class AboveHorizon(Exception):
    """Foot row at or above the horizon has no ground-plane solution."""


class NoValidRegion(Exception):
    """Mask offers no pixel where a figure may stand."""


class EmptyModelPool(Exception):
    """No models to place."""


@dataclass(frozen=True)
class SegMask:
    """Per-pixel integer class ids, same size as the paired background."""

    class_ids: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.class_ids)
        if arr.ndim != 2:
            raise ValueError(f"segmentation mask must be 2D, got shape {arr.shape}")
        object.__setattr__(self, "class_ids", arr.astype(np.int32))

    @property
    def height(self) -> int:
        return self.class_ids.shape[0]

    @property
    def width(self) -> int:
        return self.class_ids.shape[1]


def load_segmask(path: str) -> SegMask:
    """Read a single-channel PNG of class ids (palette or 8/16-bit gray)."""
    img = Image.open(path)
    if img.mode == "P":
        arr = np.asarray(img)
    elif img.mode in ("L", "I", "I;16"):
        arr = np.asarray(img.convert("I"))
    else:
        raise ValueError(f"{path}: expected a single-channel class-id PNG, got mode {img.mode}")
    return SegMask(arr)


@dataclass(frozen=True)
class HeightDistribution:
    """Truncated normal over person heights, in meters."""

    mean: float = 1.70
    std: float = 0.09
    min: float = 1.50
    max: float = 1.95

    def __post_init__(self):
        if not self.min <= self.max:
            raise ValueError("height bounds out of order")

    def sample(self, rng: np.random.Generator) -> float:
        for _ in range(1000):
            value = rng.normal(self.mean, self.std)
            if self.min <= value <= self.max:
                return float(value)
        return float(np.clip(self.mean, self.min, self.max))


@dataclass(frozen=True)
class PlacementConfig:
    """Classes, perspective calibration, and sampling caps for one scene.

    horizon_row and focal default to None, meaning "derive from the image"
    (0.45 * height and 0.9 * width); per-background manifest entries can
    override all three calibration numbers.
    """

    valid_class_ids: frozenset[int] = frozenset({7, 8})   # Cityscapes road, sidewalk
    person_class_ids: frozenset[int] = frozenset({24, 25})  # person, rider
    horizon_row: float | None = None
    camera_height: float = 1.5
    focal: float | None = None
    person_height: HeightDistribution = field(default_factory=HeightDistribution)
    persons_per_image: tuple[int, int] = (1, 4)
    min_anchor_separation: float = 24.0
    max_bbox_iou: float = 0.3
    min_pixel_height: float = 16.0
    max_pixel_height: float = float("inf")
    attempts_per_slot: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "valid_class_ids", frozenset(self.valid_class_ids))
        object.__setattr__(self, "person_class_ids", frozenset(self.person_class_ids))
        if self.horizon_row is not None and self.horizon_row < 0:
            raise ValueError("horizon_row must be >= 0")
        if self.camera_height <= 0:
            raise ValueError("camera_height must be positive")
        if not 0.0 <= self.max_bbox_iou <= 1.0:
            raise ValueError("max_bbox_iou must lie in [0, 1]")
        lo, hi = self.persons_per_image
        if not 0 <= lo <= hi:
            raise ValueError("persons_per_image range out of order")
        if not self.min_pixel_height <= self.max_pixel_height:
            raise ValueError("pixel height bounds out of order")

    def resolved_for(self, width: int, height: int) -> "PlacementConfig":
        """Fill image-derived defaults for one background size."""
        return replace(
            self,
            horizon_row=self.horizon_row if self.horizon_row is not None else 0.45 * height,
            focal=self.focal if self.focal is not None else 0.9 * width,
        )


def placement_config_from_dict(data: dict) -> PlacementConfig:
    """Build a PlacementConfig from a parsed TOML table."""
    kwargs = {}
    simple = (
        "horizon_row", "camera_height", "focal", "min_anchor_separation",
        "max_bbox_iou", "min_pixel_height", "max_pixel_height",
        "attempts_per_slot", "seed",
    )
    for key in simple:
        if key in data:
            kwargs[key] = data[key]
    if "valid_class_ids" in data:
        kwargs["valid_class_ids"] = frozenset(int(x) for x in data["valid_class_ids"])
    if "person_class_ids" in data:
        kwargs["person_class_ids"] = frozenset(int(x) for x in data["person_class_ids"])
    if "persons_per_image" in data:
        lo, hi = data["persons_per_image"]
        kwargs["persons_per_image"] = (int(lo), int(hi))
    if "person_height" in data:
        kwargs["person_height"] = HeightDistribution(**data["person_height"])
    return PlacementConfig(**kwargs)


@dataclass(frozen=True)
class Anchor:
    """Foot contact point in image coordinates (pixel centers)."""

    u: float
    v: float


@dataclass(frozen=True)
class ModelRef:
    """What planning needs to know about a pool model."""

    model_id: object
    aspect: float  # max horizontal extent / height of the normalized mesh


@dataclass(frozen=True)
class Placement:
    model_id: object
    anchor: Anchor
    person_height_m: float
    pixel_height: float
    distance: float  # implied camera distance Z, meters
    yaw: float

    def predicted_bbox(self, aspect: float) -> tuple[float, float, float, float]:
        """Planning-time bbox (x, y, w, h): bottom-centered on the anchor."""
        w = self.pixel_height * aspect
        return (self.anchor.u - w / 2.0, self.anchor.v - self.pixel_height,
                w, self.pixel_height)


@dataclass(frozen=True)
class PlacementPlan:
    """Chosen anchors, scales, and model assignments for one background.

    Placements are sorted far-to-near (decreasing distance); compositing
    relies on that order.
    """

    background_id: object
    placements: tuple[Placement, ...]
    seed: int
    requested_count: int

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(self.placements))


def valid_region(mask: SegMask, cfg: PlacementConfig) -> np.ndarray:
    """Boolean (H, W) map: class is walkable AND pixel center below horizon."""
    resolved = cfg.resolved_for(mask.width, mask.height)
    class_ok = np.isin(mask.class_ids, sorted(resolved.valid_class_ids))
    rows = np.arange(mask.height, dtype=np.float64) + 0.5
    below = rows > resolved.horizon_row
    return class_ok & below[:, None]


def has_person(mask: SegMask, cfg: PlacementConfig) -> bool:
    """True when any pixel carries a person-ish class."""
    return bool(np.isin(mask.class_ids, sorted(cfg.person_class_ids)).any())


def scale_at_row(cfg: PlacementConfig, v_foot: float, person_height_m: float,
                 f: float) -> tuple[float, float]:
    """Flat-ground scale law: returns (pixel_height, camera distance Z)."""
    if cfg.horizon_row is None:
        raise ValueError("config has no concrete horizon_row; call resolved_for first")
    drop = v_foot - cfg.horizon_row
    if drop <= 0:
        raise AboveHorizon(f"foot row {v_foot} at or above horizon {cfg.horizon_row}")
    distance = f * cfg.camera_height / drop
    pixel_height = person_height_m * drop / cfg.camera_height
    return float(pixel_height), float(distance)


def bbox_iou(a, b) -> float:
    """Intersection-over-union of two (x, y, w, h) boxes."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def plan_scene(background_id, mask: SegMask, model_pool, cfg: PlacementConfig,
               seed: int) -> PlacementPlan:
    """Rejection-sample a placement plan for one background.

    Draws a person count from the configured range, then per slot samples
    anchors uniformly over the valid region, models uniformly from the
    pool, heights from the truncated normal, and yaws uniformly in
    [0, 2pi). Candidates violating pixel-height bounds, anchor
    separation, or pairwise predicted-bbox IoU are retried up to
    attempts_per_slot times; slots that never fit are dropped (the plan
    records the requested count). Fully determined by (inputs, seed).
    """
    model_pool = list(model_pool)
    if not model_pool:
        raise EmptyModelPool("model pool is empty")
    resolved = cfg.resolved_for(mask.width, mask.height)
    region = valid_region(mask, resolved)
    candidates = np.argwhere(region)  # (n, 2) of (row, col), row-major order
    if len(candidates) == 0:
        raise NoValidRegion(f"background {background_id!r} has no valid placement pixel")

    rng = np.random.default_rng(seed)
    lo, hi = resolved.persons_per_image
    requested = int(rng.integers(lo, hi + 1))

    accepted: list[Placement] = []
    accepted_boxes: list[tuple[float, float, float, float]] = []
    for _ in range(requested):
        for _ in range(resolved.attempts_per_slot):
            row, col = candidates[int(rng.integers(len(candidates)))]
            anchor = Anchor(u=float(col) + 0.5, v=float(row) + 0.5)
            model = model_pool[int(rng.integers(len(model_pool)))]
            height_m = resolved.person_height.sample(rng)
            yaw = float(rng.uniform(0.0, 2.0 * np.pi))
            pixel_height, distance = scale_at_row(resolved, anchor.v, height_m, resolved.focal)
            if not resolved.min_pixel_height <= pixel_height <= resolved.max_pixel_height:
                continue
            candidate = Placement(model.model_id, anchor, height_m, pixel_height,
                                  distance, yaw)
            box = candidate.predicted_bbox(model.aspect)
            too_close = any(
                np.hypot(anchor.u - p.anchor.u, anchor.v - p.anchor.v)
                < resolved.min_anchor_separation
                for p in accepted
            )
            overlaps = any(bbox_iou(box, other) > resolved.max_bbox_iou
                           for other in accepted_boxes)
            if too_close or overlaps:
                continue
            accepted.append(candidate)
            accepted_boxes.append(box)
            break

    ordered = sorted(accepted, key=lambda p: (-p.distance, p.anchor.v, p.anchor.u))
    return PlacementPlan(background_id=background_id, placements=tuple(ordered),
                         seed=seed, requested_count=requested)
