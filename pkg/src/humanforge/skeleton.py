"""Multi-view skeleton recovery for rigid human meshes.

The estimation loop renders a mesh from a ring of virtual cameras, runs a
pluggable 2D keypoint detector on each view, unprojects surviving
detections through the near/far planes, and triangulates every joint as
the least-squares nearest point to its ray bundle. One robust pass drops
rays far from the initial solution (median-based) and re-solves; the
recorded residual never increases.

Detectors implement ``detect(image, intr, pose) -> list[Detection2D]``.
Real detectors ignore the camera arguments; the synthetic oracle uses
them to project ground-truth joints. A detector with ``needs_image =
False`` skips rendering entirely.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    BehindCamera,
    DegenerateConfiguration,
    nearest_point_to_lines,
    project,
    unproject,
)
from .mesh import Mesh, compute_bounds
from .render import Framebuffer, RenderConfig, render_mesh, save_png

JOINT_COUNT = 17

JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# COCO person-category edge list (1-based joint ids)
SKELETON_EDGES = (
    (16, 14), (14, 12), (17, 15), (15, 13), (12, 13), (6, 12), (7, 13),
    (6, 7), (6, 8), (7, 9), (8, 10), (9, 11), (2, 3), (1, 2), (1, 3),
    (2, 4), (3, 5), (4, 6), (5, 7),
)

HEAD_JOINT_IDS = (0, 1, 2, 3, 4)  # nose, eyes, ears


class AllViewsFailed(Exception):
    """Fewer than two views produced usable detections."""


class SpawnError(Exception):
    """External detector could not be launched or exited with an error."""


class ProtocolError(Exception):
    """External detector wrote a malformed keypoint exchange file."""


class DetectorTimeout(Exception):
    """External detector exceeded its time budget."""


@dataclass(frozen=True)
class Detection2D:
    joint_id: int
    u: float
    v: float
    confidence: float

    def __post_init__(self):
        if not 0 <= self.joint_id < JOINT_COUNT:
            raise ValueError(f"joint_id {self.joint_id} outside [0, {JOINT_COUNT})")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ViewRig:
    """N camera poses sharing one set of intrinsics."""

    poses: tuple[CameraPose, ...]
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) < 2:
            raise ValueError(f"rig needs >= 2 views, got {len(self.poses)}")
        seen = set()
        for pose in self.poses:
            key = (tuple(pose.position), tuple(pose.orientation))
            if key in seen:
                raise ValueError("rig poses must be pairwise distinct")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.poses)


@dataclass(frozen=True)
class JointEstimate:
    """One triangulated joint; position None means unresolved."""

    position: np.ndarray | None
    residual: float | None
    views: int

    def __post_init__(self):
        if self.position is not None:
            object.__setattr__(self, "position",
                               np.asarray(self.position, dtype=np.float64).reshape(3))
            if self.views < 2 or self.residual is None or not np.isfinite(self.residual):
                raise ValueError("resolved joint needs >= 2 views and a finite residual")

    @property
    def resolved(self) -> bool:
        return self.position is not None


class JointSet3D:
    """The 17 per-joint estimates in COCO keypoint order."""

    def __init__(self, joints):
        joints = list(joints)
        if len(joints) != JOINT_COUNT:
            raise ValueError(f"expected {JOINT_COUNT} joints, got {len(joints)}")
        self.joints = joints

    def __getitem__(self, i) -> JointEstimate:
        return self.joints[i]

    def __iter__(self):
        return iter(self.joints)

    def __len__(self) -> int:
        return JOINT_COUNT

    @property
    def resolved_count(self) -> int:
        return sum(1 for j in self.joints if j.resolved)

    def positions(self) -> list[np.ndarray | None]:
        return [j.position for j in self.joints]


@dataclass(frozen=True)
class SkeletonConfig:
    """Ring-rig layout plus detection filtering knobs.

    Filtering is an extension over the bare triangulation recipe: real
    detectors produce cross-view outliers, and the median-based pass is
    cheap and strictly residual-reducing. Disable with min_confidence=0,
    outlier_k=inf.
    """

    n_views: int = 24
    elevation: float = 0.0
    radius_scale: float = 1.5
    image_size: int = 512
    focal: float = 500.0
    min_confidence: float = 0.3
    outlier_k: float = 3.0
    render: RenderConfig = field(default_factory=RenderConfig)


def make_ring_rig(n_views: int, radius: float, target, elevation: float,
                  intr: CameraIntrinsics) -> ViewRig:
    """Cameras at equal azimuth steps on a circle, all aimed at ``target``.

    Elevation raises the ring above the target (canonical up is -Y). Each
    camera's optical axis passes exactly through the target, so the target
    projects to the principal point.
    """
    if n_views < 2:
        raise ValueError(f"n_views must be >= 2, got {n_views}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not -np.pi / 2 < elevation < np.pi / 2:
        raise ValueError("elevation must lie in (-pi/2, pi/2)")
    target = np.asarray(target, dtype=np.float64).reshape(3)
    poses = []
    cos_e, sin_e = np.cos(elevation), np.sin(elevation)
    for k in range(n_views):
        azimuth = 2.0 * np.pi * k / n_views
        offset = radius * np.array([cos_e * np.sin(azimuth), -sin_e, cos_e * np.cos(azimuth)])
        yaw = np.arctan2(-np.sin(azimuth), -np.cos(azimuth))
        poses.append(CameraPose(position=target + offset,
                                orientation=np.array([0.0, -elevation, yaw])))
    return ViewRig(poses=tuple(poses), intrinsics=intr)


def make_default_rig(mesh: Mesh, cfg: SkeletonConfig = SkeletonConfig()) -> ViewRig:
    """Ring rig sized from mesh bounds so the body fills most of the frame."""
    bounds = compute_bounds(mesh)
    height = float(bounds.size[1])
    intr = CameraIntrinsics(cfg.focal, cfg.focal, cfg.image_size / 2, cfg.image_size / 2,
                            cfg.image_size, cfg.image_size)
    return make_ring_rig(cfg.n_views, cfg.radius_scale * max(height, 1e-6),
                         bounds.center, cfg.elevation, intr)


def dedupe_detections(detections) -> list[Detection2D]:
    """Keep at most one detection per joint id, preferring higher confidence."""
    best: dict[int, Detection2D] = {}
    for det in detections:
        kept = best.get(det.joint_id)
        if kept is None or det.confidence > kept.confidence:
            best[det.joint_id] = det
    return [best[j] for j in sorted(best)]


def estimate_skeleton(mesh: Mesh, rig: ViewRig, detector,
                      cfg: SkeletonConfig = SkeletonConfig()) -> JointSet3D:
    """Run the full multi-view chain: render, detect, unproject, triangulate.

    A view whose render or detection raises is skipped; if fewer than two
    views survive, AllViewsFailed is raised. Joints observed in fewer than
    two views stay unresolved.
    """
    needs_image = getattr(detector, "needs_image", True)
    rays_per_joint: list[list] = [[] for _ in range(JOINT_COUNT)]
    usable_views = 0
    for view_index, pose in enumerate(rig.poses):
        try:
            image = render_mesh(mesh, rig.intrinsics, pose, cfg.render) if needs_image else None
            detections = detector.detect(image, rig.intrinsics, pose)
        except Exception:  # failed view: skip, keep going
            continue
        usable_views += 1
        for det in dedupe_detections(detections):
            if det.confidence < cfg.min_confidence:
                continue
            ray = unproject(rig.intrinsics, pose, det.u, det.v)
            rays_per_joint[det.joint_id].append((view_index, ray))
    if usable_views < 2:
        raise AllViewsFailed(f"only {usable_views} of {len(rig)} views usable")

    joints = []
    for joint_id in range(JOINT_COUNT):
        entries = sorted(rays_per_joint[joint_id], key=lambda item: item[0])
        rays = [ray for _, ray in entries]
        if len(rays) < 2:
            joints.append(JointEstimate(None, None, len(rays)))
            continue
        try:
            point, rms = nearest_point_to_lines(rays)
        except DegenerateConfiguration:
            joints.append(JointEstimate(None, None, len(rays)))
            continue
        if np.isfinite(cfg.outlier_k):
            distances = np.array([ray.distance_to(point) for ray in rays])
            cutoff = cfg.outlier_k * float(np.median(distances))
            kept = [ray for ray, d in zip(rays, distances) if d <= cutoff]
            if 2 <= len(kept) < len(rays):
                try:
                    point2, rms2 = nearest_point_to_lines(kept)
                    if rms2 <= rms:
                        point, rms, rays = point2, rms2, kept
                except DegenerateConfiguration:
                    pass
        joints.append(JointEstimate(point, rms, len(rays)))
    return JointSet3D(joints)


def oracle_detect(gt_joints, intr: CameraIntrinsics, pose: CameraPose,
                  noise_sigma: float = 0.0, drop_prob: float = 0.0,
                  seed=0) -> list[Detection2D]:
    """Synthetic detector: project ground-truth joints with optional noise.

    Each joint is projected through the real camera model, perturbed by
    isotropic Gaussian pixel noise, and independently dropped with
    probability drop_prob. Joints behind the camera are culled. Fully
    deterministic for a fixed seed; pass a Generator to share a stream
    across calls.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    gt_joints = np.asarray(gt_joints, dtype=np.float64).reshape(-1, 3)
    detections = []
    for joint_id, joint in enumerate(gt_joints):
        try:
            u, v, _ = project(intr, pose, joint)
        except BehindCamera:
            continue
        noise = rng.normal(0.0, noise_sigma, size=2) if noise_sigma > 0 else np.zeros(2)
        dropped = drop_prob > 0 and rng.random() < drop_prob
        if dropped:
            continue
        detections.append(Detection2D(joint_id, float(u + noise[0]), float(v + noise[1]), 1.0))
    return detections


class OracleDetector:
    """Ground-truth-backed detector plugin; bypasses rendering.

    Per-view noise streams are derived by hashing (seed, camera pose), so
    results do not depend on the order views are processed in.
    """

    needs_image = False

    def __init__(self, gt_joints, noise_sigma: float = 0.0, drop_prob: float = 0.0,
                 seed: int = 0):
        self.gt_joints = np.asarray(gt_joints, dtype=np.float64).reshape(-1, 3)
        self.noise_sigma = noise_sigma
        self.drop_prob = drop_prob
        self.seed = seed

    def detect(self, image, intr: CameraIntrinsics, pose: CameraPose) -> list[Detection2D]:
        digest = hashlib.sha256(
            np.int64(self.seed).tobytes()
            + pose.position.tobytes()
            + pose.orientation.tobytes()
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return oracle_detect(self.gt_joints, intr, pose,
                             self.noise_sigma, self.drop_prob, rng)


def parse_exchange_text(text: str, source: str = "<exchange>") -> list[Detection2D]:
    """Parse the keypoint exchange format: ``joint_id u v confidence`` lines.

    '#' starts a comment. Duplicate joint ids keep the highest confidence.
    Raises ProtocolError with the offending line on any malformed entry.
    """
    detections = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ProtocolError(f"{source}:{lineno}: expected 'joint_id u v confidence', got {raw!r}")
        try:
            joint_id = int(parts[0])
            u, v, conf = float(parts[1]), float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise ProtocolError(f"{source}:{lineno}: bad number in {raw!r}") from exc
        if not 0 <= joint_id < JOINT_COUNT:
            raise ProtocolError(f"{source}:{lineno}: joint_id {joint_id} outside [0, {JOINT_COUNT})")
        if not (np.isfinite(u) and np.isfinite(v)):
            raise ProtocolError(f"{source}:{lineno}: non-finite coordinates in {raw!r}")
        if not 0.0 <= conf <= 1.0:
            raise ProtocolError(f"{source}:{lineno}: confidence {conf} outside [0, 1]")
        detections.append(Detection2D(joint_id, u, v, conf))
    return dedupe_detections(detections)


def external_detect(command, image_path: str, timeout: float = 60.0) -> list[Detection2D]:
    """Invoke an out-of-process detector on an image file.

    The detector command receives the exchange file path as its single
    argument and the image path in the HFORGE_IMAGE environment variable;
    it must write detections to the exchange file before exiting 0.
    """
    args = shlex.split(command) if isinstance(command, str) else list(command)
    env = dict(os.environ, HFORGE_IMAGE=str(image_path))
    with tempfile.TemporaryDirectory(prefix="hforge-detect-") as tmp:
        exchange = os.path.join(tmp, "keypoints.txt")
        try:
            proc = subprocess.run(args + [exchange], env=env, timeout=timeout,
                                  capture_output=True, text=True)
        except FileNotFoundError as exc:
            raise SpawnError(f"detector command not found: {args[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise DetectorTimeout(f"detector exceeded {timeout}s") from exc
        if proc.returncode != 0:
            raise SpawnError(
                f"detector exited with {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        if not os.path.exists(exchange):
            raise ProtocolError("detector exited 0 but wrote no exchange file")
        with open(exchange, "r", encoding="utf-8") as fh:
            return parse_exchange_text(fh.read(), source=exchange)


class ExternalDetector:
    """Subprocess detector bridge implementing the detector plugin protocol.

    Access is serialized with a lock unless the command is declared
    reentrant (safe to run concurrently).
    """

    needs_image = True

    def __init__(self, command, timeout: float = 60.0, reentrant: bool = False):
        self.command = command
        self.timeout = timeout
        self._lock = None if reentrant else threading.Lock()

    def detect(self, image, intr=None, pose=None) -> list[Detection2D]:
        with tempfile.TemporaryDirectory(prefix="hforge-view-") as tmp:
            image_path = os.path.join(tmp, "view.png")
            rgba = image.rgba if isinstance(image, Framebuffer) else np.asarray(image)
            save_png(rgba, image_path)
            if self._lock is None:
                return external_detect(self.command, image_path, self.timeout)
            with self._lock:
                return external_detect(self.command, image_path, self.timeout)


def skeleton_sidecar_path(mesh_path: str) -> str:
    """Conventional sidecar location: the mesh path with .skeleton.json."""
    stem, _ = os.path.splitext(mesh_path)
    return stem + ".skeleton.json"


def write_skeleton(joints: JointSet3D, path: str) -> None:
    """Persist joint estimates as the JSON sidecar (one entry per joint)."""
    entries = []
    for joint_id, est in enumerate(joints):
        entries.append({
            "joint_id": joint_id,
            "name": JOINT_NAMES[joint_id],
            "xyz": [float(x) for x in est.position] if est.resolved else None,
            "residual": float(est.residual) if est.residual is not None else None,
            "views": int(est.views),
        })
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")


def read_skeleton(path: str) -> JointSet3D:
    with open(path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or len(entries) != JOINT_COUNT:
        raise ValueError(f"{path}: expected a list of {JOINT_COUNT} joint entries")
    by_id = {int(e["joint_id"]): e for e in entries}
    joints = []
    for joint_id in range(JOINT_COUNT):
        entry = by_id.get(joint_id)
        if entry is None:
            raise ValueError(f"{path}: missing joint_id {joint_id}")
        xyz = entry.get("xyz")
        joints.append(JointEstimate(
            position=np.asarray(xyz, dtype=np.float64) if xyz is not None else None,
            residual=entry.get("residual"),
            views=int(entry.get("views", 0)),
        ))
    return JointSet3D(joints)
