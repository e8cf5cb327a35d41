"""humanforge: synthetic human-centric dataset generation.

Two halves: (1) recover approximate 3D skeletons from rigid textured human
meshes by rendering them from many views, detecting 2D keypoints, and
triangulating rays; (2) composite those meshes into real, semantically
segmented background images at perspective-consistent positions and
scales, emitting COCO-style annotations for detection, pose, and face
tasks.
"""

__version__ = "0.1.0"

from .geometry import (
    BehindCamera,
    CameraIntrinsics,
    CameraPose,
    DegenerateConfiguration,
    Ray,
    TooFewRays,
    camera_to_world,
    nearest_point_to_lines,
    project,
    unproject,
    world_to_camera,
)
from .mesh import (
    Aabb,
    DegenerateMesh,
    Mesh,
    ParseError,
    ValidationError,
    compute_bounds,
    load_mesh,
    normalize_mesh,
    orient_up,
    validate_mesh,
    write_mesh,
)
from .render import (
    Framebuffer,
    RenderConfig,
    composite_over,
    load_png,
    read_depth,
    render_mesh,
    save_png,
    write_depth,
)
from .skeleton import (
    AllViewsFailed,
    Detection2D,
    DetectorTimeout,
    ExternalDetector,
    JointEstimate,
    JointSet3D,
    OracleDetector,
    ProtocolError,
    SkeletonConfig,
    SpawnError,
    ViewRig,
    estimate_skeleton,
    external_detect,
    make_default_rig,
    make_ring_rig,
    oracle_detect,
    read_skeleton,
    write_skeleton,
)
from .placement import (
    AboveHorizon,
    Anchor,
    EmptyModelPool,
    HeightDistribution,
    ModelRef,
    NoValidRegion,
    Placement,
    PlacementConfig,
    PlacementPlan,
    SegMask,
    has_person,
    load_segmask,
    plan_scene,
    scale_at_row,
    valid_region,
)
from .compose import (
    AnnotationRecord,
    CompositeResult,
    PersonSprite,
    annotate,
    composite_scene,
    render_person_sprite,
)
from .dataset import (
    DatasetManifest,
    GenerationError,
    InvariantViolation,
    ManifestError,
    filter_backgrounds,
    generate,
    load_manifest,
    split_dataset,
    validate_manifest,
    write_coco,
)
