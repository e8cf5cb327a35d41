"""Textured triangle mesh loading, validation, and normalization.

Supported interchange format is Wavefront OBJ with either per-vertex RGB
colors (extra floats on ``v`` lines, the common export for reconstructed
human meshes) or per-vertex UVs plus a PNG texture referenced through an
MTL file. Reconstructed meshes are messy: zero-area triangles and
non-manifold edges are kept but surfaced in a validation report.

Canonical "standing" frame (world is +Y-down, see geometry module):
after normalization the body's lowest point sits at Y = 0, the body
extends into negative Y, and the horizontal bounds are centered on the
origin. ``orient_up`` maps a file's up axis into this frame first.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image


class ParseError(Exception):
    """Malformed mesh file; message carries the file and line number."""


class ValidationError(Exception):
    """Structurally invalid mesh (bad index, NaN vertex, attribute mismatch)."""


class DegenerateMesh(Exception):
    """Mesh has no usable vertical extent."""


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", np.asarray(self.min, dtype=np.float64).reshape(3))
        object.__setattr__(self, "max", np.asarray(self.max, dtype=np.float64).reshape(3))
        if np.any(self.min > self.max):
            raise ValueError("Aabb min must be <= max component-wise")

    @property
    def size(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) / 2.0


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh.

    vertices: (N, 3) float64. triangles: (M, 3) int32 indices into vertices.
    Exactly one appearance channel is expected for rendering: per-vertex
    ``colors`` (RGB in [0, 1]) or per-vertex ``uvs`` plus a ``texture``
    ((H, W, 3) uint8). Meshes with neither render as flat gray.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray | None = None
    uvs: np.ndarray | None = None
    texture: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if verts.size and not np.all(np.isfinite(verts)):
            raise ValidationError("mesh has non-finite vertex coordinates")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValidationError(
                f"triangle index out of range (vertex count {len(verts)})"
            )
        for name in ("colors", "uvs", "normals"):
            arr = getattr(self, name)
            if arr is None:
                continue
            width = 2 if name == "uvs" else 3
            arr = np.asarray(arr, dtype=np.float64).reshape(-1, width)
            if len(arr) != len(verts):
                raise ValidationError(f"{name} length {len(arr)} != vertex count {len(verts)}")
            object.__setattr__(self, name, arr)
        if self.colors is not None and np.any((self.colors < 0) | (self.colors > 1)):
            raise ValidationError("vertex colors must lie in [0, 1]")
        if self.colors is not None and self.texture is not None:
            raise ValidationError("mesh has both vertex colors and a texture; want exactly one")
        if self.texture is not None:
            tex = np.asarray(self.texture, dtype=np.uint8)
            if tex.ndim != 3 or tex.shape[2] != 3:
                raise ValidationError("texture must be (H, W, 3) uint8")
            if self.uvs is None:
                raise ValidationError("texture present but no per-vertex UVs")
            object.__setattr__(self, "texture", tex)

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "Mesh":
        """New mesh with vertices mapped by v -> R @ (scale * v) + t."""
        verts = self.vertices * scale
        normals = self.normals
        if rotation is not None:
            rotation = np.asarray(rotation, dtype=np.float64)
            verts = verts @ rotation.T
            if normals is not None:
                normals = normals @ rotation.T
        if translation is not None:
            verts = verts + np.asarray(translation, dtype=np.float64)
        return replace(self, vertices=verts, normals=normals)


@dataclass
class MeshReport:
    """Validation summary for one mesh; messy inputs are flagged, not fatal."""

    vertex_count: int
    triangle_count: int
    degenerate_triangles: int
    non_manifold_edges: int
    notes: list[str] = field(default_factory=list)

    def format(self) -> str:
        lines = [
            f"vertices: {self.vertex_count}",
            f"triangles: {self.triangle_count}",
            f"degenerate triangles: {self.degenerate_triangles}",
            f"non-manifold edges: {self.non_manifold_edges}",
        ]
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def _parse_floats(parts, n_min, n_max, path, lineno):
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise ParseError(f"{path}:{lineno}: bad number in '{' '.join(parts)}'") from exc
    if not (n_min <= len(values) <= n_max):
        raise ParseError(f"{path}:{lineno}: expected {n_min}..{n_max} numbers, got {len(values)}")
    return values


def _parse_face_corner(token, path, lineno):
    fields = token.split("/")
    if len(fields) > 3 or not fields[0]:
        raise ParseError(f"{path}:{lineno}: bad face corner '{token}'")
    try:
        vi = int(fields[0])
        ti = int(fields[1]) if len(fields) > 1 and fields[1] else None
        ni = int(fields[2]) if len(fields) > 2 and fields[2] else None
    except ValueError as exc:
        raise ParseError(f"{path}:{lineno}: bad face corner '{token}'") from exc
    return vi, ti, ni


def _load_mtl_texture(mtl_path):
    """Return {material name: texture image path} for map_Kd entries."""
    textures = {}
    current = None
    with open(mtl_path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "newmtl" and len(parts) > 1:
                current = parts[1]
            elif parts[0] == "map_Kd" and len(parts) > 1 and current is not None:
                textures[current] = parts[-1]
    return textures


def load_mesh(path: str) -> Mesh:
    """Load an OBJ mesh, preserving vertex order from the file.

    Per-vertex colors are read from 6-float ``v`` lines; UVs come from
    ``vt`` records resolved through face corners (a vertex referenced with
    conflicting UV indices is split, with the copy appended at the end).
    A texture is loaded when an MTL with map_Kd is referenced. Meshes with
    neither colors nor texture are given uniform gray vertex colors.
    """
    verts: list[list[float]] = []
    vcolors: list[list[float] | None] = []
    vts: list[list[float]] = []
    vns: list[list[float]] = []
    corners: list[tuple[int, tuple]] = []  # (lineno, (corner, corner, corner))
    mtl_textures: dict[str, str] = {}
    used_materials: list[str] = []

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                values = _parse_floats(parts[1:], 3, 7, path, lineno)
                verts.append(values[:3])
                vcolors.append(values[3:6] if len(values) >= 6 else None)
            elif tag == "vt":
                values = _parse_floats(parts[1:], 2, 3, path, lineno)
                vts.append(values[:2])
            elif tag == "vn":
                vns.append(_parse_floats(parts[1:], 3, 3, path, lineno))
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: face needs >= 3 corners")
                face = [_parse_face_corner(tok, path, lineno) for tok in parts[1:]]
                for k in range(1, len(face) - 1):  # fan-triangulate n-gons
                    corners.append((lineno, (face[0], face[k], face[k + 1])))
            elif tag == "mtllib" and len(parts) > 1:
                mtl_path = os.path.join(os.path.dirname(path), parts[-1])
                if os.path.exists(mtl_path):
                    mtl_textures.update(_load_mtl_texture(mtl_path))
            elif tag == "usemtl" and len(parts) > 1:
                used_materials.append(parts[1])
            # other records (o, g, s, ...) are ignored

    if not verts or not corners:
        raise ValidationError(f"{path}: mesh is empty (no vertices or faces)")

    has_colors = [c is not None for c in vcolors]
    if any(has_colors) and not all(has_colors):
        raise ValidationError(f"{path}: some vertices have colors and some do not")

    texture = None
    tex_paths = {mtl_textures[m] for m in used_materials if m in mtl_textures}
    if not used_materials and mtl_textures:
        tex_paths = {next(iter(mtl_textures.values()))}
    if len(tex_paths) > 1:
        raise ValidationError(f"{path}: multiple textures are not supported")
    if tex_paths:
        tex_file = os.path.join(os.path.dirname(path), next(iter(tex_paths)))
        texture = np.asarray(Image.open(tex_file).convert("RGB"), dtype=np.uint8)

    n_base = len(verts)
    positions = list(verts)
    colors = list(vcolors)
    uv_of_vertex: list[int | None] = [None] * n_base  # assigned vt index per vertex
    normal_of_vertex: list[int | None] = [None] * n_base
    split_cache: dict[tuple[int, int], int] = {}
    triangles = []

    def resolve(vi, ti, ni, lineno):
        if not (1 <= vi <= n_base):
            raise ValidationError(f"{path}:{lineno}: vertex index {vi} out of range 1..{n_base}")
        if ti is not None and not (1 <= ti <= len(vts)):
            raise ValidationError(f"{path}:{lineno}: uv index {ti} out of range 1..{len(vts)}")
        if ni is not None and not (1 <= ni <= len(vns)):
            raise ValidationError(f"{path}:{lineno}: normal index {ni} out of range 1..{len(vns)}")
        index = vi - 1
        if ti is not None:
            if uv_of_vertex[index] is None:
                uv_of_vertex[index] = ti - 1
            elif uv_of_vertex[index] != ti - 1:
                key = (index, ti - 1)
                if key not in split_cache:
                    positions.append(positions[index])
                    colors.append(colors[index])
                    uv_of_vertex.append(ti - 1)
                    normal_of_vertex.append(normal_of_vertex[index])
                    split_cache[key] = len(positions) - 1
                index = split_cache[key]
        if ni is not None and normal_of_vertex[index] is None:
            normal_of_vertex[index] = ni - 1
        return index

    for lineno, face in corners:
        triangles.append([resolve(vi, ti, ni, lineno) for vi, ti, ni in face])

    vertices = np.asarray(positions, dtype=np.float64)
    if not np.all(np.isfinite(vertices)):
        bad = int(np.argwhere(~np.isfinite(vertices))[0][0])
        raise ValidationError(f"{path}: vertex {bad + 1} has a non-finite coordinate")

    color_arr = None
    uv_arr = None
    if texture is not None:
        if any(has_colors):
            raise ValidationError(f"{path}: has both vertex colors and a texture")
        if any(t is None for t in uv_of_vertex):
            raise ValidationError(f"{path}: texture present but some vertices have no UV")
        uv_arr = np.asarray([vts[t] for t in uv_of_vertex], dtype=np.float64)
    elif all(has_colors):
        color_arr = np.asarray(colors, dtype=np.float64)
        if np.any((color_arr < 0) | (color_arr > 1)):
            raise ValidationError(f"{path}: vertex colors must lie in [0, 1]")
    else:
        # plain-geometry OBJ: keep it renderable with uniform gray
        color_arr = np.full((len(vertices), 3), 0.7)

    normal_arr = None
    if vns and all(n is not None for n in normal_of_vertex):
        normal_arr = np.asarray([vns[n] for n in normal_of_vertex], dtype=np.float64)

    return Mesh(
        vertices=vertices,
        triangles=np.asarray(triangles, dtype=np.int32),
        colors=color_arr,
        uvs=uv_arr,
        texture=texture,
        normals=normal_arr,
    )


def write_mesh(mesh: Mesh, path: str) -> None:
    """Write an OBJ (plus MTL and texture PNG when textured).

    Floats are written with shortest round-trip formatting so that
    load_mesh(write_mesh(m)) reproduces vertex data bit-for-bit.
    """
    stem = os.path.splitext(os.path.basename(path))[0]
    lines = []
    if mesh.texture is not None:
        mtl_name = f"{stem}.mtl"
        tex_name = f"{stem}_texture.png"
        directory = os.path.dirname(path)
        with open(os.path.join(directory, mtl_name), "w", encoding="utf-8") as fh:
            fh.write(f"newmtl material0\nmap_Kd {tex_name}\n")
        Image.fromarray(mesh.texture).save(os.path.join(directory, tex_name))
        lines.append(f"mtllib {mtl_name}")
        lines.append("usemtl material0")

    def fmt(x: float) -> str:
        return repr(float(x))

    for i, v in enumerate(mesh.vertices):
        if mesh.colors is not None:
            c = mesh.colors[i]
            lines.append(f"v {fmt(v[0])} {fmt(v[1])} {fmt(v[2])} {fmt(c[0])} {fmt(c[1])} {fmt(c[2])}")
        else:
            lines.append(f"v {fmt(v[0])} {fmt(v[1])} {fmt(v[2])}")
    if mesh.uvs is not None:
        for uv in mesh.uvs:
            lines.append(f"vt {fmt(uv[0])} {fmt(uv[1])}")
    if mesh.normals is not None:
        for n in mesh.normals:
            lines.append(f"vn {fmt(n[0])} {fmt(n[1])} {fmt(n[2])}")

    has_uv = mesh.uvs is not None
    has_n = mesh.normals is not None
    for tri in mesh.triangles:
        corner = []
        for vi in tri:
            k = int(vi) + 1
            if has_uv and has_n:
                corner.append(f"{k}/{k}/{k}")
            elif has_uv:
                corner.append(f"{k}/{k}")
            elif has_n:
                corner.append(f"{k}//{k}")
            else:
                corner.append(str(k))
        lines.append("f " + " ".join(corner))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def compute_bounds(mesh: Mesh) -> Aabb:
    """Tight axis-aligned bounds over all vertices."""
    if len(mesh.vertices) == 0:
        raise ValidationError("cannot bound an empty mesh")
    return Aabb(mesh.vertices.min(axis=0), mesh.vertices.max(axis=0))


_UP_AXIS_ROTATIONS = {
    # proper rotations mapping the named file-up direction onto canonical -Y
    "+y": np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
    "-y": np.eye(3),
    "+z": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
    "-z": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]),
}


def orient_up(mesh: Mesh, up_axis: str = "+y") -> Mesh:
    """Rotate a mesh so the file's up axis becomes canonical up (-Y).

    Kept separate from normalize_mesh so normalization stays idempotent;
    callers apply this once, right after loading.
    """
    key = up_axis.lower()
    if key in ("y", "z"):
        key = "+" + key
    if key not in _UP_AXIS_ROTATIONS:
        raise ValueError(f"up_axis must be one of {sorted(_UP_AXIS_ROTATIONS)}, got {up_axis!r}")
    rot = _UP_AXIS_ROTATIONS[key]
    return mesh.transformed(rotation=rot)


def normalize_mesh(mesh: Mesh, target_height: float) -> Mesh:
    """Scale and translate into the canonical standing frame.

    Output bounds have vertical extent target_height, the body's lowest
    point (max Y in the +Y-down world) at 0, and horizontal bound centers
    at 0. Idempotent: normalizing twice equals normalizing once.
    """
    if target_height <= 0:
        raise ValueError(f"target_height must be positive, got {target_height}")
    bounds = compute_bounds(mesh)
    extent = float(bounds.max[1] - bounds.min[1])
    if extent < 1e-12:
        raise DegenerateMesh(f"vertical extent {extent} too small to normalize")
    scale = target_height / extent
    anchor = np.array([bounds.center[0], bounds.max[1], bounds.center[2]])
    return mesh.transformed(translation=-anchor * scale, scale=scale)


def validate_mesh(mesh: Mesh) -> MeshReport:
    """Report on mesh quality; degenerate/non-manifold geometry is kept."""
    tris = mesh.triangles
    a = mesh.vertices[tris[:, 0]]
    b = mesh.vertices[tris[:, 1]]
    c = mesh.vertices[tris[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    degenerate = int(np.sum(areas == 0.0))

    edges: dict[tuple[int, int], int] = {}
    for tri in tris:
        for i in range(3):
            e = (int(tri[i]), int(tri[(i + 1) % 3]))
            key = (min(e), max(e))
            edges[key] = edges.get(key, 0) + 1
    non_manifold = sum(1 for count in edges.values() if count > 2)

    notes = []
    if degenerate:
        notes.append(f"{degenerate} zero-area triangles kept (rasterizer tolerates them)")
    if non_manifold:
        notes.append(f"{non_manifold} edges shared by >2 triangles")
    if mesh.colors is not None and np.all(mesh.colors == mesh.colors[0:1]):
        notes.append("uniform vertex color (source had no color data?)")
    return MeshReport(
        vertex_count=len(mesh.vertices),
        triangle_count=len(tris),
        degenerate_triangles=degenerate,
        non_manifold_edges=non_manifold,
        notes=notes,
    )
