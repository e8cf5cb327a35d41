"""Independent oracles used by the test suite.

Everything here is deliberately written from scratch (scalar loops, grid
searches, closed forms) so it shares no code path with the package
implementations it checks.
"""

from __future__ import annotations

import numpy as np


def rotation_yaw_pitch_roll(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Hand-built camera-to-world rotation: yaw about Y, pitch about X, roll about Z."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return ry @ rx @ rz


def brute_force_nearest_point(rays, center, span: float, levels: int = 7,
                              grid: int = 11) -> np.ndarray:
    """Multi-resolution grid search minimizing sum of squared point-line distances.

    Searches a cube of half-width ``span`` around ``center``, refining the
    grid around the best cell at each level; final resolution is about
    span * (2 / (grid - 1)) ** (levels - 1).
    """
    origins = np.array([r.origin for r in rays])
    dirs = np.array([r.direction for r in rays])
    best = np.asarray(center, dtype=np.float64)
    step = float(span)
    for _ in range(levels):
        axes = [np.linspace(best[k] - step, best[k] + step, grid) for k in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)  # (G, 3)
        total = np.zeros(len(pts))
        for a, d in zip(origins, dirs):
            delta = pts - a
            cross = np.cross(np.broadcast_to(d, delta.shape), delta)
            total += np.sum(cross * cross, axis=1)
        best = pts[int(np.argmin(total))]
        step *= 2.0 / (grid - 1)
    return best


def line_objective(rays, point) -> float:
    """Sum of squared perpendicular distances from point to each line."""
    total = 0.0
    point = np.asarray(point, dtype=np.float64)
    for r in rays:
        delta = point - r.origin
        total += float(np.sum(np.cross(r.direction, delta) ** 2))
    return total


def edge_fn(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def is_top_left(ax, ay, bx, by) -> bool:
    ey = by - ay
    ex = bx - ax
    return ey < 0 or (ey == 0 and ex > 0)


def triangle_coverage(pts, width, height) -> set[tuple[int, int]]:
    """Per-pixel point-in-triangle scan with the top-left fill rule.

    Scalar re-derivation of the coverage predicate: a pixel center is
    covered when all three (reoriented-CCW) edge functions are positive,
    or zero on a top-left edge.
    """
    (x0, y0), (x1, y1), (x2, y2) = [(float(p[0]), float(p[1])) for p in pts]
    area = edge_fn(x0, y0, x1, y1, x2, y2)
    if area == 0:
        return set()
    if area < 0:
        (x1, y1), (x2, y2) = (x2, y2), (x1, y1)
    covered = set()
    for py_i in range(height):
        for px_i in range(width):
            px, py = px_i + 0.5, py_i + 0.5
            inside = True
            for ax, ay, bx, by in ((x1, y1, x2, y2), (x2, y2, x0, y0), (x0, y0, x1, y1)):
                w = edge_fn(ax, ay, bx, by, px, py)
                if w < 0 or (w == 0 and not is_top_left(ax, ay, bx, by)):
                    inside = False
                    break
            if inside:
                covered.add((px_i, py_i))
    return covered


def raycast_depth(mesh_vertices_cam, triangles, intr) -> np.ndarray:
    """Depth map oracle: min ray-plane intersection over covering triangles.

    Coverage per triangle uses the scalar top-left scan on projected
    vertices; the depth at a covered pixel is the camera-ray / triangle-
    plane intersection, which is independent of any interpolation scheme.
    Assumes every vertex is in front of the near plane.
    """
    depth = np.full((intr.height, intr.width), np.inf)
    verts = np.asarray(mesh_vertices_cam, dtype=np.float64)
    for tri in triangles:
        v = verts[tri]
        if np.any(v[:, 2] < intr.z_near):
            raise ValueError("oracle requires all vertices in front of the near plane")
        pts = [(intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy) for p in v]
        normal = np.cross(v[1] - v[0], v[2] - v[0])
        denom_base = np.dot(normal, v[0])
        for px_i, py_i in triangle_coverage(pts, intr.width, intr.height):
            direction = np.array([
                (px_i + 0.5 - intr.cx) / intr.fx,
                (py_i + 0.5 - intr.cy) / intr.fy,
                1.0,
            ])
            t = denom_base / np.dot(normal, direction)
            if t < depth[py_i, px_i]:
                depth[py_i, px_i] = t
    return depth


def blend_channel(src: int, dst: int, alpha: int) -> int:
    """Scalar source-over blend for one 8-bit channel."""
    a = alpha / 255.0
    return int(round(a * src + (1.0 - a) * dst))
