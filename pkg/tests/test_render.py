import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from humanforge.geometry import CameraIntrinsics, CameraPose, world_to_camera
from humanforge.mesh import Mesh
from humanforge.render import (
    Framebuffer,
    RenderConfig,
    composite_over,
    raster_triangle,
    read_depth,
    render_mesh,
    write_depth,
)
from oracles import blend_channel, raycast_depth, triangle_coverage

INTR64 = CameraIntrinsics(fx=80.0, fy=80.0, cx=32.0, cy=32.0, width=64, height=64)
POSE0 = CameraPose(position=np.zeros(3))


def screen_triangle_mesh(pts2d, depth, color=(1.0, 0.0, 0.0)):
    """Mesh whose projection under INTR64/POSE0 hits exactly pts2d at given depth."""
    verts = []
    for u, v in pts2d:
        x = (u - INTR64.cx) * depth / INTR64.fx
        y = (v - INTR64.cy) * depth / INTR64.fy
        verts.append([x, y, depth])
    return Mesh(vertices=np.array(verts), triangles=np.array([[0, 1, 2]]),
                colors=np.tile(color, (3, 1)))


def coverage_set(fb):
    ys, xs = np.nonzero(fb.alpha > 0)
    return set(zip(xs.tolist(), ys.tolist()))


class TestCoverage:
    def test_single_triangle_matches_oracle(self):
        pts = [(5.0, 5.0), (50.0, 12.0), (20.0, 55.0)]
        fb = render_mesh(screen_triangle_mesh(pts, 2.0), INTR64, POSE0)
        assert coverage_set(fb) == triangle_coverage(pts, 64, 64)

    def test_random_triangles_match_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            pts = [(rng.uniform(-5, 69), rng.uniform(-5, 69)) for _ in range(3)]
            fb = Framebuffer.empty(64, 64)
            raster_triangle(fb.rgba, fb.depth, np.array(pts), np.full(3, 2.0),
                            colors=np.full((3, 3), 0.5))
            assert coverage_set(fb) == triangle_coverage(pts, 64, 64)

    def test_degenerate_triangle_draws_nothing(self):
        fb = Framebuffer.empty(64, 64)
        raster_triangle(fb.rgba, fb.depth, np.array([(1.0, 1.0), (9.0, 9.0), (5.0, 5.0)]),
                        np.full(3, 2.0), colors=np.full((3, 3), 0.5))
        assert not fb.alpha.any()


class TestWatertight:
    def rasterize_counted(self, tris):
        """Coverage count per pixel across triangles (each 1 where covered)."""
        count = np.zeros((64, 64), dtype=int)
        for pts in tris:
            fb = Framebuffer.empty(64, 64)
            raster_triangle(fb.rgba, fb.depth, np.asarray(pts, dtype=np.float64),
                            np.full(3, 2.0), colors=np.full((3, 3), 0.5))
            count += (fb.alpha > 0).astype(int)
        return count

    def test_vertical_shared_edge_through_pixel_centers(self):
        # the shared edge x = 5.5 passes exactly through pixel centers
        a = [(5.5, 0.5), (5.5, 20.5), (0.5, 10.5)]
        b = [(5.5, 0.5), (25.5, 10.5), (5.5, 20.5)]
        count = self.rasterize_counted([a, b])
        assert count.max() == 1  # no double draw on the shared edge
        edge_pixels = count[1:20, 5]
        assert edge_pixels.min() == 1  # no gap either

    def test_random_split_quads_cover_once(self):
        rng = np.random.default_rng(4)
        done = 0
        while done < 30:
            # convex quad on the half-integer grid, split along a diagonal
            cx, cy = rng.uniform(20, 44, size=2)
            angles = np.sort(rng.uniform(0, 2 * np.pi, size=4))
            if np.min(np.diff(angles)) < 0.4:
                continue
            radius = rng.uniform(6, 14)
            pts = [(np.round((cx + radius * np.cos(a)) * 2) / 2,
                    np.round((cy + radius * np.sin(a)) * 2) / 2) for a in angles]
            tri_a = [pts[0], pts[1], pts[2]]
            tri_b = [pts[0], pts[2], pts[3]]
            count = self.rasterize_counted([tri_a, tri_b])
            assert count.max() <= 1
            done += 1


class TestDepth:
    def test_two_overlapping_triangles_front_wins(self):
        near = screen_triangle_mesh([(10, 10), (54, 10), (32, 54)], 1.0, color=(1, 0, 0))
        far = screen_triangle_mesh([(10, 10), (54, 10), (32, 54)], 2.0, color=(0, 1, 0))
        mesh = Mesh(
            vertices=np.vstack([far.vertices, near.vertices]),
            triangles=np.array([[0, 1, 2], [3, 4, 5]]),
            colors=np.vstack([far.colors, near.colors]),
        )
        fb = render_mesh(mesh, INTR64, POSE0)
        covered = fb.alpha > 0
        assert np.allclose(fb.depth[covered], 1.0, atol=1e-9)
        assert np.all(fb.rgba[covered][:, 0] == 255)

    def test_depth_matches_raycast_oracle(self):
        rng = np.random.default_rng(6)
        verts = np.column_stack([
            rng.uniform(-0.8, 0.8, 60), rng.uniform(-0.8, 0.8, 60), rng.uniform(1.5, 3.5, 60),
        ])
        tris = rng.integers(0, 60, size=(40, 3))
        mesh = Mesh(vertices=verts, triangles=tris, colors=rng.uniform(0, 1, (60, 3)))
        fb = render_mesh(mesh, INTR64, POSE0)
        oracle = raycast_depth(world_to_camera(POSE0, verts), tris, INTR64)
        assert np.array_equal(np.isfinite(fb.depth), np.isfinite(oracle))
        finite = np.isfinite(oracle)
        assert np.allclose(fb.depth[finite], oracle[finite], rtol=1e-6, atol=1e-9)


class TestRenderMesh:
    def test_empty_mesh_gives_transparent_buffer(self):
        mesh = Mesh(vertices=np.zeros((0, 3)), triangles=np.zeros((0, 3), dtype=np.int32))
        fb = render_mesh(mesh, INTR64, POSE0)
        assert not fb.alpha.any()
        assert np.all(np.isinf(fb.depth))

    def test_alpha_depth_consistency(self):
        mesh = screen_triangle_mesh([(10, 10), (50, 20), (30, 50)], 2.0)
        fb = render_mesh(mesh, INTR64, POSE0)
        assert np.array_equal(fb.alpha > 0, np.isfinite(fb.depth))

    def test_determinism_and_band_invariance(self):
        rng = np.random.default_rng(8)
        verts = np.column_stack([
            rng.uniform(-1, 1, 30), rng.uniform(-1, 1, 30), rng.uniform(1.0, 4.0, 30),
        ])
        mesh = Mesh(vertices=verts, triangles=rng.integers(0, 30, (25, 3)),
                    colors=rng.uniform(0, 1, (30, 3)))
        fb1 = render_mesh(mesh, INTR64, POSE0)
        fb2 = render_mesh(mesh, INTR64, POSE0)
        fb3 = render_mesh(mesh, INTR64, POSE0, bands=4)
        fb7 = render_mesh(mesh, INTR64, POSE0, bands=7)
        for other in (fb2, fb3, fb7):
            assert np.array_equal(fb1.rgba, other.rgba)
            assert np.array_equal(fb1.depth, other.depth)

    def test_near_plane_clipping(self):
        # triangle straddling the near plane: the part behind the camera is cut
        verts = np.array([[0.0, -0.5, 2.0], [0.5, 0.5, -1.0], [-0.5, 0.5, -1.0]])
        mesh = Mesh(vertices=verts, triangles=np.array([[0, 1, 2]]),
                    colors=np.full((3, 3), 0.8))
        with pytest.warns(UserWarning, match="inside"):
            fb = render_mesh(mesh, INTR64, POSE0)
        assert fb.alpha.any()
        assert fb.depth[np.isfinite(fb.depth)].min() >= INTR64.z_near - 1e-9

    def test_fully_behind_camera_invisible(self):
        verts = np.array([[0.0, 0.0, -2.0], [0.5, 0.0, -1.0], [-0.5, 0.0, -1.0]])
        mesh = Mesh(vertices=verts, triangles=np.array([[0, 1, 2]]),
                    colors=np.full((3, 3), 0.8))
        fb = render_mesh(mesh, INTR64, POSE0)
        assert not fb.alpha.any()

    def test_texture_nearest_sampling(self):
        texture = np.zeros((2, 2, 3), dtype=np.uint8)
        texture[0, 0] = (255, 0, 0)    # top-left = uv (0, 1)
        texture[0, 1] = (0, 255, 0)
        texture[1, 0] = (0, 0, 255)    # bottom-left = uv (0, 0)
        texture[1, 1] = (255, 255, 0)
        # screen-aligned square at depth 2 covering most of the frame
        verts = []
        for u, v in [(4, 4), (60, 4), (60, 60), (4, 60)]:
            verts.append([(u - 32) * 2 / 80.0, (v - 32) * 2 / 80.0, 2.0])
        uvs = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
        mesh = Mesh(vertices=np.array(verts), triangles=np.array([[0, 1, 2], [0, 2, 3]]),
                    uvs=uvs, texture=texture)
        fb = render_mesh(mesh, INTR64, POSE0)
        assert tuple(fb.rgba[10, 10, :3]) == (255, 0, 0)
        assert tuple(fb.rgba[10, 54, :3]) == (0, 255, 0)
        assert tuple(fb.rgba[54, 10, :3]) == (0, 0, 255)
        assert tuple(fb.rgba[54, 54, :3]) == (255, 255, 0)

    def test_solid_background(self):
        mesh = screen_triangle_mesh([(10, 10), (50, 20), (30, 50)], 2.0)
        fb = render_mesh(mesh, INTR64, POSE0, RenderConfig(background=(10, 20, 30)))
        assert tuple(fb.rgba[0, 0]) == (10, 20, 30, 255)

    def test_flat_shading_darkens_unlit_faces(self):
        mesh = screen_triangle_mesh([(10, 10), (50, 20), (30, 50)], 2.0, color=(1, 1, 1))
        lit = render_mesh(mesh, INTR64, POSE0,
                          RenderConfig(shading="flat", light_direction=(0, 0, -1)))
        grazing = render_mesh(mesh, INTR64, POSE0,
                              RenderConfig(shading="flat", light_direction=(1, 0, 0)))
        covered = lit.alpha > 0
        assert lit.rgba[covered][:, 0].max() > grazing.rgba[covered][:, 0].max()

    def test_camera_inside_mesh_warns(self):
        verts = np.array([[-1.0, -1, -1], [1.0, 1, 1], [1.0, -1, 1]])
        mesh = Mesh(vertices=verts, triangles=np.array([[0, 1, 2]]),
                    colors=np.full((3, 3), 0.5))
        with pytest.warns(UserWarning, match="inside"):
            render_mesh(mesh, INTR64, POSE0)

    def test_supersampling_shapes(self):
        mesh = screen_triangle_mesh([(10, 10), (50, 20), (30, 50)], 2.0)
        fb = render_mesh(mesh, INTR64, POSE0, RenderConfig(supersample=2))
        assert (fb.width, fb.height) == (64, 64)
        assert fb.alpha.any()


class TestCompositeOver:
    def make_src(self, alpha):
        src = Framebuffer.empty(8, 8)
        src.rgba[..., :3] = (200, 100, 50)
        src.rgba[..., 3] = alpha
        src.depth[:] = 1.0 if alpha else np.inf
        return src

    def test_transparent_src_identity(self):
        rng = np.random.default_rng(0)
        dst = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        out = composite_over(dst, self.make_src(0), (2, 3))
        assert np.array_equal(out, dst)

    def test_opaque_src_verbatim(self):
        dst = np.zeros((16, 16, 3), dtype=np.uint8)
        out = composite_over(dst, self.make_src(255), (4, 4))
        assert np.all(out[4:12, 4:12] == (200, 100, 50))
        assert not out[:4].any()

    @settings(max_examples=60)
    @given(s=st.integers(0, 255), d=st.integers(0, 255), a=st.integers(0, 255))
    def test_blend_matches_scalar_oracle(self, s, d, a):
        src = Framebuffer.empty(1, 1)
        src.rgba[0, 0] = (s, s, s, a)
        src.depth[0, 0] = 1.0
        dst = np.full((1, 1, 3), d, dtype=np.uint8)
        out = composite_over(dst, src, (0, 0))
        assert out[0, 0, 0] == blend_channel(s, d, a)

    def test_partial_overlap_clips(self):
        dst = np.zeros((8, 8, 3), dtype=np.uint8)
        out = composite_over(dst, self.make_src(255), (-4, -4))
        assert np.all(out[:4, :4] == (200, 100, 50))
        assert not out[4:, :].any()

    def test_depth_carried_into_framebuffer_dst(self):
        dst = Framebuffer.empty(8, 8)
        dst.rgba[..., 3] = 255
        dst.depth[:] = 5.0
        out = composite_over(dst, self.make_src(255), (0, 0))
        assert np.all(out.depth == 1.0)


class TestDepthDump:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        depth = rng.uniform(0.5, 9.0, size=(13, 7)).astype(np.float32)
        path = tmp_path / "d.bin"
        write_depth(depth, str(path))
        again = read_depth(str(path))
        assert again.dtype == np.float32
        assert np.array_equal(depth, again)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTDEPTH" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            read_depth(str(path))
