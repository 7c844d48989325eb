import math

import numpy as np
import pytest

from oracles import project_point_reference, triangle_coverage
from tilewire import raster, scene
from tilewire.raster import CameraState, Framebuffer, camera_matrix, project_vertices


def default_cam(**kw):
    return CameraState(**kw)


def coverage_mask(fb):
    bg = np.array([0, 0, 0, 255], dtype=np.uint8)
    return ~(fb.color == bg).all(axis=2)


def fill_snapped(fb, verts, z=(0.5, 0.5, 0.5), rgb=((255, 0, 0),) * 3, scissor=None):
    tri = [(verts[i][0], verts[i][1], z[i], rgb[i]) for i in range(3)]
    raster.rasterize_triangle(fb, tri, scissor=scissor)


class TestCameraMatrix:
    def test_center_point_projects_to_viewport_center(self):
        cam = default_cam()
        m = camera_matrix(cam, 200, 100)
        xi, yi, z01, ok = project_vertices(m, np.array([[0.0, 0.0, 0.0]], dtype=np.float32), 200, 100)
        assert ok[0]
        assert abs(xi[0] / 256.0 - 100.0) < 1e-3
        assert abs(yi[0] / 256.0 - 50.0) < 1e-3
        assert 0.0 < z01[0] < 1.0

    def test_near_far_depth_endpoints(self):
        cam = default_cam(focal_distance=5.0, near=1.0, far=10.0)
        m = camera_matrix(cam, 100, 100)
        # eye is at (0,0,5) looking toward -z; near plane crosses z = 4, far z = -5
        pts = np.array([[0, 0, 4.0], [0, 0, -5.0]], dtype=np.float32)
        _, _, z01, ok = project_vertices(m, pts, 100, 100)
        assert ok.all()
        assert abs(z01[0] - 0.0) < 1e-5
        assert abs(z01[1] - 1.0) < 1e-5

    def test_matches_double_precision_reference(self):
        rng = np.random.default_rng(11)
        cam = default_cam(
            orientation=_random_unit_quat(rng),
            focal_distance=4.0,
            center=(0.2, -0.1, 0.3),
        )
        m = camera_matrix(cam, 640, 480)
        pts = rng.uniform(-1, 1, size=(50, 3)).astype(np.float32)
        xi, yi, z01, ok = project_vertices(m, pts, 640, 480)
        for i in range(len(pts)):
            px, py, depth = project_point_reference(m, [float(v) for v in pts[i]], 640, 480)
            if not ok[i]:
                continue
            # snapping quantizes to 1/256 px; reference is unsnapped
            assert abs(xi[i] / 256.0 - px) <= 0.5 / 256 + 1e-4
            assert abs(yi[i] / 256.0 - py) <= 0.5 / 256 + 1e-4
            assert abs(z01[i] - depth) < 1e-9

    def test_invariant_validation(self):
        with pytest.raises(ValueError):
            CameraState(near=2.0, far=1.0)
        with pytest.raises(ValueError):
            CameraState(orientation=(2.0, 0, 0, 0))
        with pytest.raises(ValueError):
            CameraState(fov_y=4.0)


def _random_unit_quat(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    q32 = q.astype(np.float32)
    q32 /= np.float32(np.sqrt(np.sum(q32 * q32, dtype=np.float32)))
    return tuple(float(v) for v in q32)


class TestRasterizeTriangle:
    def test_degenerate_draws_nothing(self):
        fb = Framebuffer(32, 32)
        fb.clear()
        before = fb.color.copy()
        fill_snapped(fb, [(100, 100), (2000, 2000), (1050, 1050)])
        assert np.array_equal(fb.color, before)

    def test_shared_edge_written_once(self):
        # quad split along a diagonal; also exercise horizontal/vertical edges
        quads = [
            [(2 * 256, 2 * 256), (28 * 256, 3 * 256), (27 * 256, 29 * 256), (3 * 256, 27 * 256)],
            [(0, 0), (20 * 256, 0), (20 * 256, 20 * 256), (0, 20 * 256)],
            [(1000, 500), (5000, 700), (5200, 6000), (900, 6100)],
        ]
        for quad in quads:
            a, b, c, d = quad
            fb1 = Framebuffer(32, 32)
            fb1.clear()
            fill_snapped(fb1, [a, b, c])
            fb2 = Framebuffer(32, 32)
            fb2.clear()
            fill_snapped(fb2, [a, c, d])
            m1, m2 = coverage_mask(fb1), coverage_mask(fb2)
            assert not (m1 & m2).any(), "shared edge double-written"
            union = triangle_coverage([a, b, c], 32, 32) | triangle_coverage([a, c, d], 32, 32)
            got = {(x, y) for y, x in zip(*np.nonzero(m1 | m2))}
            assert got == union

    def test_coverage_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(60):
            verts = [(int(rng.integers(-2000, 26 * 256)), int(rng.integers(-2000, 26 * 256))) for _ in range(3)]
            fb = Framebuffer(24, 24)
            fb.clear()
            fill_snapped(fb, verts)
            got = {(x, y) for y, x in zip(*np.nonzero(coverage_mask(fb)))}
            assert got == triangle_coverage(verts, 24, 24)

    def test_scissor_confinement(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            verts = [(int(rng.integers(0, 32 * 256)), int(rng.integers(0, 32 * 256))) for _ in range(3)]
            sc = (8, 6, 20, 18)
            fb = Framebuffer(32, 32)
            fb.clear()
            fill_snapped(fb, verts, scissor=sc)
            mask = coverage_mask(fb)
            outside = mask.copy()
            outside[sc[1] : sc[3], sc[0] : sc[2]] = False
            assert not outside.any()
            assert {(x, y) for y, x in zip(*np.nonzero(mask))} == triangle_coverage(
                verts, 32, 32, scissor=sc
            )

    def test_depth_test_strict_less_first_writer_wins(self):
        fb = Framebuffer(8, 8)
        fb.clear()
        tri = [(0, 0), (8 * 256, 0), (0, 8 * 256)]
        fill_snapped(fb, tri, z=(0.5, 0.5, 0.5), rgb=((10, 10, 10),) * 3)
        fill_snapped(fb, tri, z=(0.5, 0.5, 0.5), rgb=((200, 200, 200),) * 3)
        assert fb.color[0, 0, 0] == 10
        fill_snapped(fb, tri, z=(0.25, 0.25, 0.25), rgb=((99, 99, 99),) * 3)
        assert fb.color[0, 0, 0] == 99


class TestRenderSequential:
    def test_empty_scene_is_background(self):
        fb = raster.render_sequential([], default_cam(), 64, 48)
        assert (fb.color[:, :, :3] == 0).all()
        assert (fb.depth == 1.0).all()

    def test_single_triangle_matches_oracle(self):
        tris = np.zeros((1, 3), dtype=scene.VERTEX_DTYPE)
        tris["pos"] = [[[-0.5, -0.4, 0.0], [0.6, -0.3, 0.0], [0.0, 0.7, 0.0]]]
        tris["rgb"] = 255
        part = scene.ScenePartition(rank=0, mesh=scene.Mesh(tris))
        cam = default_cam()
        fb = raster.render_sequential([part], cam, 48, 48)
        m = camera_matrix(cam, 48, 48)
        xi, yi, _, ok = project_vertices(m, tris["pos"][0], 48, 48)
        assert ok.all()
        expected = triangle_coverage(list(zip(xi.tolist(), yi.tolist())), 48, 48)
        got = {(x, y) for y, x in zip(*np.nonzero(coverage_mask(fb)))}
        assert got == expected

    def test_order_free_when_depths_distinct(self):
        rng = np.random.default_rng(8)
        n = 40
        tris = np.zeros((n, 3), dtype=scene.VERTEX_DTYPE)
        base = rng.uniform(-0.8, 0.8, size=(n, 1, 3))
        tris["pos"] = (base + rng.uniform(-0.25, 0.25, size=(n, 3, 3))).astype(np.float32)
        # distinct per-triangle z planes => distinct interpolated depths
        tris["pos"][:, :, 2] = np.linspace(-0.9, 0.9, n)[:, None]
        tris["rgb"] = rng.integers(0, 256, size=(n, 3, 3))
        mesh = scene.Mesh(tris)
        perm = scene.Mesh(tris[rng.permutation(n)])
        cam = default_cam()
        a = raster.render_sequential([scene.ScenePartition(0, mesh)], cam, 96, 96)
        b = raster.render_sequential([scene.ScenePartition(0, perm)], cam, 96, 96)
        assert a.same_pixels(b)
        assert np.array_equal(a.depth, b.depth)

    def test_render_is_deterministic(self):
        m = scene.gen_synthetic_scene(48 * 300, 17)
        cam = default_cam()
        parts = [scene.ScenePartition(0, m)]
        a = raster.render_sequential(parts, cam, 80, 60)
        b = raster.render_sequential(parts, cam, 80, 60)
        assert np.array_equal(a.color, b.color) and np.array_equal(a.depth, b.depth)


class TestFramebufferExports:
    def test_ppm_header_and_size(self):
        fb = Framebuffer(17, 9)
        fb.clear((1, 2, 3, 255))
        data = fb.to_ppm()
        assert data.startswith(b"P6\n17 9\n255\n")
        assert len(data) == len(b"P6\n17 9\n255\n") + 17 * 9 * 3

    def test_depth_plane_round_trip(self):
        fb = Framebuffer(4, 4)
        fb.depth[:] = np.linspace(0, 1, 16, dtype=np.float32).reshape(4, 4)
        back = np.frombuffer(fb.depth_plane(), dtype="<f4").reshape(4, 4)
        assert np.array_equal(back, fb.depth)


class TestTileGrid:
    def test_grid_covers_mural_disjointly(self):
        tiles = raster.make_tile_grid(2, 3, 10, 8)
        seen = np.zeros((16, 30), dtype=int)
        for t in tiles:
            seen[t.y : t.y + t.h, t.x : t.x + t.w] += 1
        assert (seen == 1).all()
