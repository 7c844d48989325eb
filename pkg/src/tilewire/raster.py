"""Deterministic software rasterizer.

Coverage is decided in integer arithmetic on 1/256-subpixel snapped
coordinates with a top-left fill rule, so tiled (scissored) rendering
concatenates pixel-exactly with a full-frame render and the coverage oracle
in the tests can reproduce it bit for bit. Depth and color interpolation run
in float64 with a pinned evaluation order shared by the compiled and the
numpy kernels; the depth test is strict-less on float32, so at equal depth
the first writer wins (lower rank = earlier draw in every composition mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .scene import ScenePartition

SUBPIXEL = 256  # snapped coordinate units per pixel
MAX_SNAPPED = 1 << 24  # triangles projecting beyond this are culled (overflow guard)
_W_EPS = 1e-9


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class CameraState:
    """Examiner-style camera: orbit orientation around a center of interest.

    The eye sits at center + R*(0,0,focal_distance) looking back at center.
    All fields are rounded to float32 so replicated cameras can be compared
    bit for bit across nodes.
    """

    orientation: tuple = (1.0, 0.0, 0.0, 0.0)  # unit quaternion (w, x, y, z)
    focal_distance: float = 3.5
    center: tuple = (0.0, 0.0, 0.0)
    fov_y: float = math.pi / 4
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self):
        q = tuple(_f32(v) for v in self.orientation)
        c = tuple(_f32(v) for v in self.center)
        object.__setattr__(self, "orientation", q)
        object.__setattr__(self, "center", c)
        for name in ("focal_distance", "fov_y", "near", "far"):
            object.__setattr__(self, name, _f32(getattr(self, name)))
        norm = math.sqrt(sum(v * v for v in q))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"orientation quaternion norm {norm} is not 1")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if not (0 < self.fov_y < math.pi):
            raise ValueError("fov_y must lie in (0, pi)")

    def rotation(self) -> np.ndarray:
        """World-from-camera rotation matrix, float64."""
        w, x, y, z = (float(v) for v in self.orientation)
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )

    def eye(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) + self.rotation() @ np.array(
            [0.0, 0.0, float(self.focal_distance)]
        )


def camera_matrix(cam: CameraState, viewport_w: int, viewport_h: int) -> np.ndarray:
    """World-to-clip 4x4, float32 (the exact matrix carried on the wire)."""
    rot = cam.rotation()
    eye = cam.eye()
    view = np.eye(4)
    view[:3, :3] = rot.T
    view[:3, 3] = -rot.T @ eye

    aspect = viewport_w / viewport_h
    f = 1.0 / math.tan(float(cam.fov_y) / 2.0)
    near, far = float(cam.near), float(cam.far)
    proj = np.zeros((4, 4))
    proj[0, 0] = f / aspect
    proj[1, 1] = f
    proj[2, 2] = (far + near) / (near - far)
    proj[2, 3] = 2.0 * far * near / (near - far)
    proj[3, 2] = -1.0
    return (proj @ view).astype(np.float32)


def project_vertices(matrix: np.ndarray, pos: np.ndarray, viewport_w: int, viewport_h: int):
    """Project float32 world positions to snapped pixel coords and [0,1] depth.

    pos has shape (..., 3). Returns (xi, yi, z01, ok): snapped int64 pixel
    coordinates (1/256 units), float64 depth, and per-vertex validity. A
    vertex is invalid behind the eye plane (w <= 0), in front of the near
    plane (depth < 0), or outside the snapped-coordinate guard range.
    All arithmetic is float64 over the float32 inputs, in a fixed order.
    """
    m = np.asarray(matrix, dtype=np.float64)
    p = np.asarray(pos, dtype=np.float64)
    x = p[..., 0] * m[0, 0] + p[..., 1] * m[0, 1] + p[..., 2] * m[0, 2] + m[0, 3]
    y = p[..., 0] * m[1, 0] + p[..., 1] * m[1, 1] + p[..., 2] * m[1, 2] + m[1, 3]
    z = p[..., 0] * m[2, 0] + p[..., 1] * m[2, 1] + p[..., 2] * m[2, 2] + m[2, 3]
    w = p[..., 0] * m[3, 0] + p[..., 1] * m[3, 1] + p[..., 2] * m[3, 2] + m[3, 3]

    ok = w > _W_EPS
    wsafe = np.where(ok, w, 1.0)
    ndc_x = x / wsafe
    ndc_y = y / wsafe
    z01 = (z / wsafe + 1.0) * 0.5
    px = (ndc_x + 1.0) * 0.5 * viewport_w
    py = (1.0 - ndc_y) * 0.5 * viewport_h
    xi = np.floor(px * SUBPIXEL + 0.5)
    yi = np.floor(py * SUBPIXEL + 0.5)
    ok &= z01 >= 0.0
    ok &= (np.abs(xi) < MAX_SNAPPED) & (np.abs(yi) < MAX_SNAPPED)
    xi = np.where(ok, xi, 0.0).astype(np.int64)
    yi = np.where(ok, yi, 0.0).astype(np.int64)
    return xi, yi, z01, ok


class Framebuffer:
    """RGBA8 color plane plus float32 depth plane."""

    def __init__(self, width: int, height: int):
        if width <= 0 or height <= 0:
            raise ValueError("framebuffer dimensions must be positive")
        self.width = width
        self.height = height
        self.color = np.zeros((height, width, 4), dtype=np.uint8)
        self.color[:, :, 3] = 255
        self.depth = np.ones((height, width), dtype=np.float32)

    def clear(self, rgba=(0, 0, 0, 255), depth: float = 1.0):
        self.color[:, :] = np.asarray(rgba, dtype=np.uint8)
        self.depth[:, :] = np.float32(depth)

    def copy(self) -> "Framebuffer":
        fb = Framebuffer(self.width, self.height)
        fb.color[:] = self.color
        fb.depth[:] = self.depth
        return fb

    def same_pixels(self, other: "Framebuffer") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.color, other.color)
        )

    def diff_count(self, other: "Framebuffer") -> int:
        return int((self.color != other.color).any(axis=2).sum())

    def to_ppm(self) -> bytes:
        head = f"P6\n{self.width} {self.height}\n255\n".encode()
        return head + self.color[:, :, :3].tobytes()

    def depth_plane(self) -> bytes:
        """Raw little-endian float32 depth, row-major."""
        return self.depth.astype("<f4").tobytes()


@dataclass(frozen=True)
class TileRect:
    """Screen-space rectangle of the mural owned by one tile server."""

    x: int
    y: int
    w: int
    h: int
    id: tuple  # (row, col)

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("tile must have positive extent")


def make_tile_grid(rows: int, cols: int, tile_w: int, tile_h: int) -> list[TileRect]:
    return [
        TileRect(x=c * tile_w, y=r * tile_h, w=tile_w, h=tile_h, id=(r, c))
        for r in range(rows)
        for c in range(cols)
    ]


def raster_triangles(fb: Framebuffer, xi, yi, z01, rgb, scissor, fb_origin=(0, 0)):
    """Fill projected triangles into fb (already projected and culled).

    xi, yi: (n,3) int64 snapped mural coords; z01: (n,3) float64;
    rgb: (n,3,3) float64 in [0,255]. scissor is (x0, y0, x1, y1) in mural
    pixels, half-open; fb_origin maps mural pixels to fb indices.
    """
    ox, oy = fb_origin
    x0, y0, x1, y1 = scissor
    x0 = max(x0, ox)
    y0 = max(y0, oy)
    x1 = min(x1, ox + fb.width)
    y1 = min(y1, oy + fb.height)
    if x0 >= x1 or y0 >= y1 or len(xi) == 0:
        return
    _backend.fill_triangles(
        fb.color,
        fb.depth,
        int(ox),
        int(oy),
        int(x0),
        int(y0),
        int(x1),
        int(y1),
        np.ascontiguousarray(xi, dtype=np.int64),
        np.ascontiguousarray(yi, dtype=np.int64),
        np.ascontiguousarray(z01, dtype=np.float64),
        np.ascontiguousarray(rgb, dtype=np.float64),
    )


def rasterize_triangle(fb: Framebuffer, tri, scissor=None, fb_origin=(0, 0)):
    """Fill one projected triangle given as ((xi, yi, z, (r,g,b)) x 3).

    Convenience wrapper over raster_triangles for tests and list replay.
    """
    if scissor is None:
        scissor = (fb_origin[0], fb_origin[1], fb_origin[0] + fb.width, fb_origin[1] + fb.height)
    xi = np.array([[v[0] for v in tri]], dtype=np.int64)
    yi = np.array([[v[1] for v in tri]], dtype=np.int64)
    z = np.array([[v[2] for v in tri]], dtype=np.float64)
    rgb = np.array([[v[3] for v in tri]], dtype=np.float64)
    raster_triangles(fb, xi, yi, z, rgb, scissor, fb_origin)


def draw_mesh_arrays(fb, matrix, pos, rgb, mural_w, mural_h, scissor=None, fb_origin=(0, 0)):
    """Project and rasterize packed triangle arrays with whole-triangle culling."""
    if scissor is None:
        scissor = (0, 0, mural_w, mural_h)
    if len(pos) == 0:
        return
    xi, yi, z01, ok = project_vertices(matrix, pos, mural_w, mural_h)
    keep = ok.all(axis=1)
    if not keep.any():
        return
    raster_triangles(
        fb,
        xi[keep],
        yi[keep],
        z01[keep],
        np.asarray(rgb, dtype=np.float64)[keep],
        scissor,
        fb_origin,
    )


def render_sequential(
    partitions: list[ScenePartition], cam: CameraState, mural_w: int, mural_h: int
) -> Framebuffer:
    """Single-process whole-mural render in rank order: the correctness oracle."""
    fb = Framebuffer(mural_w, mural_h)
    fb.clear((0, 0, 0, 255), 1.0)
    matrix = camera_matrix(cam, mural_w, mural_h)
    for part in sorted(partitions, key=lambda p: p.rank):
        mesh = part.mesh
        draw_mesh_arrays(fb, matrix, mesh.positions(), mesh.colors(), mural_w, mural_h)
    return fb
