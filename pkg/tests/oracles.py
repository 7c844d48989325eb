"""Independent reference implementations used as test oracles.

Everything here is deliberately written as plain scalar Python, separate from
the library's vectorized/compiled paths: per-pixel point-in-triangle coverage
with the documented top-left rule, double-precision projection, and a scalar
MIP ray marcher.
"""

import math

import numpy as np


def orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def top_left(ax, ay, bx, by):
    dy = by - ay
    return (dy == 0 and (bx - ax) > 0) or dy < 0


def triangle_coverage(verts, width, height, scissor=None):
    """Set of (px, py) pixel centers covered by a snapped triangle.

    verts: three (xi, yi) int pairs in 1/256-pixel units. Walks every pixel
    in the scissor and evaluates the three edge functions at the center.
    """
    (x0, y0), (x1, y1), (x2, y2) = verts
    if scissor is None:
        scissor = (0, 0, width, height)
    sx0, sy0, sx1, sy1 = scissor
    area2 = orient(x0, y0, x1, y1, x2, y2)
    if area2 == 0:
        return set()
    if area2 < 0:
        x1, y1, x2, y2 = x2, y2, x1, y1
    covered = set()
    for py in range(sy0, sy1):
        cy = py * 256 + 128
        for px in range(sx0, sx1):
            cx = px * 256 + 128
            w0 = orient(x1, y1, x2, y2, cx, cy)
            w1 = orient(x2, y2, x0, y0, cx, cy)
            w2 = orient(x0, y0, x1, y1, cx, cy)
            ok0 = w0 > 0 or (w0 == 0 and top_left(x1, y1, x2, y2))
            ok1 = w1 > 0 or (w1 == 0 and top_left(x2, y2, x0, y0))
            ok2 = w2 > 0 or (w2 == 0 and top_left(x0, y0, x1, y1))
            if ok0 and ok1 and ok2:
                covered.add((px, py))
    return covered


def project_point_reference(matrix, p, viewport_w, viewport_h):
    """Scalar double-precision projection of one point through a 4x4 matrix."""
    m = [[float(matrix[r][c]) for c in range(4)] for r in range(4)]
    x = m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3]
    y = m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3]
    z = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3]
    w = m[3][0] * p[0] + m[3][1] * p[1] + m[3][2] * p[2] + m[3][3]
    px = (x / w + 1.0) * 0.5 * viewport_w
    py = (1.0 - y / w) * 0.5 * viewport_h
    depth = (z / w + 1.0) * 0.5
    return px, py, depth


def mip_reference(vol_data, dims, eye, rot, tanhalf, aspect, step, region, mural_w, mural_h):
    """Scalar brute-force maximum-intensity projection over the same samples."""
    dx, dy, dz = dims
    x0, y0, w, h = region
    out = np.zeros((h, w), dtype=np.uint8)
    for row in range(h):
        py = y0 + row
        b = (1.0 - 2.0 * (py + 0.5) / mural_h) * tanhalf
        for col in range(w):
            px = x0 + col
            a = (2.0 * (px + 0.5) / mural_w - 1.0) * tanhalf * aspect
            d = [
                rot[0][0] * a + rot[0][1] * b + rot[0][2] * -1.0,
                rot[1][0] * a + rot[1][1] * b + rot[1][2] * -1.0,
                rot[2][0] * a + rot[2][1] * b + rot[2][2] * -1.0,
            ]
            norm = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            d = [v / norm for v in d]
            t_enter, t_exit = 0.0, math.inf
            for axis in range(3):
                e, da = eye[axis], d[axis]
                if da != 0.0:
                    ta = (-0.5 - e) / da
                    tb = (0.5 - e) / da
                    lo, hi = (ta, tb) if ta < tb else (tb, ta)
                elif abs(e) <= 0.5:
                    lo, hi = -math.inf, math.inf
                else:
                    lo, hi = math.inf, -math.inf
                t_enter = max(t_enter, lo)
                t_exit = min(t_exit, hi)
            if t_exit < t_enter:
                continue
            best = 0
            nsamp = int(math.floor((t_exit - t_enter) / step) + 1.0)
            for k in range(nsamp):
                t = t_enter + k * step
                ix = min(max(int(math.floor((eye[0] + t * d[0] + 0.5) * dx)), 0), dx - 1)
                iy = min(max(int(math.floor((eye[1] + t * d[1] + 0.5) * dy)), 0), dy - 1)
                iz = min(max(int(math.floor((eye[2] + t * d[2] + 0.5) * dz)), 0), dz - 1)
                best = max(best, int(vol_data[ix + dx * (iy + dy * iz)]))
            out[row, col] = best
    return out
