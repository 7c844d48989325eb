"""Pure numpy fallback for the hot kernels.

Bit-identical to the compiled extension: coverage is int64 edge arithmetic,
interpolation is float64 with the same expression order, and the extension is
compiled with -ffp-contract=off so neither side fuses multiply-adds. The
backend benchmark asserts the equivalence on random inputs.
"""

from __future__ import annotations

import numpy as np


def _is_top_left(ax, ay, bx, by):
    dy = by - ay
    return (dy == 0 and (bx - ax) > 0) or dy < 0


def fill_triangles(color, depth, ox, oy, sx0, sy0, sx1, sy1, xi, yi, z01, rgb):
    """Top-left-rule z-buffered fill of snapped triangles, scissored.

    color: (H,W,4) u8, depth: (H,W) f32, both indexed mural-minus-origin.
    xi, yi: (n,3) int64 snapped 1/256-pixel coords; z01: (n,3) f64;
    rgb: (n,3,3) f64. Scissor (sx0,sy0,sx1,sy1) is half-open mural pixels.
    """
    n = len(xi)
    for t in range(n):
        x0, x1_, x2 = int(xi[t, 0]), int(xi[t, 1]), int(xi[t, 2])
        y0, y1_, y2 = int(yi[t, 0]), int(yi[t, 1]), int(yi[t, 2])
        z0, z1, z2 = float(z01[t, 0]), float(z01[t, 1]), float(z01[t, 2])
        c0 = rgb[t, 0]
        c1 = rgb[t, 1]
        c2 = rgb[t, 2]
        area2 = (x1_ - x0) * (y2 - y0) - (y1_ - y0) * (x2 - x0)
        if area2 == 0:
            continue
        if area2 < 0:
            x1_, x2 = x2, x1_
            y1_, y2 = y2, y1_
            z1, z2 = z2, z1
            c1, c2 = c2, c1
            area2 = -area2

        mnx = min(x0, x1_, x2)
        mxx = max(x0, x1_, x2)
        mny = min(y0, y1_, y2)
        mxy = max(y0, y1_, y2)
        pxmin = max((mnx - 128 + 255) >> 8, sx0)
        pxmax = min((mxx - 128) >> 8, sx1 - 1)
        pymin = max((mny - 128 + 255) >> 8, sy0)
        pymax = min((mxy - 128) >> 8, sy1 - 1)
        if pxmin > pxmax or pymin > pymax:
            continue

        b0 = 0 if _is_top_left(x1_, y1_, x2, y2) else -1
        b1 = 0 if _is_top_left(x2, y2, x0, y0) else -1
        b2 = 0 if _is_top_left(x0, y0, x1_, y1_) else -1

        cxs = (np.arange(pxmin, pxmax + 1, dtype=np.int64) << 8) + 128
        cys = (np.arange(pymin, pymax + 1, dtype=np.int64) << 8) + 128
        cx = cxs[None, :]
        cy = cys[:, None]
        w0 = (x2 - x1_) * (cy - y1_) - (y2 - y1_) * (cx - x1_)
        w1 = (x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2)
        w2 = (x1_ - x0) * (cy - y0) - (y1_ - y0) * (cx - x0)
        cov = ((w0 + b0) >= 0) & ((w1 + b1) >= 0) & ((w2 + b2) >= 0)
        if not cov.any():
            continue

        inv = 1.0 / float(area2)
        l0 = w0 * inv
        l1 = w1 * inv
        l2 = w2 * inv
        z = l0 * z0 + l1 * z1 + l2 * z2
        z = np.minimum(np.maximum(z, 0.0), 1.0).astype(np.float32)

        dreg = depth[pymin - oy : pymax + 1 - oy, pxmin - ox : pxmax + 1 - ox]
        creg = color[pymin - oy : pymax + 1 - oy, pxmin - ox : pxmax + 1 - ox]
        sel = cov & (z < dreg)
        if not sel.any():
            continue
        l0e = l0[:, :, None]
        l1e = l1[:, :, None]
        l2e = l2[:, :, None]
        shade = np.floor(l0e * c0 + l1e * c1 + l2e * c2 + 0.5)
        shade = np.clip(shade, 0.0, 255.0).astype(np.uint8)
        dreg[sel] = z[sel]
        creg[sel, :3] = shade[sel]
        creg[sel, 3] = 255


def mip_region(out, vol, dx, dy, dz, x0, y0, w, h, mural_w, mural_h, eye, rot, tanhalf, aspect, step):
    """Maximum-intensity projection of a unit-cube volume.

    Per pixel: camera ray through the pixel center, slab-clipped to
    [-0.5,0.5]^3, n = floor((t_exit - t_enter)/step) + 1 samples at
    t_enter + k*step, nearest-neighbor lookup with index clamping. Rays that
    miss produce 0.
    """
    px = np.arange(x0, x0 + w, dtype=np.float64)[None, :]
    py = np.arange(y0, y0 + h, dtype=np.float64)[:, None]
    a = (2.0 * (px + 0.5) / mural_w - 1.0) * tanhalf * aspect
    b = (1.0 - 2.0 * (py + 0.5) / mural_h) * tanhalf
    a, b = np.broadcast_arrays(a, b)
    d0 = rot[0, 0] * a + rot[0, 1] * b + rot[0, 2] * -1.0
    d1 = rot[1, 0] * a + rot[1, 1] * b + rot[1, 2] * -1.0
    d2 = rot[2, 0] * a + rot[2, 1] * b + rot[2, 2] * -1.0
    norm = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    d0 = d0 / norm
    d1 = d1 / norm
    d2 = d2 / norm

    t_enter = np.zeros_like(d0)
    t_exit = np.full_like(d0, np.inf)
    for e, dax in ((eye[0], d0), (eye[1], d1), (eye[2], d2)):
        nonpar = dax != 0.0
        dsafe = np.where(nonpar, dax, 1.0)
        ta = (-0.5 - e) / dsafe
        tb = (0.5 - e) / dsafe
        lo = np.where(nonpar, np.minimum(ta, tb), np.where(abs(e) <= 0.5, -np.inf, np.inf))
        hi = np.where(nonpar, np.maximum(ta, tb), np.where(abs(e) <= 0.5, np.inf, -np.inf))
        t_enter = np.maximum(t_enter, lo)
        t_exit = np.minimum(t_exit, hi)

    hit = t_exit >= t_enter
    out[:, :] = 0
    if not hit.any():
        return
    nsamp = np.where(hit, np.floor((t_exit - t_enter) / step) + 1.0, 0.0).astype(np.int64)
    kmax = int(nsamp.max())
    vol_flat = vol.reshape(-1)
    acc = np.zeros_like(out)
    fdx, fdy, fdz = float(dx), float(dy), float(dz)
    for k in range(kmax):
        live = nsamp > k
        if not live.any():
            break
        t = t_enter + k * step
        p0 = eye[0] + t * d0
        p1 = eye[1] + t * d1
        p2 = eye[2] + t * d2
        ix = np.floor((p0 + 0.5) * fdx).astype(np.int64)
        iy = np.floor((p1 + 0.5) * fdy).astype(np.int64)
        iz = np.floor((p2 + 0.5) * fdz).astype(np.int64)
        np.clip(ix, 0, dx - 1, out=ix)
        np.clip(iy, 0, dy - 1, out=iy)
        np.clip(iz, 0, dz - 1, out=iz)
        vals = vol_flat[ix + dx * (iy + dy * iz)]
        acc = np.maximum(acc, np.where(live, vals, 0))
    out[:, :] = acc
