# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: triangle fill and volume MIP.

Arithmetic mirrors _kernels_py exactly (int64 coverage, float64
interpolation, identical expression order); the build pins
-ffp-contract=off so results stay bit-identical to the numpy fallback.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt, fabs, INFINITY

ctypedef long long i64


cdef inline bint _is_top_left(i64 ax, i64 ay, i64 bx, i64 by) nogil:
    cdef i64 dy = by - ay
    return (dy == 0 and (bx - ax) > 0) or dy < 0


def fill_triangles(
    unsigned char[:, :, ::1] color,
    float[:, ::1] depth,
    i64 ox, i64 oy, i64 sx0, i64 sy0, i64 sx1, i64 sy1,
    i64[:, ::1] xi, i64[:, ::1] yi,
    double[:, ::1] z01, double[:, :, ::1] rgb,
):
    cdef Py_ssize_t n = xi.shape[0]
    cdef Py_ssize_t t
    cdef i64 x0, x1, x2, y0, y1, y2, tmp
    cdef double z0, z1, z2, zswap
    cdef double c0r, c0g, c0b, c1r, c1g, c1b, c2r, c2g, c2b, cswap
    cdef i64 area2, mnx, mxx, mny, mxy, pxmin, pxmax, pymin, pymax
    cdef i64 b0, b1, b2, w0, w1, w2, cx, cy, px, py
    cdef double inv, l0, l1, l2, z, sr, sg, sb
    cdef float zf

    with nogil:
        for t in range(n):
            x0 = xi[t, 0]; x1 = xi[t, 1]; x2 = xi[t, 2]
            y0 = yi[t, 0]; y1 = yi[t, 1]; y2 = yi[t, 2]
            z0 = z01[t, 0]; z1 = z01[t, 1]; z2 = z01[t, 2]
            c0r = rgb[t, 0, 0]; c0g = rgb[t, 0, 1]; c0b = rgb[t, 0, 2]
            c1r = rgb[t, 1, 0]; c1g = rgb[t, 1, 1]; c1b = rgb[t, 1, 2]
            c2r = rgb[t, 2, 0]; c2g = rgb[t, 2, 1]; c2b = rgb[t, 2, 2]

            area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            if area2 == 0:
                continue
            if area2 < 0:
                tmp = x1; x1 = x2; x2 = tmp
                tmp = y1; y1 = y2; y2 = tmp
                zswap = z1; z1 = z2; z2 = zswap
                cswap = c1r; c1r = c2r; c2r = cswap
                cswap = c1g; c1g = c2g; c2g = cswap
                cswap = c1b; c1b = c2b; c2b = cswap
                area2 = -area2

            mnx = x0
            if x1 < mnx: mnx = x1
            if x2 < mnx: mnx = x2
            mxx = x0
            if x1 > mxx: mxx = x1
            if x2 > mxx: mxx = x2
            mny = y0
            if y1 < mny: mny = y1
            if y2 < mny: mny = y2
            mxy = y0
            if y1 > mxy: mxy = y1
            if y2 > mxy: mxy = y2

            pxmin = (mnx - 128 + 255) >> 8
            if pxmin < sx0: pxmin = sx0
            pxmax = (mxx - 128) >> 8
            if pxmax > sx1 - 1: pxmax = sx1 - 1
            pymin = (mny - 128 + 255) >> 8
            if pymin < sy0: pymin = sy0
            pymax = (mxy - 128) >> 8
            if pymax > sy1 - 1: pymax = sy1 - 1
            if pxmin > pxmax or pymin > pymax:
                continue

            b0 = 0 if _is_top_left(x1, y1, x2, y2) else -1
            b1 = 0 if _is_top_left(x2, y2, x0, y0) else -1
            b2 = 0 if _is_top_left(x0, y0, x1, y1) else -1

            inv = 1.0 / (<double> area2)
            for py in range(pymin, pymax + 1):
                cy = (py << 8) + 128
                for px in range(pxmin, pxmax + 1):
                    cx = (px << 8) + 128
                    w0 = (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1)
                    if w0 + b0 < 0:
                        continue
                    w1 = (x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2)
                    if w1 + b1 < 0:
                        continue
                    w2 = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)
                    if w2 + b2 < 0:
                        continue
                    l0 = w0 * inv
                    l1 = w1 * inv
                    l2 = w2 * inv
                    z = l0 * z0 + l1 * z1 + l2 * z2
                    if z < 0.0: z = 0.0
                    if z > 1.0: z = 1.0
                    zf = <float> z
                    if zf < depth[py - oy, px - ox]:
                        depth[py - oy, px - ox] = zf
                        sr = floor(l0 * c0r + l1 * c1r + l2 * c2r + 0.5)
                        sg = floor(l0 * c0g + l1 * c1g + l2 * c2g + 0.5)
                        sb = floor(l0 * c0b + l1 * c1b + l2 * c2b + 0.5)
                        if sr < 0.0: sr = 0.0
                        if sr > 255.0: sr = 255.0
                        if sg < 0.0: sg = 0.0
                        if sg > 255.0: sg = 255.0
                        if sb < 0.0: sb = 0.0
                        if sb > 255.0: sb = 255.0
                        color[py - oy, px - ox, 0] = <unsigned char> sr
                        color[py - oy, px - ox, 1] = <unsigned char> sg
                        color[py - oy, px - ox, 2] = <unsigned char> sb
                        color[py - oy, px - ox, 3] = 255


def mip_region(
    unsigned char[:, ::1] out,
    const unsigned char[::1] vol,
    i64 dx, i64 dy, i64 dz,
    i64 x0, i64 y0, i64 w, i64 h,
    i64 mural_w, i64 mural_h,
    double[::1] eye, double[:, ::1] rot,
    double tanhalf, double aspect, double step,
):
    cdef i64 row, col, px, py
    cdef double a, b, d0, d1, d2, norm
    cdef double e0 = eye[0], e1 = eye[1], e2 = eye[2]
    cdef double r00 = rot[0, 0], r01 = rot[0, 1], r02 = rot[0, 2]
    cdef double r10 = rot[1, 0], r11 = rot[1, 1], r12 = rot[1, 2]
    cdef double r20 = rot[2, 0], r21 = rot[2, 1], r22 = rot[2, 2]
    cdef double t_enter, t_exit, lo, hi, ta, tb, e, dax, t, p0, p1, p2
    cdef double fdx = <double> dx, fdy = <double> dy, fdz = <double> dz
    cdef i64 nsamp, k, ix, iy, iz, axis
    cdef unsigned char best, v

    with nogil:
        for row in range(h):
            py = y0 + row
            b = (1.0 - 2.0 * ((<double> py) + 0.5) / (<double> mural_h)) * tanhalf
            for col in range(w):
                px = x0 + col
                a = (2.0 * ((<double> px) + 0.5) / (<double> mural_w) - 1.0) * tanhalf * aspect
                d0 = r00 * a + r01 * b + r02 * -1.0
                d1 = r10 * a + r11 * b + r12 * -1.0
                d2 = r20 * a + r21 * b + r22 * -1.0
                norm = sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                d0 = d0 / norm
                d1 = d1 / norm
                d2 = d2 / norm

                t_enter = 0.0
                t_exit = INFINITY
                for axis in range(3):
                    if axis == 0:
                        e = e0; dax = d0
                    elif axis == 1:
                        e = e1; dax = d1
                    else:
                        e = e2; dax = d2
                    if dax != 0.0:
                        ta = (-0.5 - e) / dax
                        tb = (0.5 - e) / dax
                        if ta < tb:
                            lo = ta; hi = tb
                        else:
                            lo = tb; hi = ta
                    else:
                        if fabs(e) <= 0.5:
                            lo = -INFINITY; hi = INFINITY
                        else:
                            lo = INFINITY; hi = -INFINITY
                    if lo > t_enter: t_enter = lo
                    if hi < t_exit: t_exit = hi

                best = 0
                if t_exit >= t_enter:
                    nsamp = <i64> (floor((t_exit - t_enter) / step) + 1.0)
                    for k in range(nsamp):
                        t = t_enter + (<double> k) * step
                        p0 = e0 + t * d0
                        p1 = e1 + t * d1
                        p2 = e2 + t * d2
                        ix = <i64> floor((p0 + 0.5) * fdx)
                        iy = <i64> floor((p1 + 0.5) * fdy)
                        iz = <i64> floor((p2 + 0.5) * fdz)
                        if ix < 0: ix = 0
                        if ix > dx - 1: ix = dx - 1
                        if iy < 0: iy = 0
                        if iy > dy - 1: iy = dy - 1
                        if iz < 0: iz = 0
                        if iz > dz - 1: iz = dz - 1
                        v = vol[ix + dx * (iy + dy * iz)]
                        if v > best:
                            best = v
                out[row, col] = best
