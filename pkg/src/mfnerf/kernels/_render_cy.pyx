# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled volume-render kernels (float64 grids).

Must stay functionally identical to _render_np: same signatures, same
cache layout, same math; only the loop structure differs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, floor, log1p

cnp.import_array()


cdef inline double _softplus(double x) nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def forward(params, bbox_min, bbox_max, origins, dirs, t_vals, double t_far, background):
    cdef double[:, :, :, ::1] P = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] bmin = np.ascontiguousarray(bbox_min, dtype=np.float64)
    cdef double[::1] bmax = np.ascontiguousarray(bbox_max, dtype=np.float64)
    cdef double[:, ::1] O = np.ascontiguousarray(origins, dtype=np.float64)
    cdef double[:, ::1] D = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef double[:, ::1] T_VALS = np.ascontiguousarray(t_vals, dtype=np.float64)
    cdef double[::1] bg = np.ascontiguousarray(background, dtype=np.float64)

    cdef Py_ssize_t n_rays = O.shape[0]
    cdef Py_ssize_t n_samp = T_VALS.shape[1]
    cdef Py_ssize_t nx = P.shape[0], ny = P.shape[1], nz = P.shape[2]

    colors_np = np.zeros((n_rays, 3))
    depths_np = np.zeros(n_rays)
    opac_np = np.zeros(n_rays)
    idx_np = np.zeros((n_rays, n_samp, 3), dtype=np.int32)
    frac_np = np.zeros((n_rays, n_samp, 3))
    inside_np = np.zeros((n_rays, n_samp), dtype=np.uint8)
    sigma_np = np.zeros((n_rays, n_samp))
    rgb_np = np.zeros((n_rays, n_samp, 3))
    alpha_np = np.zeros((n_rays, n_samp))

    cdef double[:, ::1] colors = colors_np
    cdef double[::1] depths = depths_np
    cdef double[::1] opac = opac_np
    cdef int[:, :, ::1] idx = idx_np
    cdef double[:, :, ::1] frac = frac_np
    cdef unsigned char[:, ::1] inside = inside_np
    cdef double[:, ::1] sigma = sigma_np
    cdef double[:, :, ::1] rgb = rgb_np
    cdef double[:, ::1] alpha = alpha_np

    cdef Py_ssize_t n, s, ax, c, dx, dy, dz, ix, iy, iz
    cdef double t, delta, trans, a, w, sg, p, u, f
    cdef double pos[3]
    cdef int cell[3]
    cdef double fr[3]
    cdef double raw[4]
    cdef double wc
    cdef int res[3]
    cdef bint is_in
    res[0] = <int> nx
    res[1] = <int> ny
    res[2] = <int> nz

    with nogil:
        for n in range(n_rays):
            trans = 1.0
            for s in range(n_samp):
                t = T_VALS[n, s]
                if s < n_samp - 1:
                    delta = T_VALS[n, s + 1] - t
                else:
                    delta = t_far - t
                is_in = True
                for ax in range(3):
                    p = O[n, ax] + t * D[n, ax]
                    pos[ax] = p
                    if p < bmin[ax] or p > bmax[ax]:
                        is_in = False
                if is_in:
                    for ax in range(3):
                        u = (pos[ax] - bmin[ax]) / (bmax[ax] - bmin[ax]) * (res[ax] - 1)
                        ix = <Py_ssize_t> floor(u)
                        if ix < 0:
                            ix = 0
                        if ix > res[ax] - 2:
                            ix = res[ax] - 2
                        f = u - ix
                        if f < 0.0:
                            f = 0.0
                        if f > 1.0:
                            f = 1.0
                        cell[ax] = <int> ix
                        fr[ax] = f
                        idx[n, s, ax] = <int> ix
                        frac[n, s, ax] = f
                    for c in range(4):
                        raw[c] = 0.0
                    for dx in range(2):
                        for dy in range(2):
                            for dz in range(2):
                                wc = (fr[0] if dx else 1.0 - fr[0]) * (fr[1] if dy else 1.0 - fr[1]) * (fr[2] if dz else 1.0 - fr[2])
                                ix = cell[0] + dx
                                iy = cell[1] + dy
                                iz = cell[2] + dz
                                for c in range(4):
                                    raw[c] += wc * P[ix, iy, iz, c]
                    sg = _softplus(raw[0])
                    sigma[n, s] = sg
                    for c in range(3):
                        rgb[n, s, c] = _sigmoid(raw[c + 1])
                    inside[n, s] = 1
                else:
                    sg = 0.0
                a = 1.0 - exp(-sg * delta)
                alpha[n, s] = a
                w = trans * a
                for c in range(3):
                    colors[n, c] += w * rgb[n, s, c]
                depths[n] += w * t
                opac[n] += w
                trans *= 1.0 - a
            for c in range(3):
                colors[n, c] += (1.0 - opac[n]) * bg[c]
            depths[n] += (1.0 - opac[n]) * t_far

    cache = (idx_np, frac_np, inside_np, sigma_np, rgb_np, alpha_np)
    return colors_np, depths_np, opac_np, cache


def backward(params, cache, t_vals, double t_far, background, grad_color, grad_depth, grad_opac):
    idx_np, frac_np, inside_np, sigma_np, rgb_np, alpha_np = cache
    cdef int[:, :, ::1] idx = idx_np
    cdef double[:, :, ::1] frac = frac_np
    cdef unsigned char[:, ::1] inside = inside_np
    cdef double[:, ::1] sigma = sigma_np
    cdef double[:, :, ::1] rgb = rgb_np
    cdef double[:, ::1] alpha = alpha_np
    cdef double[:, ::1] T_VALS = np.ascontiguousarray(t_vals, dtype=np.float64)
    cdef double[::1] bg = np.ascontiguousarray(background, dtype=np.float64)
    cdef double[:, ::1] gC = np.ascontiguousarray(grad_color, dtype=np.float64)
    cdef double[::1] gD = np.ascontiguousarray(grad_depth, dtype=np.float64)
    cdef double[::1] gW = np.ascontiguousarray(grad_opac, dtype=np.float64)

    cdef Py_ssize_t nx = params.shape[0], ny = params.shape[1], nz = params.shape[2]
    cdef Py_ssize_t n_rays = T_VALS.shape[0], n_samp = T_VALS.shape[1]

    grad_np = np.zeros((nx, ny, nz, 4))
    cdef double[:, :, :, ::1] grad = grad_np
    g_np = np.zeros(n_samp)
    acc_np = np.zeros(n_samp)
    cdef double[::1] g = g_np
    cdef double[::1] acc = acc_np

    cdef Py_ssize_t n, s, c, dx, dy, dz, ix, iy, iz
    cdef double t, delta, trans, a, w, d_alpha, d_sigma, wc
    cdef double draw[4]

    with nogil:
        for n in range(n_rays):
            for s in range(n_samp):
                t = T_VALS[n, s]
                g[s] = gD[n] * (t - t_far) + gW[n]
                for c in range(3):
                    g[s] += gC[n, c] * (rgb[n, s, c] - bg[c])
            acc[n_samp - 1] = 0.0
            for s in range(n_samp - 2, -1, -1):
                acc[s] = alpha[n, s + 1] * g[s + 1] + (1.0 - alpha[n, s + 1]) * acc[s + 1]
            trans = 1.0
            for s in range(n_samp):
                a = alpha[n, s]
                if inside[n, s]:
                    if s < n_samp - 1:
                        delta = T_VALS[n, s + 1] - T_VALS[n, s]
                    else:
                        delta = t_far - T_VALS[n, s]
                    w = trans * a
                    d_alpha = trans * (g[s] - acc[s])
                    d_sigma = d_alpha * delta * (1.0 - a)
                    draw[0] = d_sigma * (1.0 - exp(-sigma[n, s]))
                    for c in range(3):
                        draw[c + 1] = w * gC[n, c] * rgb[n, s, c] * (1.0 - rgb[n, s, c])
                    for dx in range(2):
                        for dy in range(2):
                            for dz in range(2):
                                wc = (frac[n, s, 0] if dx else 1.0 - frac[n, s, 0]) * (frac[n, s, 1] if dy else 1.0 - frac[n, s, 1]) * (frac[n, s, 2] if dz else 1.0 - frac[n, s, 2])
                                ix = idx[n, s, 0] + dx
                                iy = idx[n, s, 1] + dy
                                iz = idx[n, s, 2] + dz
                                for c in range(4):
                                    grad[ix, iy, iz, c] += wc * draw[c]
                trans *= 1.0 - a
    return grad_np
