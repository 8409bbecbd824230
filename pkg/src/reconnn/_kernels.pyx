# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Must stay bit-identical to ``_fallback``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def heat_advance(double[::1] T, const cnp.int64_t[:, ::1] nbr, const double[::1] G,
                 const double[::1] b, const double[::1] adiag, double coef,
                 Py_ssize_t n_steps, double[::1] trace=None):
    cdef Py_ssize_t n = T.shape[0]
    cdef Py_ssize_t step, i, k
    cdef double ti, acc, tmax
    cdef double[::1] cur = T
    cdef double[::1] nxt = np.empty(n, dtype=np.float64)
    cdef double[::1] tmp
    cdef double g0 = G[0], g1 = G[1], g2 = G[2], g3 = G[3], g4 = G[4], g5 = G[5]
    with nogil:
        for step in range(n_steps):
            for i in range(n):
                ti = cur[i]
                acc = g0 * (cur[nbr[0, i]] - ti)
                acc = acc + g1 * (cur[nbr[1, i]] - ti)
                acc = acc + g2 * (cur[nbr[2, i]] - ti)
                acc = acc + g3 * (cur[nbr[3, i]] - ti)
                acc = acc + g4 * (cur[nbr[4, i]] - ti)
                acc = acc + g5 * (cur[nbr[5, i]] - ti)
                acc = acc + (b[i] - adiag[i] * ti)
                nxt[i] = ti + coef * acc
            tmp = cur
            cur = nxt
            nxt = tmp
            if trace is not None:
                tmax = cur[0]
                for i in range(1, n):
                    if cur[i] > tmax:
                        tmax = cur[i]
                trace[step] = tmax
    if n_steps % 2 == 1:
        T[:] = cur


def col2im(const double[:, :, :, :, :, ::1] cols, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t stride):
    cdef Py_ssize_t nb = cols.shape[0], nc = cols.shape[1], k = cols.shape[2]
    cdef Py_ssize_t ho = cols.shape[4], wo = cols.shape[5]
    out_arr = np.zeros((nb, nc, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, ki, kj, i, j
    with nogil:
        for bi in range(nb):
            for ci in range(nc):
                for ki in range(k):
                    for kj in range(k):
                        for i in range(ho):
                            for j in range(wo):
                                out[bi, ci, ki + stride * i, kj + stride * j] += cols[bi, ci, ki, kj, i, j]
    return out_arr
