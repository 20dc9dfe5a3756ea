# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled Eisenstein summation kernel.

Mirrors ``cusplab._fallback.form_sum``: for each point ``q`` the terms
``phi(gam[m] @ pts[q])`` are accumulated sequentially in ``m`` order, so the
result does not depend on the number of threads.
"""
import numpy as np
from cython.parallel cimport prange
from libc.math cimport sqrt, pow

cdef enum:
    MAXN = 5
    MAXV = 10


cdef inline double _entry(double[MAXN][MAXN] k, double[MAXN][MAXN] tmp, int a, int b, int N) noexcept nogil:
    # (k^T tmp)[a][b]
    cdef double acc = 0.0
    cdef int l
    for l in range(N):
        acc = acc + k[l][a] * tmp[l][b]
    return acc


cdef void _point_sum(const double[:, :, ::1] gam, const double[:, ::1] pt, double s,
                     const double[:, :, :, ::1] vrows, const double[:, :, ::1] trows,
                     const int* rows, int nrows, int adjoint, int n,
                     double* out, double* mass) noexcept nogil:
    cdef int N = n + 2
    cdef int last = N - 1
    cdef int dimV = (N * (N - 1)) // 2 if adjoint else 1
    cdef double h[MAXN][MAXN]
    cdef double nil[MAXN][MAXN]
    cdef double m1[MAXN][MAXN]
    cdef double tmp[MAXN][MAXN]
    cdef double coords[MAXV]
    cdef double x[MAXN]
    cdef double y, t, ts, t2, ch, sh, acc, r0, rl, sq
    cdef Py_ssize_t m, M = gam.shape[0]
    cdef int i, j, l, ri, r, c, b
    cdef int B = vrows.shape[0] if adjoint else trows.shape[0]
    cdef int stride = (n + 1) * dimV
    for m in range(M):
        for i in range(N):
            for j in range(N):
                acc = 0.0
                for l in range(N):
                    acc = acc + gam[m, i, l] * pt[l, j]
                h[i][j] = acc
        y = 1.0 / (h[last][last] - h[0][last])
        t = sqrt(y)
        for i in range(1, n + 1):
            x[i] = h[i][last] * y
        # nil(-x) = I + X + X^2 / 2
        for i in range(N):
            for j in range(N):
                tmp[i][j] = 0.0
        for i in range(1, n + 1):
            tmp[0][i] = -x[i]
            tmp[i][0] = x[i]
            tmp[last][i] = -x[i]
            tmp[i][last] = -x[i]
        for i in range(N):
            for j in range(N):
                acc = 0.0
                for l in range(N):
                    acc = acc + tmp[i][l] * tmp[l][j]
                nil[i][j] = tmp[i][j] + 0.5 * acc
            nil[i][i] = nil[i][i] + 1.0
        for i in range(N):
            for j in range(N):
                acc = 0.0
                for l in range(N):
                    acc = acc + nil[i][l] * h[l][j]
                m1[i][j] = acc
        t2 = t * t
        ch = 0.5 * (1.0 / t2 + t2)
        sh = 0.5 * (1.0 / t2 - t2)
        for j in range(N):
            r0 = m1[0][j]
            rl = m1[last][j]
            m1[0][j] = ch * r0 + sh * rl
            m1[last][j] = sh * r0 + ch * rl
        # m1 now holds k
        ts = pow(t, s)
        mass[0] = mass[0] + ts
        for b in range(B):
            for ri in range(nrows):
                r = rows[ri]
                if adjoint:
                    # tmp = V_r k; only the entries of k^T V_r k that enter the
                    # coordinates are formed
                    for i in range(N):
                        for j in range(N):
                            acc = 0.0
                            for l in range(N):
                                acc = acc + vrows[b, r, i, l] * m1[l][j]
                            tmp[i][j] = acc
                    c = 0
                    for i in range(1, n + 1):
                        coords[c] = 0.5 * (_entry(m1, tmp, 0, i, N) - _entry(m1, tmp, i, last, N))
                        c = c + 1
                    coords[c] = 0.5 * _entry(m1, tmp, 0, last, N)
                    c = c + 1
                    for i in range(1, n + 1):
                        for j in range(i + 1, n + 1):
                            coords[c] = _entry(m1, tmp, i, j, N)
                            c = c + 1
                    for i in range(1, n + 1):
                        coords[c] = 0.5 * (_entry(m1, tmp, 0, i, N) + _entry(m1, tmp, i, last, N))
                        c = c + 1
                else:
                    coords[0] = trows[b, r, 0]
                for i in range(n + 1):
                    sq = ts * m1[r][i]
                    for c in range(dimV):
                        out[b * stride + i * dimV + c] = out[b * stride + i * dimV + c] + sq * coords[c]


def form_sum(gam, pts, double s, vrows, trows, bint adjoint, int nthreads=1):
    """``sum_m phi_b(gam[m] @ pts[q])`` for every point ``q`` and initial ``b``; also ``sum_m t^s``.

    ``vrows`` is ``(B, n+1, N, N)`` and ``trows`` is ``(B, n+1, 1)``; the result
    has shape ``(Q, B, n+1, dimV)``.
    """
    cdef const double[:, :, ::1] g = np.ascontiguousarray(gam, dtype=np.float64)
    cdef const double[:, :, ::1] p = np.ascontiguousarray(pts, dtype=np.float64)
    vrows = np.ascontiguousarray(vrows, dtype=np.float64)
    trows = np.ascontiguousarray(trows, dtype=np.float64)
    cdef const double[:, :, :, ::1] vr = vrows
    cdef const double[:, :, ::1] tr = trows
    cdef int n = g.shape[2] - 2
    if n < 1 or n > 3:
        raise ValueError("compiled kernel supports n = 1, 2, 3")
    cdef int dimV = ((n + 2) * (n + 1)) // 2 if adjoint else 1
    cdef int B = vrows.shape[0] if adjoint else trows.shape[0]
    cdef Py_ssize_t Q = p.shape[0]
    row_list = [r for r in range(n + 1)
                if (np.any(vrows[:, r]) if adjoint else np.any(trows[:, r, 0]))]
    cdef int[::1] rows = np.asarray(row_list if row_list else [0], dtype=np.intc)
    cdef int nrows = len(row_list)
    out_arr = np.zeros((Q, B, n + 1, dimV))
    mass_arr = np.zeros(Q)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[::1] mass = mass_arr
    cdef Py_ssize_t q
    cdef int ad = 1 if adjoint else 0
    if nthreads < 1:
        nthreads = 1
    for q in prange(Q, nogil=True, num_threads=nthreads, schedule="static"):
        _point_sum(g, p[q], s, vr, tr, &rows[0], nrows, ad, n, &out[q, 0, 0, 0], &mass[q])
    return out_arr, mass_arr
