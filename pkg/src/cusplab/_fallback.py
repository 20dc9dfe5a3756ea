"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Both implementations take everything in the standard frame: coset
representatives and points are pre-conjugated by the frame rotation, and the
initial value is given as local Hodge rows (``vrows`` as algebra matrices for
the adjoint module, ``trows`` as scalars for the trivial one).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 4096


def algebra_coords(C: np.ndarray, n: int) -> np.ndarray:
    """Standard coordinates of a stack of so(n+1,1) matrices (closed form)."""
    last = n + 1
    idx = np.arange(1, n + 1)
    a0 = C[..., 0, idx]
    b = C[..., idx, last]
    parts = [(a0 - b) / 2, C[..., 0, last][..., None] / 2]
    parts += [C[..., i, j][..., None] for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    parts.append((a0 + b) / 2)
    return np.concatenate(parts, axis=-1)


def iwasawa_standard(H: np.ndarray):
    """Vectorised Iwasawa data for the standard frame: ``t``, translation ``x`` and ``k``."""
    N = H.shape[-1]
    n = N - 2
    last = N - 1
    p = H[..., :, last]
    y = 1.0 / (p[..., last] - p[..., 0])
    x = p[..., 1:n + 1] * y[..., None]
    t = np.sqrt(y)
    X = np.zeros(H.shape[:-2] + (N, N))
    X[..., 0, 1:n + 1] = -x
    X[..., 1:n + 1, 0] = x
    X[..., last, 1:n + 1] = -x
    X[..., 1:n + 1, last] = -x
    nil_inv = np.eye(N) + X + 0.5 * X @ X
    m1 = nil_inv @ H
    t2 = t * t
    ch = 0.5 * (1.0 / t2 + t2)
    sh = 0.5 * (1.0 / t2 - t2)
    k = m1.copy()
    k[..., 0, :] = ch[..., None] * m1[..., 0, :] + sh[..., None] * m1[..., last, :]
    k[..., last, :] = sh[..., None] * m1[..., 0, :] + ch[..., None] * m1[..., last, :]
    return t, x, k


def _active_rows(vrows, trows, adjoint):
    n = vrows.shape[1] - 1
    return [r for r in range(n + 1)
            if (np.any(vrows[:, r]) if adjoint else np.any(trows[:, r, 0]))]


def _terms(H, s, vrows, trows, rows, adjoint):
    n = H.shape[-1] - 2
    t, _, k = iwasawa_standard(H)
    R = k[..., :n + 1, :n + 1]
    ts = t ** s
    B = vrows.shape[0]
    if adjoint:
        dimV = (n + 2) * (n + 1) // 2
        out = np.zeros(H.shape[:-2] + (B, n + 1, dimV))
        kT = np.swapaxes(k, -1, -2)
        for b in range(B):
            for r in rows:
                c = algebra_coords(kT @ vrows[b, r] @ k, n)
                out[..., b, :, :] += R[..., r, :, None] * c[..., None, :]
    else:
        out = np.zeros(H.shape[:-2] + (B, n + 1, 1))
        for b in range(B):
            for r in rows:
                out[..., b, :, :] += R[..., r, :, None] * trows[b, r, 0]
    return out * ts[..., None, None, None], ts


def form_sum(gam, pts, s, vrows, trows, adjoint, nthreads=1):
    """``sum_m phi_b(gam[m] @ pts[q])`` for every point ``q`` and initial ``b``; also ``sum_m t^s``.

    ``vrows`` is ``(B, n+1, N, N)`` and ``trows`` is ``(B, n+1, 1)``; the result
    has shape ``(Q, B, n+1, dimV)``.
    """
    gam = np.ascontiguousarray(gam, dtype=float)
    pts = np.ascontiguousarray(pts, dtype=float)
    vrows = np.asarray(vrows, dtype=float)
    trows = np.asarray(trows, dtype=float)
    n = gam.shape[-1] - 2
    dimV = (n + 2) * (n + 1) // 2 if adjoint else 1
    B = vrows.shape[0] if adjoint else trows.shape[0]
    Q = pts.shape[0]
    rows = _active_rows(vrows, trows, adjoint)
    out = np.zeros((Q, B, n + 1, dimV))
    mass = np.zeros(Q)

    def work(q):
        acc = np.zeros((B, n + 1, dimV))
        m_acc = 0.0
        for lo in range(0, gam.shape[0], CHUNK):
            vals, ts = _terms(gam[lo:lo + CHUNK] @ pts[q], s, vrows, trows, rows, adjoint)
            acc += vals.sum(axis=0)
            m_acc += ts.sum()
        out[q] = acc
        mass[q] = m_acc

    if nthreads > 1 and Q > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as ex:
            list(ex.map(work, range(Q)))
    else:
        for q in range(Q):
            work(q)
    return out, mass


def form_terms(H, s, vrows, trows, adjoint):
    """Per-element values ``phi_b(H[m])`` (no summation), shape ``(M, B, n+1, dimV)``."""
    H = np.ascontiguousarray(H, dtype=float)
    vrows = np.asarray(vrows, dtype=float)
    trows = np.asarray(trows, dtype=float)
    vals, ts = _terms(H, s, vrows, trows, _active_rows(vrows, trows, adjoint), adjoint)
    return vals, ts
