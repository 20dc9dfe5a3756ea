"""Backend selection for the summation kernel.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``CUSPLAB_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("CUSPLAB_BACKEND", "").lower() == "python":
        raise ImportError("fallback forced by environment")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def _batched(vrows, trows):
    vrows = np.asarray(vrows, dtype=float)
    trows = np.asarray(trows, dtype=float)
    single = vrows.ndim == 3
    if single:
        vrows, trows = vrows[None], trows[None]
    return vrows, trows, single


def form_sum(gam, pts, s, vrows, trows, adjoint, nthreads=1, backend=None):
    """Sum of extended-form values over ``gam[m] @ pts[q]`` per point ``q``.

    Returns ``(values, mass)`` with ``values`` of shape ``(Q, n+1, dimV)`` in
    local Hodge rows and ``mass[q] = sum_m t^s``.  With a leading batch axis
    on ``vrows``/``trows`` (several initial values sharing one pass over the
    terms) the values have shape ``(Q, B, n+1, dimV)``.
    """
    vrows, trows, single = _batched(vrows, trows)
    use = backend or BACKEND
    if use == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        out, mass = _compiled.form_sum(gam, pts, float(s), vrows, trows, bool(adjoint), int(nthreads))
    else:
        out, mass = _fallback.form_sum(gam, pts, float(s), vrows, trows, bool(adjoint), int(nthreads))
    return (out[:, 0] if single else out), mass


def form_terms(H, s, vrows, trows, adjoint):
    """Per-element values ``phi(H[m])``; batching as in ``form_sum``."""
    vrows, trows, single = _batched(vrows, trows)
    vals, ts = _fallback.form_terms(H, s, vrows, trows, adjoint)
    return (vals[:, 0] if single else vals), ts


iwasawa_standard = _fallback.iwasawa_standard
algebra_coords = _fallback.algebra_coords
