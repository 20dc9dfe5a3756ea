"""Module-valued n-forms as functions on G, their degree-s extensions and sums.

A form value at a group element is an element of
``Hom(Lambda^n(a_xi + n_xi), V)``.  :class:`FormValue` stores it relative to a
parabolic frame: ``pure`` is the value on ``(u_1, ..., u_n)`` and ``dt[p]`` the
value on ``(T, u_I)`` where ``I`` is the p-th (n-1)-subset in lexicographic
order, i.e. the coefficient of ``dt/t ^ u*_I``.  Module coordinates are
frame-local (see :mod:`cusplab.cohomology`).

Internally values are kept as *Hodge rows*: the projection of ``a + n`` to
``p = T_O`` sends ``T`` to ``2 e_0`` and ``u_i`` to ``e_i``, and an n-form on
the (n+1)-dimensional space ``p`` is ``omega(v_1..v_n) = det[w, v_1..v_n]``
for a vector ``w`` with module-valued entries.  Then ``pure = w_0`` and the
dt-coefficient of the subset missing ``i`` is ``2 (-1)^(i+1) w_{i+1}``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import kernels, lie
from .cohomology import from_local, multi_indices, to_local
from .geometry import ParabolicFrame
from .lie import CoefficientModule, ModuleKind


class FormError(ValueError):
    """Invalid form data or evaluation request."""


class DivergenceWarning(RuntimeWarning):
    """Truncated series whose increments are not shrinking."""


# ---------------------------------------------------------------------------
# values

def _missing(n: int) -> list[int]:
    # index i in 0..n-1 left out by the p-th lexicographic (n-1)-subset
    return [next(i for i in range(n) if i not in I) for I in multi_indices(n, n - 1)]


@dataclass(frozen=True)
class FormValue:
    pure: np.ndarray
    dt: np.ndarray

    @property
    def n(self) -> int:
        return self.dt.shape[0]

    @property
    def dim_module(self) -> int:
        return self.pure.shape[-1]

    @classmethod
    def zeros(cls, n: int, dimV: int) -> "FormValue":
        return cls(np.zeros(dimV), np.zeros((n, dimV)))

    @classmethod
    def from_hodge(cls, W: np.ndarray) -> "FormValue":
        W = np.asarray(W, dtype=float)
        n = W.shape[0] - 1
        dt = np.zeros((n, W.shape[1]))
        for p, i in enumerate(_missing(n)):
            dt[p] = 2.0 * (-1) ** (i + 1) * W[i + 1]
        return cls(W[0].copy(), dt)

    def to_hodge(self) -> np.ndarray:
        n = self.n
        W = np.zeros((n + 1, self.dim_module))
        W[0] = self.pure
        for p, i in enumerate(_missing(n)):
            W[i + 1] = 0.5 * (-1) ** (i + 1) * self.dt[p]
        return W

    def flat(self) -> np.ndarray:
        return np.concatenate([self.pure, self.dt.ravel()])

    @classmethod
    def from_flat(cls, v, n: int, dimV: int) -> "FormValue":
        v = np.asarray(v, dtype=float)
        return cls(v[:dimV].copy(), v[dimV:].reshape(n, dimV).copy())

    def norm(self) -> float:
        """Frobenius norm of the coefficient tensor."""
        return float(np.linalg.norm(self.flat()))

    def __add__(self, other: "FormValue") -> "FormValue":
        return FormValue(self.pure + other.pure, self.dt + other.dt)

    def __sub__(self, other: "FormValue") -> "FormValue":
        return FormValue(self.pure - other.pure, self.dt - other.dt)

    def __mul__(self, c: float) -> "FormValue":
        return FormValue(self.pure * c, self.dt * c)

    __rmul__ = __mul__

    def transport(self, k_rel: np.ndarray, adjoint: bool) -> "FormValue":
        """Re-express a value given in frame F' in frame F, with ``k_rel = k_F^T k_F'``."""
        n = self.n
        W = self.to_hodge()
        R = k_rel[:n + 1, :n + 1]
        W = R @ W
        if adjoint:
            M = lie.adjoint_matrix(k_rel)
            W = W @ M.T
        return FormValue.from_hodge(W)


def evaluate_on(W: np.ndarray, vectors: list[np.ndarray]) -> np.ndarray:
    """Value of the Hodge-row form ``W`` on n tangent vectors given in p-coordinates."""
    n = W.shape[0] - 1
    P = np.stack(vectors, axis=1)
    out = np.zeros(W.shape[1])
    for j in range(n + 1):
        M = np.zeros((n + 1, n + 1))
        M[j, 0] = 1.0
        M[:, 1:] = P
        d = np.linalg.det(M)
        if d:
            out += d * W[j]
    return out


# ---------------------------------------------------------------------------
# extended forms

@dataclass(frozen=True)
class ExtendedForm:
    """``phi(n a k) = Ad*(k^-1) (x) rho(k^-1) (initial) * t_a^s`` relative to ``frame``."""

    frame: ParabolicFrame = field(repr=False)
    module: CoefficientModule = field(repr=False)
    initial: FormValue
    s: float
    weight_tag: int | None = None

    @property
    def n(self) -> int:
        return self.frame.n

    def _rows(self):
        W = self.initial.to_hodge()
        n = self.n
        N = n + 2
        if self.module.is_adjoint:
            vrows = lie.from_coordinates(W, n)
            trows = np.zeros((n + 1, 1))
        else:
            vrows = np.zeros((n + 1, N, N))
            trows = W[:, :1].copy()
        return vrows, trows

    def hodge_sum(self, gammas: np.ndarray, points: np.ndarray, nthreads: int = 1,
                  backend: str | None = None):
        """``sum_m phi(gammas[m] @ points[q])`` as local Hodge rows, and ``sum_m t^s``."""
        k = self.frame.k
        gam = np.einsum("ji,mjk,kl->mil", k, np.asarray(gammas, dtype=float), k)
        pts = np.einsum("ji,qjk,kl->qil", k, np.asarray(points, dtype=float), k)
        vrows, trows = self._rows()
        return kernels.form_sum(gam, pts, self.s, vrows, trows, self.module.is_adjoint,
                                nthreads=nthreads, backend=backend)

    def hodge(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        single = points.ndim == 2
        P = points[None] if single else points
        vals, _ = self.hodge_sum(np.eye(self.n + 2)[None], P)
        return vals[0] if single else vals

    def __call__(self, g) -> FormValue:
        return FormValue.from_hodge(self.hodge(np.asarray(g, dtype=float)))

    def with_s(self, s: float) -> "ExtendedForm":
        return ExtendedForm(self.frame, self.module, self.initial, float(s), self.weight_tag)

    def with_initial(self, initial: FormValue, weight_tag=None) -> "ExtendedForm":
        return ExtendedForm(self.frame, self.module, initial, self.s, weight_tag)


def batch_hodge_sum(forms: list, gammas: np.ndarray, points: np.ndarray, nthreads: int = 1,
                    backend: str | None = None):
    """``hodge_sum`` for several forms sharing frame, module and ``s`` in one pass.

    Values have shape ``(Q, B, n+1, dimV)``.
    """
    f0 = forms[0]
    if any(f.frame is not f0.frame and not np.array_equal(f.frame.k, f0.frame.k) for f in forms) \
            or any(f.module.kind != f0.module.kind or f.s != f0.s for f in forms):
        raise FormError("batched forms must share frame, module and s")
    k = f0.frame.k
    gam = np.einsum("ji,mjk,kl->mil", k, np.asarray(gammas, dtype=float), k)
    pts = np.einsum("ji,qjk,kl->qil", k, np.asarray(points, dtype=float), k)
    rows = [f._rows() for f in forms]
    vrows = np.stack([r[0] for r in rows])
    trows = np.stack([r[1] for r in rows])
    return kernels.form_sum(gam, pts, f0.s, vrows, trows, f0.module.is_adjoint,
                            nthreads=nthreads, backend=backend)


def phi(frame: ParabolicFrame, module: CoefficientModule, v_xi=1.0, *, local: bool = False,
        allow_mixed: bool = False) -> ExtendedForm:
    """The horospherical form ``(u*_1 ^ ... ^ u*_n) (x) v_xi`` (degree 0 extension).

    For the adjoint module ``v_xi`` must lie in V_-2 of the frame (global
    standard coordinates unless ``local``).  ``allow_mixed`` accepts any
    single-weight vector (used for the closedness sweep).
    """
    n = frame.n
    if not module.is_adjoint:
        v = np.atleast_1d(np.asarray(v_xi, dtype=float)).reshape(1)
        return ExtendedForm(frame, module, FormValue(v, np.zeros((n, 1))), 0.0, None)
    v = np.asarray(v_xi, dtype=float)
    c = v if local else to_local(v, frame, module)
    tag = weight_of(c, n)
    if tag is None:
        raise FormError("initial vector mixes weights; decompose it first")
    if tag != -2 and not allow_mixed:
        raise FormError(f"initial vector has weight {tag}, expected -2")
    return ExtendedForm(frame, module, FormValue(c, np.zeros((n, c.size))), 0.0, tag)


def weight_of(c: np.ndarray, n: int, tol: float = 1e-12) -> int | None:
    """Weight of a frame-local adjoint vector, or None when it mixes weights."""
    scale = max(1.0, float(np.max(np.abs(c))))
    present = [w for w, sl in lie.weight_slices(n).items() if np.max(np.abs(c[sl])) > tol * scale]
    if len(present) == 1:
        return present[0]
    if not present:
        return -2
    return None


def extend(form: ExtendedForm, s: float) -> ExtendedForm:
    return form.with_s(s)


def differential(form: ExtendedForm) -> float:
    """Coefficient ``c`` with ``d(form) = c * dt/t ^ form``.

    The T-derivative contributes ``s``, ``rho(T)`` contributes the weight and
    the bracket terms ``[T, u_i] = 2 u_i`` contribute ``-2n``.
    """
    if np.any(form.initial.dt):
        raise FormError("differential() needs a pure-n initial value")
    n = form.n
    if not form.module.is_adjoint:
        return form.s - 2 * n
    tag = weight_of(form.initial.pure, n)
    if tag is None:
        raise FormError("initial vector mixes weights; decompose it first")
    return form.s - 2 * n + tag


# ---------------------------------------------------------------------------
# finite differences

_STENCILS = {2: ((1, 0.5), (-1, -0.5)),
             4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))}


def _p_vector(X: np.ndarray) -> np.ndarray:
    n = X.shape[0] - 2
    return X[:n + 1, -1].copy()


def frame_vectors(n: int) -> list[np.ndarray]:
    """``T, u_1..u_n`` of the standard frame (local algebra matrices)."""
    return [lie.cartan_generator(n).astype(float)] + [u.astype(float) for u in lie.nilpotent_basis(n)]


def fd_differential(evaluate, g, frame: ParabolicFrame, module: CoefficientModule,
                    h: float = 1e-3, order: int = 2) -> np.ndarray:
    """``d(omega)(T, u_1, .., u_n)`` at ``g`` by the coboundary formula.

    ``evaluate`` maps a stack of group elements to local Hodge rows relative
    to ``frame``; directional derivatives use central differences along
    ``g exp(+-h X)``.  Returns a module vector (frame-local coordinates).
    """
    from scipy.linalg import expm

    if order not in _STENCILS:
        raise FormError(f"stencil order must be one of {sorted(_STENCILS)}")
    n = frame.n
    g = np.asarray(g, dtype=float)
    Xs_loc = frame_vectors(n)
    Xs = [frame.from_standard(X) for X in Xs_loc]
    stencil = _STENCILS[order]
    pts = [g]
    for X in Xs:
        for m, _ in stencil:
            pts.append(g @ expm(m * h * X))
    vals = np.asarray(evaluate(np.array(pts)))
    W0 = vals[0]
    derivs = []
    pos = 1
    for _ in Xs:
        D = np.zeros_like(W0)
        for _, c in stencil:
            D += c * vals[pos]
            pos += 1
        derivs.append(D / h)
    pvec = [_p_vector(X) for X in Xs_loc]
    adj = module.is_adjoint
    ad = [lie.ad_matrix(X) for X in Xs_loc] if adj else None
    k = len(Xs)
    out = np.zeros(W0.shape[1])
    for i in range(k):
        rest = [pvec[j] for j in range(k) if j != i]
        term = evaluate_on(derivs[i], rest)
        if adj:
            term = term + ad[i] @ evaluate_on(W0, rest)
        out += (-1) ** i * term
    # bracket terms: only [T, u_j] = 2 u_j is nonzero
    for j in range(1, k):
        br = 2.0 * pvec[j]
        rest = [pvec[l] for l in range(1, k) if l != j]
        out += (-1) ** j * evaluate_on(W0, [br] + rest)
    return out


def dlogt_wedge(evaluate, g, frame: ParabolicFrame) -> np.ndarray:
    """``(dt/t ^ omega)(T, u_1..u_n)`` at ``g`` (reference for ``c``)."""
    n = frame.n
    g = np.asarray(g, dtype=float)
    W = np.asarray(evaluate(g[None]))[0]
    _, _, k0 = kernels.iwasawa_standard(frame.to_standard(g)[None])
    R = k0[0, :n + 1, :n + 1]
    pvec = [_p_vector(X) for X in frame_vectors(n)]
    alpha = [0.5 * (R @ p)[0] for p in pvec]
    out = np.zeros(W.shape[1])
    for i in range(n + 1):
        if alpha[i]:
            rest = [pvec[j] for j in range(n + 1) if j != i]
            out += (-1) ** i * alpha[i] * evaluate_on(W, rest)
    return out


@dataclass(frozen=True)
class ClosednessCheck:
    analytic: float
    fd_norm: float
    reference_norm: float
    relative_error: float
    fd_coefficient: float


def check_coefficient(form: ExtendedForm, g, h: float = 1e-3, order: int = 2) -> ClosednessCheck:
    """Compare the analytic ``c`` with the finite-difference differential at ``g``."""
    c = differential(form)
    fd = fd_differential(form.hodge, g, form.frame, form.module, h, order)
    ref = dlogt_wedge(form.hodge, g, form.frame)
    rn = float(np.linalg.norm(ref))
    err = float(np.linalg.norm(fd - c * ref)) / rn if rn else float(np.linalg.norm(fd))
    fd_c = float(fd @ ref / (ref @ ref)) if rn else 0.0
    return ClosednessCheck(c, float(np.linalg.norm(fd)), rn, err, fd_c)


# ---------------------------------------------------------------------------
# Eisenstein series

@dataclass(frozen=True)
class TruncatedSeries:
    value: FormValue
    truncation: dict
    tail_estimate: float
    s: float
    frame: ParabolicFrame = field(repr=False)
    module: CoefficientModule = field(repr=False)
    shell_values: list = field(default_factory=list, repr=False)
    increments: list = field(default_factory=list)
    converging: bool = True


def tail_from_increments(increments: list[float]) -> tuple[float, bool]:
    """Geometric tail bound from the last two refinement increments."""
    inc = [x for x in increments if np.isfinite(x)]
    if len(inc) < 2:
        return (inc[-1] if inc else 0.0), True
    a, b = inc[-2], inc[-1]
    if b == 0.0:
        return 0.0, True
    if a == 0.0 or b >= a:
        return float("inf"), False
    q = b / a
    return b * q / (1 - q), True


def series_sums(form: ExtendedForm, cosets, points: np.ndarray, nthreads: int = 1,
                backend: str | None = None):
    """Per-depth partial sums of ``sum_gamma form(gamma g)`` at each point.

    Returns ``(depths, hodge_partials)`` where ``hodge_partials[d]`` holds the
    sum over cosets of depth at most ``depths[d]``, shape ``(Q, n+1, dimV)``.
    """
    depths = sorted(set(int(d) for d in cosets.depths))
    acc = None
    partial = []
    for d in depths:
        sel = np.flatnonzero(cosets.depths == d)
        vals, _ = form.hodge_sum(cosets.reps[sel], points, nthreads=nthreads, backend=backend)
        acc = vals if acc is None else acc + vals
        partial.append(acc.copy())
    return depths, partial


def eisenstein(form: ExtendedForm, group, g, truncation: dict | None = None, cosets=None,
               nthreads: int = 1, backend: str | None = None) -> TruncatedSeries:
    """Truncated ``E(phi, g, s) = sum over Gamma_xi \\ Gamma of phi(gamma g)``.

    ``truncation`` takes ``L`` (coset depth, default 12) and ``t_threshold``.
    Increments are measured between depths ``L-4``, ``L-2`` and ``L`` (the
    refinement step is two letters) and turned into a geometric tail bound.
    """
    from . import groups

    truncation = dict(truncation or {})
    L = int(truncation.get("L", 12))
    tau = float(truncation.get("t_threshold", 0.0))
    if cosets is None:
        cusp = groups.cusp_at(group, form.frame.xi, L=min(L, 6), frame=form.frame)
        cosets = groups.enumerate_cosets(group, cusp, L, t_threshold=tau)
    g = np.asarray(g, dtype=float)
    pts = g[None] if g.ndim == 2 else g
    depths, partial = series_sums(form, cosets, pts, nthreads, backend)
    by_depth = dict(zip(depths, partial))
    last = max(depths)

    def at(d):
        ks = [x for x in depths if x <= d]
        return by_depth[max(ks)] if ks else np.zeros_like(partial[0])

    incs = []
    for d in range(last % 2, last + 1, 2):
        if d >= 2:
            incs.append(float(np.linalg.norm(at(d) - at(d - 2))))
    tail, ok = tail_from_increments(incs)
    if not ok:
        warnings.warn("Eisenstein partial sums are not contracting", DivergenceWarning, stacklevel=2)
    value = FormValue.from_hodge(partial[-1][0])
    info = {"L": cosets.L, "t_threshold": cosets.t_threshold, "coset_count": cosets.count}
    return TruncatedSeries(value, info, tail, form.s, form.frame, form.module,
                           [FormValue.from_hodge(p[0]) for p in partial], incs, ok)


def series_evaluator(form: ExtendedForm, cosets, nthreads: int = 1, backend: str | None = None):
    """Callable ``points -> local Hodge rows`` of the truncated series."""
    def evaluate(points):
        vals, _ = form.hodge_sum(cosets.reps, np.asarray(points, dtype=float), nthreads, backend)
        return vals
    return evaluate
