"""Constant terms of Eisenstein series at a cusp and the restriction report.

``intertwine`` averages a truncated Eisenstein series for the cusp ``xi'``
over the torus ``Gamma_xi \\ N_xi`` at points ``exp(rT)`` of the target frame,
and fits the samples to ``alpha t^s + beta t^(2n-s)`` componentwise.  The
t^s coefficient, compared with the initial value of the source form, gives
``delta_hat``; the t^(2n-s) coefficient is the constant term.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import cohomology, forms, groups, lie
from .forms import FormValue
from .geometry import ParabolicFrame
from .lie import CoefficientModule, ModuleKind

FIT_RESIDUAL_MAX = 0.05
# peripheral saturation radius for the trivial module, by dimension
DEFAULT_SATURATION = {1: 32, 2: 4, 3: 2}


class IntertwiningError(RuntimeError):
    """A fit or quadrature that does not meet its tolerance."""


class GateRefused(RuntimeError):
    """The convergence gate did not certify the requested series."""


@dataclass(frozen=True)
class IntertwiningResult:
    delta_coefficient: float
    c_term: FormValue
    alpha: FormValue
    fit_residual: float
    s: float
    n: int
    module_kind: str
    truncation: dict
    quadrature: dict
    radii: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    initial: FormValue = field(repr=False)
    tail_estimate: float = 0.0
    c_term_error: float = 0.0
    delta_error: float = 0.0

    @property
    def c_weights(self) -> dict:
        return weight_split_cterm(self)

    @property
    def ok(self) -> bool:
        return self.fit_residual <= FIT_RESIDUAL_MAX

    def to_json(self) -> dict:
        n = self.n
        return {
            "delta_coefficient": self.delta_coefficient,
            "fit_residual": self.fit_residual,
            "s": self.s,
            "n": n,
            "module": self.module_kind,
            "basis": {"pure": "u*_1^...^u*_n", "dt": [list(I) for I in cohomology.multi_indices(n, n - 1)],
                      "module": "frame-local standard coordinates"},
            "c_term": {"pure": self.c_term.pure.tolist(), "dt": self.c_term.dt.ravel().tolist()},
            "alpha": {"pure": self.alpha.pure.tolist(), "dt": self.alpha.dt.ravel().tolist()},
            "c_weights": {k: np.asarray(v).ravel().tolist() for k, v in self.c_weights.items()},
            "truncation": self.truncation,
            "quadrature": self.quadrature,
            "tail_estimate": self.tail_estimate,
            "c_term_error": self.c_term_error,
            "delta_error": self.delta_error,
        }


def sample_radii(r_max: float = 1.5, count: int = 7) -> np.ndarray:
    if count < 7 or count % 2 == 0:
        raise IntertwiningError("use a symmetric grid of at least 7 radii")
    return np.linspace(-r_max, r_max, count)


def lattice_center(cusp: groups.CuspDatum) -> float:
    """Radius whose height ``t^2`` equals the lattice scale ``|det B|^(1/n)``.

    Centring the samples there keeps the lowest one at a fixed height relative
    to the cusp lattice, so the quadrature cost does not depend on its scale.
    """
    n = cusp.frame.n
    return float(np.log(abs(np.linalg.det(cusp.lattice)))) / (2 * n)


def default_m_max(n: int, budget: int = 2 ** 15, cap: int = 1024) -> int:
    """Largest power of two ``m`` with ``m**n`` inside the node budget."""
    m = 2
    while m * 2 <= cap and (m * 2) ** n <= budget:
        m *= 2
    return m


def torus_nodes(lattice: np.ndarray, m: int) -> np.ndarray:
    n = lattice.shape[0]
    ticks = np.arange(m) / m
    c = np.stack(np.meshgrid(*([ticks] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return c @ lattice.T


def _subgrid_mask(n: int, m: int) -> np.ndarray:
    idx = np.stack(np.meshgrid(*([np.arange(m)] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return np.all(idx % 2 == 0, axis=1)


def two_exponential_fit(radii, values, s: float, n: int):
    """Least-squares ``values(r) = alpha e^{rs} + beta e^{r(2n-s)}`` per column.

    Returns ``(alpha, beta, relative residual)``.
    """
    if abs(2 * s - 2 * n) < 0.1:
        raise IntertwiningError("exponents s and 2n - s are too close for a stable fit")
    t = np.exp(np.asarray(radii, dtype=float))
    A = np.stack([t ** s, t ** (2 * n - s)], axis=1)
    Y = np.asarray(values, dtype=float).reshape(len(t), -1)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = float(np.linalg.norm(A @ coef - Y))
    scale = float(np.linalg.norm(Y))
    return coef[0], coef[1], resid / scale if scale else 0.0


def _grid_index(n: int, m: int) -> np.ndarray:
    return np.stack(np.meshgrid(*([np.arange(m)] * n), indexing="ij"), axis=-1).reshape(-1, n)


def _node_sum(flist, reps, cusp_to, a, coeffs, nthreads, backend):
    """Sum over torus nodes ``coeffs`` (lattice coordinates) of the transported
    series values at ``u a``; shape ``(B, n+1, dimV)``."""
    frame = cusp_to.frame
    n = frame.n
    U = np.array([frame.translation(cusp_to.lattice @ c) for c in coeffs])
    vals, _ = forms.batch_hodge_sum(flist, reps, U @ a, nthreads=nthreads, backend=backend)
    total = vals.sum(axis=0)
    # transport from the source frame to the target frame (linear, so after the sum)
    k_rel = frame.k.T @ flist[0].frame.k
    total = np.einsum("ij,bjv->biv", k_rel[:n + 1, :n + 1], total)
    if flist[0].module.is_adjoint:
        total = total @ lie.adjoint_matrix(k_rel).T
    return total


def _refined_average(flist, reps, cusp_to, a, m, m_max, target, nthreads, backend):
    """Torus average at one point, doubling ``m`` on nested grids until the
    ``m`` and ``m/2`` averages agree to ``target`` (relative) or ``m_max``.

    Returns ``(average, m, drift, scale)``.
    """
    n = cusp_to.frame.n
    idx = _grid_index(n, m)
    even = np.all(idx % 2 == 0, axis=1)
    sub = _node_sum(flist, reps, cusp_to, a, idx[even] / m, nthreads, backend)
    rest = _node_sum(flist, reps, cusp_to, a, idx[~even] / m, nthreads, backend) if (~even).any() else 0.0
    full = sub + rest
    while True:
        fine = full / m ** n
        coarse = sub / (m // 2) ** n if m % 2 == 0 else fine
        scale = max(1e-300, float(np.max(np.abs(fine))))
        drift = float(np.max(np.abs(fine - coarse))) / scale
        if drift <= target or 2 * m > m_max:
            return fine, m, drift, scale
        m *= 2
        idx = _grid_index(n, m)
        odd = ~np.all(idx % 2 == 0, axis=1)
        sub = full
        full = sub + _node_sum(flist, reps, cusp_to, a, idx[odd] / m, nthreads, backend)


def averaged_values(form: forms.ExtendedForm, cosets, cusp_to: groups.CuspDatum, points_a: np.ndarray,
                    m: int, nthreads: int = 1, backend: str | None = None):
    """Torus averages of the truncated series at ``u a`` for each ``a`` in ``points_a``.

    Returns values on the m-grid and on its (m/2)-subgrid, as local Hodge rows
    of the target frame, shape ``(A, n+1, dimV)`` each.
    """
    n = cusp_to.frame.n
    idx = _grid_index(n, m)
    even = np.all(idx % 2 == 0, axis=1)
    fine, coarse = [], []
    for a in points_a:
        sub = _node_sum([form], cosets.reps, cusp_to, a, idx[even] / m, nthreads, backend)[0]
        full = sub + (_node_sum([form], cosets.reps, cusp_to, a, idx[~even] / m, nthreads, backend)[0]
                      if (~even).any() else 0.0)
        fine.append(full / m ** n)
        coarse.append(sub / (m // 2) ** n if m % 2 == 0 else full / m ** n)
    return np.array(fine), np.array(coarse)


def _source_forms(cusp_from, kind, n, s, vectors):
    mod_from = CoefficientModule(kind, n)
    return [forms.phi(cusp_from.frame, mod_from, v, local=True).with_s(s) for v in vectors]


def intertwine_batch(group: groups.KleinianGroup, cusp_from: groups.CuspDatum,
                     cusp_to: groups.CuspDatum, module: CoefficientModule, vectors, s: float | None = None,
                     *, r_max: float = 1.5, n_radii: int = 7, center: float | None = None,
                     m: int = 16, m_max: int | None = None, quad_target: float = 1e-6, L: int = 12,
                     t_threshold: float | None = None, cosets=None, saturation: int | None = None,
                     nthreads: int = 1, backend: str | None = None) -> list:
    """``intertwine`` for several initial vectors sharing one pass over the series."""
    n = group.n
    kind = module.kind
    if s is None:
        s = 2 * n + 2 if kind is ModuleKind.ADJOINT else 2 * n
    flist = _source_forms(cusp_from, kind, n, s, vectors)
    if cosets is None:
        if t_threshold is None:
            t_threshold = groups.default_t_threshold(s)
        cosets = groups.enumerate_cosets(group, cusp_from, L, t_threshold=t_threshold)
    if saturation is None:
        saturation = 0 if kind is ModuleKind.ADJOINT else DEFAULT_SATURATION.get(n, 0)
    if saturation > cosets.saturation:
        cosets = cosets.saturate(saturation)
    if center is None:
        center = lattice_center(cusp_to)
    radii = center + sample_radii(r_max, n_radii)
    A = np.array([cusp_to.frame.dilation(np.exp(r)) for r in radii])
    if m_max is None:
        m_max = default_m_max(n)
    m_max = max(m_max, m)
    # low samples oscillate on the scale t^2, so each radius refines on its own
    fine, m_used, drifts, scales = [], [], [], []
    for a in A:
        f, mi, drift, scale = _refined_average(flist, cosets.reps, cusp_to, a, m, m_max, quad_target,
                                               nthreads, backend)
        fine.append(f)
        m_used.append(mi)
        drifts.append(drift)
        scales.append(scale)
    fine = np.array(fine)                      # (radii, B, n+1, dimV)
    # truncation change: the same average with the series two levels shallower
    tails = np.zeros(len(flist))
    deep = cosets.reps[cosets.depths > cosets.L - 2]
    if len(deep) and len(deep) < cosets.count:
        for i in (0, len(A) // 2, len(A) - 1):
            mi = max(2, m_used[i] // 2)
            idx = _grid_index(n, mi) / mi
            diff = _node_sum(flist, deep, cusp_to, A[i], idx, nthreads, backend) / mi ** n
            tails = np.maximum(tails, np.abs(diff).reshape(len(flist), -1).max(axis=1))
    t = np.exp(radii)
    Amat = np.stack([t ** s, t ** (2 * n - s)], axis=1)
    P = np.linalg.pinv(Amat)
    dimV = flist[0].module.dim
    truncation = {"L": cosets.L, "t_threshold": cosets.t_threshold, "coset_count": cosets.count,
                  "saturation": cosets.saturation}
    quadrature = {"m": m_used, "drift": max(drifts), "drifts": drifts, "target": quad_target}
    out = []
    for b, form in enumerate(flist):
        flat = np.array([FormValue.from_hodge(fine[i, b]).flat() for i in range(len(A))])
        alpha, beta, resid = two_exponential_fit(radii, flat, s, n)
        iv = form.initial.flat()
        delta = float(alpha @ iv / (iv @ iv))
        # error bars: per-sample quadrature and truncation errors (dt rows carry
        # a factor 2 in flat coordinates) plus the fit misfit, pushed through
        # the least-squares solution operator
        sample_err = 2.0 * (np.asarray(drifts) * np.asarray(scales) + tails[b])
        misfit = float(np.max(np.linalg.norm(Amat @ np.vstack([alpha, beta]) - flat, axis=0)))
        c_err = float(np.abs(P[1]) @ sample_err + np.linalg.norm(P[1]) * misfit)
        d_err = float((np.abs(P[0]) @ sample_err + np.linalg.norm(P[0]) * misfit) / np.linalg.norm(iv))
        out.append(IntertwiningResult(
            delta, FormValue.from_flat(beta, n, dimV), FormValue.from_flat(alpha, n, dimV), resid,
            float(s), n, kind.value, dict(truncation), dict(quadrature), radii, flat, form.initial,
            float(tails[b]), c_err, d_err))
    return out


def intertwine(group: groups.KleinianGroup, cusp_from: groups.CuspDatum, cusp_to: groups.CuspDatum,
               module: CoefficientModule, v_from=None, s: float | None = None, **kwargs) -> IntertwiningResult:
    """Constant term at ``cusp_to`` of the Eisenstein series of ``cusp_from``.

    ``v_from`` is the initial module vector in frame-local coordinates of the
    source frame (defaults to the first V_-2 basis vector, or 1 for the trivial
    module); ``s`` defaults to the closed value.  The radii form a symmetric
    grid of half-width ``r_max`` about ``center`` (default ``lattice_center``).
    ``saturation`` closes the coset list under peripheral translations of the
    source cusp (see ``CosetEnumeration.saturate``); by default only the
    trivial module, whose terms decay slowly along the horosphere, is
    saturated.  Remaining keywords are those of ``intertwine_batch``.
    """
    if v_from is None:
        v_from = np.eye(lie.algebra_dim(group.n))[0] if module.is_adjoint else np.ones(1)
    return intertwine_batch(group, cusp_from, cusp_to, module, [v_from], s, **kwargs)[0]


def weight_split_cterm(result: IntertwiningResult) -> dict:
    """Weight components of the constant term (frame-local coordinates)."""
    c = result.c_term
    if result.module_kind == ModuleKind.TRIVIAL.value:
        return {"A1": c.pure.copy(), "A'": c.dt.copy()}
    out = {}
    for w, sl in lie.weight_slices(result.n).items():
        a = np.zeros_like(c.pure)
        a[sl] = c.pure[sl]
        ap = np.zeros_like(c.dt)
        ap[:, sl] = c.dt[:, sl]
        out[f"A{w}"] = a
        out[f"A'{w}"] = ap
    return out


@dataclass(frozen=True)
class RestrictedClass:
    coordinates: np.ndarray
    c_minus2_ratio: float
    coboundary_residual: float
    identity_residuals: dict
    violation: bool
    identities_hold: bool = True
    c_norm: float = 0.0
    c_error: float = 0.0


def restricted_class(result: IntertwiningResult, cusp_to: groups.CuspDatum | None = None,
                     quad_tol: float | None = None) -> RestrictedClass:
    """Class of the constant-term form restricted (dt-parts discarded) to the horosphere.

    Coordinates are ``delta_hat`` times the source class plus the V_-2 part of
    the constant term.  The V_0 + V_2 part of the pure constant term is solved
    as a coboundary; the identities relating it to the dt-parts are checked.
    """
    n = result.n
    s = result.s
    c = result.c_term
    quad_tol = quad_tol if quad_tol is not None else max(result.quadrature.get("drift", 0.0), 1e-8)
    frame = cusp_to.frame if cusp_to is not None else ParabolicFrame.standard(n)
    if result.module_kind == ModuleKind.TRIVIAL.value:
        coords = np.array([result.delta_coefficient + float(c.pure[0])])
        # the whole constant term vanishes in the convergent range, so c1 is
        # measured against the averaged series at the base point instead
        base = result.delta_coefficient * result.initial.flat() + c.flat()
        ratio = abs(float(c.pure[0])) / max(float(np.linalg.norm(base)), 1e-300)
        return RestrictedClass(coords, ratio, 0.0, {"A1": abs(float(c.pure[0]))}, False,
                               True, c.norm(), result.c_term_error)
    module = CoefficientModule(ModuleKind.ADJOINT, n)
    sl = lie.weight_slices(n)
    init = result.initial.pure
    coords = result.delta_coefficient * init[sl[-2]] + c.pure[sl[-2]]
    ratio = float(np.linalg.norm(c.pure[sl[-2]])) / max(c.norm(), 1e-300)
    upper = c.pure.copy()
    upper[sl[-2]] = 0.0
    solve = cohomology.coboundary_solve(upper, frame, module)
    w = weight_split_cterm(result)
    ident = {}
    err = result.c_term_error
    scale = max(c.norm(), err, 1e-300)
    hold = True
    for wt, src in ((2, "A'0"), (0, "A'-2")):
        dmat = cohomology.build_complex(frame, module)[n - 1].matrix
        pred = dmat @ w[src].ravel() / (wt - s)
        gap = float(np.linalg.norm(w[f"A{wt}"] - pred))
        ident[f"A{wt}"] = gap / scale
        # both sides carry the constant-term error, the right one amplified by d
        bound = 10 * err * (1 + np.linalg.norm(dmat, 2) / abs(wt - s)) + 1e-6 * c.norm()
        hold &= gap <= bound
    violation = solve.residual > 10 * quad_tol * max(1.0, scale)
    return RestrictedClass(coords, ratio, solve.residual, ident, violation, bool(hold), c.norm(), err)


@dataclass(frozen=True)
class RestrictionReport:
    cusp_list: list
    class_dims: list
    restriction_matrix: np.ndarray
    rank: int
    independent: bool
    cusp_bound: float
    offdiag_norm: float
    diag_deviation: float
    partial: bool
    gate: list
    results: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "cusps": [np.asarray(x).tolist() for x in self.cusp_list],
            "class_dims": self.class_dims,
            "restriction_matrix": np.asarray(self.restriction_matrix).tolist(),
            "rank": self.rank,
            "independent": self.independent,
            "cusp_bound": self.cusp_bound,
            "offdiag_norm": self.offdiag_norm,
            "diag_deviation": self.diag_deviation,
            "partial": self.partial,
            "gate": self.gate,
            "runs": [{
                "from_cusp": i, "class": a, "to_cusp": j,
                "delta_hat": res.delta_coefficient, "delta_error": res.delta_error,
                "fit_residual": res.fit_residual, "c_norm": rc.c_norm, "c_error": rc.c_error,
                "c_minus2_ratio": rc.c_minus2_ratio, "coordinates": np.asarray(rc.coordinates).tolist(),
                "identities_hold": rc.identities_hold, "coset_count": res.truncation["coset_count"],
            } for (i, a, j), res, rc in self.results],
        }


def independence_report(group: groups.KleinianGroup, cusps: list, module_kind: ModuleKind,
                        s: float | None = None, *, L: int = 12, t_threshold: float | None = None,
                        m: int = 16, m_max: int | None = None, rank_tol: float = 0.5,
                        nthreads: int = 1, backend: str | None = None,
                        gate_L: int = 12) -> RestrictionReport:
    """Restriction matrix of the Eisenstein classes of every cusp to every cusp."""
    n = group.n
    if not cusps:
        raise IntertwiningError("no full-rank cusps to report on")
    if any(not c.is_toric for c in cusps):
        raise IntertwiningError("only toric cusps are supported in the report")
    s = s if s is not None else (2 * n + 2 if module_kind is ModuleKind.ADJOINT else 2 * n)
    gate = groups.convergence_gate(group, cusps[0], s, L=gate_L)
    if not gate.converges:
        raise GateRefused(f"convergence gate refused s={s:g}: {gate.message}")
    if t_threshold is None:
        t_threshold = groups.default_t_threshold(s)
    module = CoefficientModule(module_kind, n)
    dim = n if module_kind is ModuleKind.ADJOINT else 1
    sl = lie.weight_slices(n)[-2]
    if module_kind is ModuleKind.ADJOINT:
        vectors = [np.eye(lie.algebra_dim(n))[sl.start + a] for a in range(dim)]
    else:
        vectors = [np.ones(1)]
    N = len(cusps)
    Mtx = np.zeros((N * dim, N * dim))
    results = []
    partial = False
    for i, ci in enumerate(cusps):
        cos = groups.enumerate_cosets(group, ci, L, t_threshold=t_threshold)
        for j, cj in enumerate(cusps):
            batch = intertwine_batch(group, ci, cj, module, vectors, s, m=m, m_max=m_max,
                                     cosets=cos, nthreads=nthreads, backend=backend)
            for a, res in enumerate(batch):
                rc = restricted_class(res, cj)
                partial |= not res.ok
                Mtx[i * dim + a, j * dim:(j + 1) * dim] = rc.coordinates
                results.append(((i, a, j), res, rc))
    sv = np.linalg.svd(Mtx, compute_uv=False)
    rank = int(np.sum(sv > rank_tol))
    off = 0.0
    dev = 0.0
    for i in range(N):
        for j in range(N):
            blk = Mtx[i * dim:(i + 1) * dim, j * dim:(j + 1) * dim]
            if i == j:
                dev = max(dev, float(np.linalg.norm(blk - np.eye(dim), 2)))
            else:
                off = max(off, float(np.linalg.norm(blk, 2)))
    return RestrictionReport([c.xi for c in cusps], [dim] * N, Mtx, rank, rank == dim * N,
                             rank / dim, off, dev, partial,
                             [gate.decision.value, gate.message], results)


def dumps(obj) -> str:
    return json.dumps(obj.to_json(), indent=2, sort_keys=True)
