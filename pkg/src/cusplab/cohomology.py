"""Chevalley-Eilenberg cohomology of the abelian algebra n_xi.

Cochains of degree k are stored as flat vectors indexed by
``(multi-index position, module coordinate)``; multi-indices are the
lexicographically ordered k-subsets of ``{0..n-1}`` (``u*_I``).  Module
coordinates are *frame-local*: an adjoint vector ``X`` is represented by the
standard coordinates of ``k^T X k`` where ``k`` is the frame rotation.  In these
coordinates ``ad(u_i)`` is the same integer matrix for every frame, so the
complex is assembled exactly once per ``(n, module kind)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
import sympy
from scipy.sparse.linalg import LinearOperator, lsqr

from . import lie
from .geometry import ParabolicFrame
from .lie import CoefficientModule, ModuleKind

VAN_EST_DRIFT = 1e-8


class CohomologyError(ValueError):
    """Raised on invalid cochains, failed quadrature, or malformed finite groups."""


def multi_indices(n: int, k: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations(range(n), k))


@lru_cache(maxsize=None)
def _exact_nil_action(n: int, kind: ModuleKind) -> tuple[sympy.Matrix, ...]:
    if kind is ModuleKind.TRIVIAL:
        return tuple(sympy.zeros(1, 1) for _ in range(n))
    ad = lie.exact_structure(n)
    off = lie.weight_slices(n)[2].start
    return tuple(ad[off + i] for i in range(n))


@dataclass(frozen=True)
class CochainSpace:
    degree: int
    n: int
    dim_module: int
    basis: tuple

    @property
    def dim(self) -> int:
        return len(self.basis) * self.dim_module


@dataclass(frozen=True)
class CoboundaryMatrix:
    """The map ``d: C^k -> C^{k+1}``; ``exact`` is the rational matrix."""

    k: int
    exact: sympy.Matrix = field(repr=False)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.exact.tolist(), dtype=float).reshape(self.exact.shape)


@lru_cache(maxsize=None)
def _complex(n: int, kind: ModuleKind) -> tuple[CoboundaryMatrix, ...]:
    rho = _exact_nil_action(n, kind)
    dV = rho[0].shape[0]
    mats = []
    for k in range(n + 1):
        src = {I: i for i, I in enumerate(multi_indices(n, k))}
        tgt = multi_indices(n, k + 1)
        D = sympy.zeros(len(tgt) * dV, len(src) * dV)
        for r, J in enumerate(tgt):
            for p, j in enumerate(J):
                c = src[J[:p] + J[p + 1:]]
                block = rho[j] if p % 2 == 0 else -rho[j]
                D[r * dV:(r + 1) * dV, c * dV:(c + 1) * dV] += block
        mats.append(CoboundaryMatrix(k, D))
    return tuple(mats)


def build_complex(frame: ParabolicFrame, module: CoefficientModule) -> list[CoboundaryMatrix]:
    """Coboundary matrices ``d_k`` for ``k = 0..n`` (``d_n`` maps into the zero space)."""
    if frame.n != module.n:
        raise CohomologyError(f"frame has n={frame.n} but module has n={module.n}")
    return list(_complex(frame.n, module.kind))


def cochain_space(frame: ParabolicFrame, module: CoefficientModule, k: int) -> CochainSpace:
    return CochainSpace(k, frame.n, module.dim, tuple(multi_indices(frame.n, k)))


@dataclass(frozen=True)
class CohomologyReport:
    degree: int
    dim_kernel: int
    dim_image: int
    dim_H: int
    harmonic_basis: list = field(repr=False)
    weight_tags: list | None = None


def _rank(M: sympy.Matrix) -> int:
    if M.rows == 0 or M.cols == 0:
        return 0
    return int(M.rank())


def cohomology(frame: ParabolicFrame, module: CoefficientModule, k: int) -> CohomologyReport:
    """``H^k(n_xi, V)`` with exact ranks and minimal-norm representatives."""
    mats = build_complex(frame, module)
    n = frame.n
    if not 0 <= k <= n:
        raise CohomologyError(f"degree {k} outside 0..{n}")
    dk = mats[k].exact
    dim_c = dk.cols
    dim_ker = dim_c - _rank(dk)
    prev = mats[k - 1].exact if k > 0 else sympy.zeros(dim_c, 0)
    dim_im = _rank(prev)
    # harmonic = ker d_k  intersect  (im d_{k-1})^perp
    stacked = sympy.Matrix.vstack(dk, prev.T) if prev.cols else dk
    harm = [np.array(v.T.tolist(), dtype=float).ravel() for v in stacked.nullspace()]
    tags = None
    if module.is_adjoint:
        sl = lie.weight_slices(n)
        dV = module.dim
        tags = []
        for h in harm:
            blocks = h.reshape(-1, dV)
            mass = {w: float(np.abs(blocks[:, s]).sum()) for w, s in sl.items()}
            tags.append(max(mass, key=mass.get))
    return CohomologyReport(k, dim_ker, dim_im, dim_ker - dim_im, harm, tags)


def top_cohomology(frame: ParabolicFrame, module: CoefficientModule) -> CohomologyReport:
    return cohomology(frame, module, frame.n)


def check_d_squared(n: int, kind: ModuleKind) -> bool:
    """``d_{k+1} d_k == 0`` in exact arithmetic for every k."""
    mats = _complex(n, kind)
    return all((mats[k + 1].exact * mats[k].exact).is_zero_matrix for k in range(n))


# -- frame-local coordinates --------------------------------------------------

def to_local(v, frame: ParabolicFrame, module: CoefficientModule) -> np.ndarray:
    """Global standard coordinates -> frame-local coordinates."""
    v = np.asarray(v, dtype=float)
    if not module.is_adjoint:
        return v.copy()
    X = lie.from_coordinates(v, frame.n)
    return lie.coordinates(frame.k.T @ X @ frame.k)


def from_local(c, frame: ParabolicFrame, module: CoefficientModule) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if not module.is_adjoint:
        return c.copy()
    X = lie.from_coordinates(c, frame.n)
    return lie.coordinates(frame.k @ X @ frame.k.T)


def J_iso(v, frame: ParabolicFrame, tol: float = 1e-12) -> np.ndarray:
    """Top-degree cocycle ``(u*_1 ^ ... ^ u*_n) (x) v`` for ``v`` in V_-2.

    ``v`` is given in global standard coordinates; the cocycle is returned in
    frame-local coordinates (a vector of length dim V).
    """
    n = frame.n
    c = to_local(v, frame, CoefficientModule(ModuleKind.ADJOINT, n))
    sl = lie.weight_slices(n)
    stray = max(np.max(np.abs(c[sl[0]])), np.max(np.abs(c[sl[2]])))
    if stray > tol * max(1.0, float(np.max(np.abs(c)))):
        raise CohomologyError(f"vector has V_0 + V_2 component of size {stray:.3e}")
    return c


@dataclass(frozen=True)
class CoboundarySolve:
    primitive: np.ndarray
    residual: float
    relative_residual: float


def coboundary_solve(cochain, frame: ParabolicFrame, module: CoefficientModule,
                     degree: int | None = None) -> CoboundarySolve:
    """Least-squares primitive ``b`` with ``d b ~ cochain`` (minimal norm)."""
    n = frame.n
    degree = n if degree is None else degree
    if degree == 0:
        z = np.zeros(0)
        nrm = float(np.linalg.norm(cochain))
        return CoboundarySolve(z, nrm, 1.0 if nrm else 0.0)
    D = build_complex(frame, module)[degree - 1].matrix
    c = np.asarray(cochain, dtype=float).ravel()
    b, *_ = np.linalg.lstsq(D, c, rcond=None)
    r = float(np.linalg.norm(D @ b - c))
    nrm = float(np.linalg.norm(c))
    return CoboundarySolve(b, r, r / nrm if nrm else 0.0)


def apply_d(cochain, frame: ParabolicFrame, module: CoefficientModule, degree: int) -> np.ndarray:
    return build_complex(frame, module)[degree].matrix @ np.asarray(cochain, dtype=float).ravel()


# -- Van Est averaging ---------------------------------------------------------

def _torus_grid(lattice: np.ndarray, m: int) -> np.ndarray:
    n = lattice.shape[0]
    ticks = np.arange(m) / m
    c = np.stack(np.meshgrid(*([ticks] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return c @ lattice.T


def torus_average(f, lattice, m_start: int = 8, drift: float = VAN_EST_DRIFT,
                  max_refinements: int = 4) -> tuple[np.ndarray, int]:
    """Haar average of ``f`` over R^n / lattice on uniform grids, doubling ``m``.

    ``lattice`` has the lattice basis vectors as columns.  Raises when two
    successive refinements still disagree by more than ``drift``.
    """
    lattice = np.atleast_2d(np.asarray(lattice, dtype=float))
    if abs(np.linalg.det(lattice)) < 1e-12:
        raise CohomologyError("lattice is not full rank")
    m = m_start
    prev = None
    for _ in range(max_refinements + 1):
        vals = np.asarray(f(_torus_grid(lattice, m)), dtype=float)
        avg = vals.mean(axis=0)
        if prev is not None:
            scale = max(1.0, float(np.max(np.abs(avg))))
            if np.max(np.abs(avg - prev)) <= drift * scale:
                return avg, m
        prev = avg
        m *= 2
    raise CohomologyError("torus quadrature did not converge under refinement")


def van_est_average(form, lattice, m_start: int = 8) -> np.ndarray:
    """The N_xi-invariant cocycle obtained by averaging ``form`` over the torus.

    ``form(x)`` maps an array of horospherical points ``(M, n)`` to cochain
    coefficient arrays ``(M, ...)``.
    """
    avg, _ = torus_average(form, lattice, m_start=m_start)
    return avg


def torus_primitive(values: np.ndarray, lattice, frame: ParabolicFrame,
                    module: CoefficientModule, m: int) -> CoboundarySolve:
    """Least-squares (n-1)-form ``b`` on the torus grid with ``d b = values``.

    ``values`` has shape ``(m^n, dim V)``: the top-degree coefficient at each grid
    node, in frame-local module coordinates.  The differential combines spectral
    derivatives along ``u_j`` with ``rho(u_j)``.
    """
    n = frame.n
    lattice = np.atleast_2d(np.asarray(lattice, dtype=float))
    dV = module.dim
    G = m ** n
    values = np.asarray(values, dtype=float).reshape(G, dV)
    rho = [np.array(r.tolist(), dtype=float).reshape(dV, dV) for r in _exact_nil_action(n, module.kind)]
    freqs = np.fft.fftfreq(m, d=1.0 / m) * 2j * np.pi
    if m % 2 == 0:
        freqs[m // 2] = 0.0
    Binv = np.linalg.inv(lattice)
    # derivative along x_j is sum_l Binv[l, j] d/dc_l
    kgrid = np.meshgrid(*([freqs] * n), indexing="ij")
    symbols = [sum(Binv[l, j] * kgrid[l] for l in range(n)) for j in range(n)]
    faces = multi_indices(n, n - 1)
    full = tuple(range(n))

    def deriv(arr, j):
        a = arr.reshape((m,) * n + (dV,))
        spec = np.fft.fftn(a, axes=tuple(range(n)))
        return np.real(np.fft.ifftn(spec * symbols[j][..., None], axes=tuple(range(n)))).reshape(G, dV)

    def matvec(b):
        b = b.reshape(len(faces), G, dV)
        out = np.zeros((G, dV))
        for p, j in enumerate(full):
            face = faces.index(full[:p] + full[p + 1:])
            term = deriv(b[face], j) + b[face] @ rho[j].T
            out += term if p % 2 == 0 else -term
        return out.ravel()

    def rmatvec(y):
        y = y.reshape(G, dV)
        out = np.zeros((len(faces), G, dV))
        for p, j in enumerate(full):
            face = faces.index(full[:p] + full[p + 1:])
            term = -deriv(y, j) + y @ rho[j]
            out[face] += term if p % 2 == 0 else -term
        return out.ravel()

    op = LinearOperator((G * dV, len(faces) * G * dV), matvec=matvec, rmatvec=rmatvec)
    sol = lsqr(op, values.ravel(), atol=1e-14, btol=1e-14, iter_lim=2000)
    b = sol[0]
    r = float(np.linalg.norm(matvec(b) - values.ravel()) / np.sqrt(G))
    nrm = float(np.linalg.norm(values) / np.sqrt(G))
    return CoboundarySolve(b.reshape(len(faces), G, dV), r, r / nrm if nrm else 0.0)


# -- transfer ------------------------------------------------------------------

@dataclass(frozen=True)
class TransferResult:
    v: np.ndarray
    cocycle: np.ndarray
    fixed_residual: float
    fixed_dim: int


def _check_group(parts: list[np.ndarray], tol: float) -> None:
    for a in parts:
        for b in parts:
            ab = a @ b
            if not any(np.max(np.abs(ab - c)) <= tol for c in parts):
                raise CohomologyError("finite parts are not closed under composition")


def transfer_average(v_alpha, finite_parts, frame: ParabolicFrame, tol: float = 1e-9) -> TransferResult:
    """Average ``rho(m^-1) v_alpha`` over the finite rotation parts of Gamma_xi.

    ``v_alpha`` is in V_-2 (global coordinates).  Also reports the dimension of
    the subspace of V_-2 fixed by every part, which is the dimension of the
    surviving top cohomology of the peripheral group.
    """
    parts = [np.asarray(m, dtype=float) for m in finite_parts] or [np.eye(frame.n + 2)]
    _check_group(parts, 1e-8)
    module = CoefficientModule(ModuleKind.ADJOINT, frame.n)
    v_alpha = np.asarray(v_alpha, dtype=float)
    v = np.mean([module.action(m.T, v_alpha) for m in parts], axis=0)
    theta_v = lie.coordinates(lie.cartan_involution(lie.from_coordinates(v, frame.n)))
    resid = max(float(np.max(np.abs(module.action(m, theta_v) - theta_v))) for m in parts)
    cocycle = J_iso(v, frame, tol=1e-9)
    # fixed subspace of V_-2
    sl = lie.weight_slices(frame.n)[-2]
    basis = np.stack([from_local(e, frame, module) for e in np.eye(module.dim)[sl]], axis=1)
    rows = [np.stack([module.action(m, b) for b in basis.T], axis=1) - basis for m in parts]
    A = np.vstack(rows)
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > 1e-8 * max(1.0, sv.max(initial=0.0))))
    if resid > tol * max(1.0, float(np.max(np.abs(theta_v)))):
        raise CohomologyError(f"averaged vector is not fixed (residual {resid:.3e})")
    return TransferResult(v, cocycle, resid, basis.shape[1] - rank)
