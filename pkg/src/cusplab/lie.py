"""The Lie algebra so(n+1, 1) as explicit integer matrices.

The hyperboloid model is used throughout: ``J = diag(1, ..., 1, -1)`` acts on
``R^{n+2}`` with coordinates ``(x_0, x_1, ..., x_n, x_{n+1})``, the base point
is ``O = e_{n+1}`` and ``K = Stab(O)``.  The standard parabolic frame sits at
the null vector ``xi_0 = e_0 + e_{n+1}``:

* ``u_i = E_{0i} - E_{i0} + E_{n+1,i} + E_{i,n+1}`` spans the unipotent
  algebra ``n_xi`` (weight +2), and ``exp(u_i)`` is the unit translation;
* ``T = 2 (E_{0,n+1} + E_{n+1,0})`` spans ``a_xi`` with ``[T, u_i] = 2 u_i``;
* ``m_ij = E_{ij} - E_{ji}`` (``1 <= i < j <= n``) spans ``m_xi``;
* ``theta(u_i) = -u_i^T`` spans the weight -2 space.

Module vectors of the adjoint representation are coordinate arrays in the
*standard basis* ``[theta u_1..theta u_n, T, m_12, ..., u_1..u_n]``, ordered by
weight (-2, 0, +2).  Every basis matrix has integer entries.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy

WEIGHTS = (-2, 0, 2)


class LieError(ValueError):
    """Raised for malformed algebra elements or inconsistent frames."""


@dataclass(frozen=True)
class LorentzForm:
    """The quadratic form of signature (n+1, 1) on R^{n+2}."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise LieError(f"boundary rank must be positive, got {self.n}")

    @property
    def dim(self) -> int:
        return self.n + 2

    @property
    def J(self) -> np.ndarray:
        return lorentz_matrix(self.n)

    @property
    def base_point(self) -> np.ndarray:
        o = np.zeros(self.dim)
        o[-1] = 1.0
        return o

    def pairing(self, p, q) -> float:
        return float(p[:-1] @ q[:-1] - p[-1] * q[-1])


@lru_cache(maxsize=None)
def lorentz_matrix(n: int) -> np.ndarray:
    J = np.eye(n + 2)
    J[-1, -1] = -1.0
    J.setflags(write=False)
    return J


def _unit(N, i, j):
    E = np.zeros((N, N), dtype=np.int64)
    E[i, j] = 1
    return E


def nilpotent_basis(n: int) -> list[np.ndarray]:
    """Unit translations ``u_1..u_n`` of the standard frame (integer entries)."""
    N = n + 2
    out = []
    for i in range(1, n + 1):
        out.append(_unit(N, 0, i) - _unit(N, i, 0) + _unit(N, N - 1, i) + _unit(N, i, N - 1))
    return out


def cartan_generator(n: int) -> np.ndarray:
    N = n + 2
    return 2 * (_unit(N, 0, N - 1) + _unit(N, N - 1, 0))


def rotation_basis(n: int) -> list[np.ndarray]:
    """Basis of m_xi: infinitesimal rotations of the horosphere."""
    N = n + 2
    return [_unit(N, i, j) - _unit(N, j, i) for i, j in itertools.combinations(range(1, n + 1), 2)]


def cartan_involution(X: np.ndarray) -> np.ndarray:
    """Cartan involution for the base point O: ``X -> -X^T``."""
    return -np.asarray(X).T


def bracket(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise LieError(f"bracket of mismatched shapes {X.shape} and {Y.shape}")
    return X @ Y - Y @ X


def in_algebra(X: np.ndarray, tol: float = 1e-12) -> bool:
    """Membership in so(n+1, 1): ``X^T J + J X = 0``."""
    X = np.asarray(X)
    J = lorentz_matrix(X.shape[0] - 2)
    return bool(np.max(np.abs(X.T @ J + J @ X), initial=0.0) <= tol)


@lru_cache(maxsize=None)
def standard_basis(n: int) -> tuple[np.ndarray, ...]:
    """Weight-ordered integer basis of so(n+1, 1)."""
    u = nilpotent_basis(n)
    basis = [cartan_involution(x) for x in u] + [cartan_generator(n)] + rotation_basis(n) + u
    for B in basis:
        B.setflags(write=False)
    return tuple(basis)


def algebra_dim(n: int) -> int:
    return (n + 2) * (n + 1) // 2


def weight_slices(n: int) -> dict[int, slice]:
    d0 = n * (n - 1) // 2 + 1
    return {-2: slice(0, n), 0: slice(n, n + d0), 2: slice(n + d0, 2 * n + d0)}


@lru_cache(maxsize=None)
def _coordinate_map(n: int) -> np.ndarray:
    B = np.stack([b.ravel() for b in standard_basis(n)], axis=1).astype(float)
    P = np.linalg.pinv(B)
    P[np.abs(P) < 1e-14] = 0.0
    P.setflags(write=False)
    return P


def coordinates(X: np.ndarray) -> np.ndarray:
    """Coordinates of an algebra element (or a stack of them) in the standard basis."""
    X = np.asarray(X, dtype=float)
    n = X.shape[-1] - 2
    P = _coordinate_map(n)
    return X.reshape(X.shape[:-2] + (-1,)) @ P.T


def from_coordinates(c: np.ndarray, n: int) -> np.ndarray:
    B = np.stack(standard_basis(n)).astype(float)
    return np.tensordot(np.asarray(c, dtype=float), B, axes=([-1], [0]))


@lru_cache(maxsize=None)
def exact_structure(n: int) -> tuple[sympy.Matrix, ...]:
    """Exact matrices of ``ad(B_j)`` in the standard basis, one per basis element."""
    basis = [sympy.Matrix(b.tolist()) for b in standard_basis(n)]
    stacked = sympy.Matrix.hstack(*[b.reshape(len(b), 1) for b in basis])
    solver = (stacked.T * stacked).inv() * stacked.T
    out = []
    for X in basis:
        cols = []
        for Y in basis:
            Z = X * Y - Y * X
            cols.append(solver * Z.reshape(len(Z), 1))
        out.append(sympy.Matrix.hstack(*cols))
    return tuple(out)


def adjoint_matrix(g: np.ndarray) -> np.ndarray:
    """Matrix of ``Ad(g)`` acting on standard coordinates."""
    g = np.asarray(g, dtype=float)
    n = g.shape[-1] - 2
    gi = np.linalg.inv(g)
    B = np.stack(standard_basis(n)).astype(float)
    conj = g @ B @ gi
    return coordinates(conj).T


def ad_matrix(X: np.ndarray) -> np.ndarray:
    """Matrix of ``ad(X)`` acting on standard coordinates."""
    X = np.asarray(X, dtype=float)
    n = X.shape[-1] - 2
    B = np.stack(standard_basis(n)).astype(float)
    return coordinates(X @ B - B @ X).T


@dataclass(frozen=True)
class WeightDecomposition:
    """Restricted-root decomposition V_-2 + V_0 + V_2 relative to a frame.

    ``change_of_basis`` maps standard coordinates to weight coordinates, ordered
    as ``basis_minus2 + basis_0 + basis_plus2``.
    """

    frame: object = field(repr=False)
    basis_minus2: tuple
    basis_0: tuple
    basis_plus2: tuple
    change_of_basis: np.ndarray

    @property
    def n(self) -> int:
        return len(self.basis_plus2)

    def slices(self) -> dict[int, slice]:
        return weight_slices(self.n)

    def projector(self, w: int) -> np.ndarray:
        if w not in WEIGHTS:
            raise LieError(f"weight must be one of {WEIGHTS}, got {w}")
        C = self.change_of_basis
        mask = np.zeros(C.shape[0])
        mask[self.slices()[w]] = 1.0
        return np.linalg.solve(C, mask[:, None] * C)

    def weight_coordinates(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.change_of_basis.T


def build_weight_decomposition(frame, cluster_tol: float = 1e-8) -> WeightDecomposition:
    """Eigenspaces of ``Ad(exp T)`` for the eigenvalues e^2, 1, e^-2.

    The numeric eigensolve certifies the dimensions; the returned bases are the
    exact frame-transported integer bases, checked against the eigenvalues.
    """
    from scipy.linalg import expm

    n = frame.n
    M = adjoint_matrix(expm(np.asarray(frame.T, dtype=float)))
    eig = np.linalg.eigvals(M)
    targets = {2: np.e ** 2, 0: 1.0, -2: np.e ** -2}
    counts = {}
    for w, lam in targets.items():
        counts[w] = int(np.sum(np.abs(eig - lam) <= cluster_tol * max(1.0, lam) * 1e2))
    expected = {-2: n, 0: n * (n - 1) // 2 + 1, 2: n}
    if counts != expected or np.max(np.abs(eig.imag)) > cluster_tol:
        raise LieError(f"eigenvalue clustering failed: found {counts}, expected {expected}")

    k = frame.k
    plus = tuple(np.asarray(u, dtype=float) for u in frame.u)
    minus = tuple(cartan_involution(u) for u in plus)
    zero = (np.asarray(frame.T, dtype=float),) + tuple(k @ m @ k.T for m in rotation_basis(n))
    basis = minus + zero + plus
    C_inv = np.stack([coordinates(b) for b in basis], axis=1)
    for w, sl in weight_slices(n).items():
        lam = targets[w]
        resid = M @ C_inv[:, sl] - lam * C_inv[:, sl]
        if np.max(np.abs(resid), initial=0.0) > 1e-8 * lam:
            raise LieError(f"frame basis is not an eigenbasis for weight {w}")
    return WeightDecomposition(frame, minus, zero, plus, np.linalg.inv(C_inv))


class ModuleKind(str, enum.Enum):
    TRIVIAL = "trivial"
    ADJOINT = "adjoint"


@dataclass(frozen=True)
class CoefficientModule:
    """Trivial R or the adjoint representation on so(n+1, 1)."""

    kind: ModuleKind
    n: int
    weights: WeightDecomposition | None = None

    @classmethod
    def trivial(cls, n: int) -> "CoefficientModule":
        return cls(ModuleKind.TRIVIAL, n)

    @classmethod
    def adjoint(cls, frame) -> "CoefficientModule":
        return cls(ModuleKind.ADJOINT, frame.n, build_weight_decomposition(frame))

    @property
    def dim(self) -> int:
        return 1 if self.kind is ModuleKind.TRIVIAL else algebra_dim(self.n)

    @property
    def is_adjoint(self) -> bool:
        return self.kind is ModuleKind.ADJOINT

    def action(self, g: np.ndarray, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if not self.is_adjoint:
            return v.copy()
        return v @ adjoint_matrix(g).T

    def action_matrix(self, g: np.ndarray) -> np.ndarray:
        if not self.is_adjoint:
            return np.eye(1)
        return adjoint_matrix(g)

    def derivative_action(self, X: np.ndarray, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if not self.is_adjoint:
            return np.zeros_like(v)
        return v @ ad_matrix(X).T

    def weight_project(self, v: np.ndarray, w: int) -> np.ndarray:
        if not self.is_adjoint or self.weights is None:
            raise LieError("weight projection needs the adjoint module")
        return np.asarray(v, dtype=float) @ self.weights.projector(w).T
