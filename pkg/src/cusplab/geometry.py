"""SO+(n+1, 1): Iwasawa factors, boundary points, charts and the Bruhat cells.

Boundary points are null vectors scaled so that the last coordinate is 1, so
the spatial part is a unit vector of S^n.  A :class:`ParabolicFrame` is the
standard frame at ``xi_0 = e_0 + e_{n+1}`` transported by a rotation ``k`` in
``K = Stab(O)``; all frame data are conjugates of the integer matrices of
:mod:`cusplab.lie` by ``k``.
"""
from __future__ import annotations

import enum
from fractions import Fraction
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import sqrtm

from . import lie

GROUP_TOL = 1e-11
REPROJECT_TOL = 1e-8
# polar projection repairs rounding, not a matrix that was never an isometry
REPROJECT_MAX = 1e-4
BOUNDARY_TOL = 1e-9
BOUNDARY_AMBIGUOUS = 1e-7


class GeometryError(ValueError):
    pass


class IndeterminateError(GeometryError):
    """A boundary comparison landed in the ambiguous tolerance band."""


def group_defect(g: np.ndarray) -> float:
    g = np.asarray(g, dtype=float)
    J = lie.lorentz_matrix(g.shape[0] - 2)
    return float(np.max(np.abs(g.T @ J @ g - J)))


def validate_group_element(g, *, reproject: bool = True) -> np.ndarray:
    """Return ``g`` as a float matrix in SO+(n+1, 1), re-projecting once if needed."""
    g = np.array(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 3:
        raise GeometryError(f"expected a square matrix of size >= 3, got shape {g.shape}")
    defect = group_defect(g)
    if defect > REPROJECT_TOL:
        if not reproject or defect > REPROJECT_MAX * max(1.0, np.abs(g).max() ** 2):
            raise GeometryError(f"matrix is not Lorentzian (defect {defect:.3e})")
        J = lie.lorentz_matrix(g.shape[0] - 2)
        S = J @ g.T @ J @ g
        root = np.real_if_close(sqrtm(S))
        g = g @ np.linalg.inv(np.real(root))
        defect = group_defect(g)
        if defect > GROUP_TOL * 10:
            raise GeometryError(f"re-projection failed (defect {defect:.3e})")
    if abs(np.linalg.det(g) - 1.0) > 1e-9:
        raise GeometryError("determinant is not 1")
    if g[-1, -1] <= 0:
        raise GeometryError("matrix does not preserve the upper sheet")
    return g


def hyperbolic_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    c = -(p[:-1] @ q[:-1] - p[-1] * q[-1])
    if c < 1.0 - 1e-12:
        raise GeometryError(f"points are not on the upper sheet (pairing {c!r})")
    return float(np.arccosh(max(c, 1.0)))


def orbit_distances(gs: np.ndarray) -> np.ndarray:
    """``d(O, g O)`` for a stack of group elements."""
    return np.arccosh(np.maximum(np.asarray(gs)[..., -1, -1], 1.0))


def canonical_boundary(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi[-1] <= 0:
        raise GeometryError("boundary vector must have positive last coordinate")
    xi = xi / xi[-1]
    r2 = xi[:-1] @ xi[:-1]
    if abs(r2 - 1.0) > 1e-6:
        raise GeometryError("vector is not null")
    xi[:-1] /= np.sqrt(r2)
    return xi


def boundary_equal(a, b) -> bool:
    """Compare canonical boundary points; raises inside the ambiguous band."""
    d = float(np.linalg.norm(canonical_boundary(a) - canonical_boundary(b)))
    if d <= BOUNDARY_TOL:
        return True
    if d < BOUNDARY_AMBIGUOUS:
        raise IndeterminateError(f"boundary points differ by {d:.3e}")
    return False


def weyl_standard(n: int) -> np.ndarray:
    """Rotation by pi in the (e_0, e_1) plane: fixes O and reverses the axis to xi_0."""
    w = np.eye(n + 2)
    w[0, 0] = w[1, 1] = -1.0
    return w


def rotation_between(a, b) -> np.ndarray:
    """Element of K sending the unit spatial direction ``a`` to ``b``.

    The rotation acts in the plane spanned by ``a`` and ``b``; antipodal
    directions use the pi-rotation towards the first coordinate axis not
    parallel to ``a``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = a.size
    R = np.eye(m)
    c = float(np.clip(a @ b, -1.0, 1.0))
    if c > 1 - 1e-15:
        pass
    elif c < -1 + 1e-15:
        e = np.eye(m)[np.argmin(np.abs(a))]
        perp = e - (e @ a) * a
        perp /= np.linalg.norm(perp)
        R = R - 2 * np.outer(a, a) - 2 * np.outer(perp, perp)
    else:
        perp = b - c * a
        perp /= np.linalg.norm(perp)
        s = np.sqrt(max(0.0, 1 - c * c))
        R = (R + (c - 1) * (np.outer(a, a) + np.outer(perp, perp))
             + s * (np.outer(perp, a) - np.outer(a, perp)))
    k = np.eye(m + 1)
    k[:m, :m] = R
    return k


def nil_exp(x, n: int) -> np.ndarray:
    """``exp(sum x_i u_i)`` in the standard frame (closed form, X^3 = 0)."""
    x = np.asarray(x, dtype=float)
    N = n + 2
    X = np.zeros((N, N))
    X[0, 1:n + 1] = x
    X[1:n + 1, 0] = -x
    X[N - 1, 1:n + 1] = x
    X[1:n + 1, N - 1] = x
    return np.eye(N) + X + 0.5 * X @ X


def boost(t: float, n: int) -> np.ndarray:
    """``exp(ln(t) T)`` in the standard frame; moves O a distance ``2 |ln t|``."""
    N = n + 2
    a = np.eye(N)
    t2 = t * t
    a[0, 0] = a[N - 1, N - 1] = 0.5 * (t2 + 1 / t2)
    a[0, N - 1] = a[N - 1, 0] = 0.5 * (t2 - 1 / t2)
    return a


@dataclass(frozen=True)
class IwasawaFactors:
    n_part: np.ndarray
    a_part: np.ndarray
    k_part: np.ndarray
    t: float
    translation: np.ndarray


class Cell(str, enum.Enum):
    SMALL = "small"
    BIG = "big"


@dataclass(frozen=True)
class BruhatResult:
    cell: Cell
    n_prime: np.ndarray | None = None
    k: np.ndarray | None = None
    w: np.ndarray | None = None
    p: np.ndarray | None = None


@dataclass(frozen=True)
class ParabolicFrame:
    """Adapted data at a boundary point, obtained by rotating the standard frame."""

    n: int
    k: np.ndarray = field(repr=False)

    @classmethod
    def standard(cls, n: int) -> "ParabolicFrame":
        return cls(n, np.eye(n + 2))

    @classmethod
    def at(cls, xi, n: int | None = None) -> "ParabolicFrame":
        xi = canonical_boundary(xi)
        n = xi.size - 2 if n is None else n
        e0 = np.zeros(n + 1)
        e0[0] = 1.0
        return cls(n, rotation_between(e0, xi[:-1]))

    @cached_property
    def xi(self) -> np.ndarray:
        xi0 = np.zeros(self.n + 2)
        xi0[0] = xi0[-1] = 1.0
        return self.k @ xi0

    @cached_property
    def u(self) -> tuple[np.ndarray, ...]:
        return tuple(self.k @ b @ self.k.T for b in lie.nilpotent_basis(self.n))

    @cached_property
    def T(self) -> np.ndarray:
        return self.k @ lie.cartan_generator(self.n) @ self.k.T

    @cached_property
    def weyl_w(self) -> np.ndarray:
        return self.k @ weyl_standard(self.n) @ self.k.T

    def rotation_to(self, xi_other) -> np.ndarray:
        """``k`` in K with ``k xi = xi_other`` (canonical rotation in their plane)."""
        target = canonical_boundary(xi_other)
        return rotation_between(self.xi[:-1], target[:-1])

    def rotated(self, m: np.ndarray) -> "ParabolicFrame":
        """Frame transported by ``m`` in K (``m`` may fix ``xi``: a K_xi twist)."""
        return ParabolicFrame(self.n, m @ self.k)

    def frame_at(self, xi_other) -> "ParabolicFrame":
        return self.rotated(self.rotation_to(xi_other))

    # -- coordinates -------------------------------------------------------
    def to_standard(self, g: np.ndarray) -> np.ndarray:
        return self.k.T @ g @ self.k

    def from_standard(self, g: np.ndarray) -> np.ndarray:
        return self.k @ g @ self.k.T

    def translation(self, x) -> np.ndarray:
        return self.from_standard(nil_exp(x, self.n))

    def dilation(self, t: float) -> np.ndarray:
        return self.from_standard(boost(t, self.n))

    def chart(self, p) -> tuple[float, np.ndarray]:
        """Upper half-space coordinates ``(y, x)``: O -> (1, 0) and xi -> y = inf."""
        q = self.k.T @ np.asarray(p, dtype=float)
        h = q[-1] - q[0]
        if h <= 0:
            raise GeometryError("point is at the boundary point of the frame")
        return 1.0 / h, q[1:self.n + 1] / h

    def boundary_chart(self, eta) -> np.ndarray:
        """Horizontal coordinate of a boundary point other than ``xi``."""
        q = self.k.T @ canonical_boundary(eta)
        h = q[-1] - q[0]
        if h <= 1e-14:
            raise GeometryError("boundary point coincides with the frame point")
        return q[1:self.n + 1] / h


def chart_to_upper_half_space(p, frame: ParabolicFrame) -> tuple[float, np.ndarray]:
    return frame.chart(p)


def iwasawa(g, frame: ParabolicFrame, *, check: bool = True) -> IwasawaFactors:
    """``g = n a k`` with n in N_xi, a in A_xi, k in K.

    ``k = a^-1 n^-1 g`` depends rationally on the entries of ``g`` (through
    ``y = t^2`` and ``x``), so it is peeled in exact rational arithmetic; in
    floating point the cancellation would cost about ``eps |g|^2``.
    """
    g = np.asarray(g, dtype=float)
    n = frame.n
    N = n + 2
    h = frame.to_standard(g)
    hq = np.vectorize(Fraction, otypes=[object])(h)
    height = hq[-1, -1] - hq[0, -1]
    if height <= 0:
        raise GeometryError("degenerate Iwasawa input")
    y = 1 / height
    xq = hq[1:n + 1, -1] * y
    # exp(-sum x_i u_i) and exp(-ln(t) T), both exact in x and y
    X = np.full((N, N), Fraction(0), dtype=object)
    X[0, 1:n + 1] = -xq
    X[1:n + 1, 0] = xq
    X[N - 1, 1:n + 1] = -xq
    X[1:n + 1, N - 1] = -xq
    I = np.array([[Fraction(int(i == j)) for j in range(N)] for i in range(N)], dtype=object)
    n_inv = I + X + (X @ X) / 2
    a_inv = I.copy()
    a_inv[0, 0] = a_inv[N - 1, N - 1] = (y + 1 / y) / 2
    a_inv[0, N - 1] = a_inv[N - 1, 0] = (1 / y - y) / 2
    k0 = (a_inv @ (n_inv @ hq)).astype(float)
    x = xq.astype(float)
    t = float(np.sqrt(float(y)))
    n0 = nil_exp(x, n)
    a0 = boost(t, n)
    if check:
        resid = np.max(np.abs(n0 @ a0 @ k0 - h))
        scale = max(1.0, float(np.max(np.abs(h))))
        if resid > 1e-8 * scale:
            raise GeometryError(f"Iwasawa reconstruction residual {resid:.3e}")
        # k inherits the input's own departure from the group
        if abs(k0[-1, -1] - 1.0) > 1e-8 + 100 * group_defect(h):
            raise GeometryError(f"Iwasawa K-factor does not fix O ({k0[-1, -1]!r})")
    return IwasawaFactors(frame.from_standard(n0), frame.from_standard(a0),
                          frame.from_standard(k0), t, x)


def character(a, frame: ParabolicFrame) -> float:
    a = np.asarray(a, dtype=float)
    T = frame.T
    comm = a @ T - T @ a
    if np.max(np.abs(comm)) > 1e-10 * max(1.0, float(np.max(np.abs(a)))):
        raise GeometryError("element is not in A_xi")
    y, x = frame.chart(a[:, -1])
    if np.max(np.abs(x)) > 1e-9 * max(1.0, y):
        raise GeometryError("element is not in A_xi")
    return float(np.sqrt(y))


def bruhat_classify(g, frame_from: ParabolicFrame, frame_to: ParabolicFrame) -> BruhatResult:
    """Place ``g`` in ``k P`` (small cell) or ``N' k w P`` (big cell)."""
    g = np.asarray(g, dtype=float)
    image = g @ frame_from.xi
    if boundary_equal(image, frame_to.xi):
        return BruhatResult(Cell.SMALL)
    if boundary_equal(frame_from.xi, frame_to.xi):
        k = np.eye(g.shape[0])
    else:
        k = frame_to.k @ frame_from.k.T
    w = frame_from.weyl_w
    x = frame_to.boundary_chart(image)
    n_prime = frame_to.translation(x)
    p = w.T @ k.T @ frame_to.translation(-x) @ g
    if not boundary_equal(p @ frame_from.xi, frame_from.xi):
        raise GeometryError("Bruhat factor does not fix the source point")
    resid = np.max(np.abs(n_prime @ k @ w @ p - g))
    if resid > 1e-9 * max(1.0, float(np.max(np.abs(g)))):
        raise GeometryError(f"Bruhat reconstruction residual {resid:.3e}")
    return BruhatResult(Cell.BIG, n_prime, k, w, p)
