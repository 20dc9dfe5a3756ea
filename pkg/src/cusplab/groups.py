"""Finitely generated Kleinian groups given by Lorentz matrices.

Word and coset enumeration, parabolic fixed points and cusp data, Poincare
series partial sums and critical-exponent estimates.

Elements are deduplicated by rounding their entries to a grid of
``DEDUP_TOL``; a k-d tree over the kept elements catches near-coincidences
that straddle a grid boundary.  Pairs closer than ``0.1 * tol`` are merged,
pairs in ``[0.1 * tol, 10 * tol]`` raise :class:`AmbiguityError`.
"""
from __future__ import annotations

import enum
import itertools
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import lie
from .geometry import (
    BOUNDARY_TOL,
    GeometryError,
    ParabolicFrame,
    boundary_equal,
    canonical_boundary,
    nil_exp,
    rotation_between,
    validate_group_element,
    weyl_standard,
)
from .kernels import iwasawa_standard

DEDUP_TOL = 1e-7
L_MAX = 256
WORD_BUDGET = 250_000
MAX_GENERATORS = 8
TORSION_LENGTH = 6
PRESET_ENV = "CUSPLAB_PRESET_DIR"


class GroupError(ValueError):
    """Invalid group definition or request."""


class AmbiguityError(GroupError):
    """Two elements are too close to be told apart at the dedup tolerance."""


# ---------------------------------------------------------------------------
# groups and presets

@dataclass(frozen=True)
class KleinianGroup:
    n: int
    generators: tuple
    labels: tuple
    name: str = "custom"

    def __post_init__(self):
        if not self.generators:
            raise GroupError("a group needs at least one generator")
        if len(self.generators) > MAX_GENERATORS:
            raise GroupError(f"at most {MAX_GENERATORS} generators are supported")
        if len(self.labels) != len(self.generators):
            raise GroupError("labels and generators differ in length")
        gens = []
        for g in self.generators:
            g = np.asarray(g, dtype=float)
            if g.shape != (self.n + 2, self.n + 2):
                raise GroupError(f"generator of shape {g.shape} for n={self.n}")
            g = validate_group_element(g)
            g.setflags(write=False)
            gens.append(g)
        object.__setattr__(self, "generators", tuple(gens))
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def letters(self) -> list[tuple[np.ndarray, str]]:
        """Generators followed by their inverses (``J g^T J``)."""
        J = lie.lorentz_matrix(self.n)
        out = [(g, lab) for g, lab in zip(self.generators, self.labels)]
        out += [(J @ g.T @ J, lab + "^-1") for g, lab in zip(self.generators, self.labels)]
        return out

    def to_json(self) -> dict:
        return {"n": self.n, "generators": [g.tolist() for g in self.generators],
                "labels": list(self.labels)}

    def torsion_check(self, L: int = TORSION_LENGTH, words: "WordSet | None" = None) -> "TorsionReport":
        """Look for elliptic elements among words of length at most ``L``."""
        words = words if words is not None else enumerate_words(self, min(L, TORSION_LENGTH),
                                                                max_elements=50_000)
        found = []
        for g, w in zip(words.elements, words.words):
            if classify_element(g).kind is ElementKind.ELLIPTIC:
                found.append(w)
        return TorsionReport(not found, [format_word(w, self) for w in found[:10]], words.L)


@dataclass(frozen=True)
class TorsionReport:
    torsion_free: bool
    elliptic_words: list
    searched_length: int


def group_from_json(data) -> KleinianGroup:
    if isinstance(data, (str, Path)):
        with open(data) as fh:
            data = json.load(fh)
    try:
        n = int(data["n"])
        gens = [np.asarray(g, dtype=float) for g in data["generators"]]
        labels = data.get("labels") or [f"g{i}" for i in range(len(gens))]
    except (KeyError, TypeError, ValueError) as exc:
        raise GroupError(f"malformed group definition: {exc}") from exc
    try:
        return KleinianGroup(n, tuple(gens), tuple(labels), data.get("name", "custom"))
    except GeometryError as exc:
        raise GroupError(f"generator is not an isometry: {exc}") from exc


def _translation(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return nil_exp(x, x.size)


def _hecke(lam: float) -> KleinianGroup:
    return KleinianGroup(1, (_translation([lam]), weyl_standard(1)), ("T", "S"), f"hecke-{lam:g}")


def _schottky() -> KleinianGroup:
    t = np.e ** 2
    a = ParabolicFrame.standard(1).dilation(t)
    k = rotation_between(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    return KleinianGroup(1, (a, k @ a @ k.T), ("a", "b"), "schottky")


def _two_cusp(lam: float = 3.0) -> KleinianGroup:
    w = weyl_standard(2)
    a, b = _translation([lam, 0.0]), _translation([0.0, lam])
    return KleinianGroup(2, (a, b, w @ a @ w, w @ b @ w), ("a", "b", "c", "d"), "two-cusp")


BUILTIN_PRESETS = {
    "cyclic-parabolic": lambda: KleinianGroup(1, (_translation([1.0]),), ("T",), "cyclic-parabolic"),
    "hecke-3": lambda: _hecke(3.0),
    "hecke-2.5": lambda: _hecke(2.5),
    "theta": lambda: _hecke(2.0),
    "z2-parabolic": lambda: KleinianGroup(2, (_translation([1.0, 0.0]), _translation([0.0, 1.0])),
                                          ("a", "b"), "z2-parabolic"),
    "two-cusp": _two_cusp,
    "schottky": _schottky,
}


def preset_names() -> list[str]:
    names = set(BUILTIN_PRESETS)
    d = os.environ.get(PRESET_ENV)
    if d and Path(d).is_dir():
        names.update(p.stem for p in Path(d).glob("*.json"))
    return sorted(names)


def preset(name: str) -> KleinianGroup:
    """Named group; JSON files in ``$CUSPLAB_PRESET_DIR`` shadow built-ins."""
    d = os.environ.get(PRESET_ENV)
    if d:
        path = Path(d) / f"{name}.json"
        if path.is_file():
            return group_from_json(path)
    if name not in BUILTIN_PRESETS:
        raise GroupError(f"unknown preset {name!r}; known: {', '.join(preset_names())}")
    return BUILTIN_PRESETS[name]()


def format_word(word, group: KleinianGroup) -> str:
    if not word:
        return "e"
    m = len(group.generators)
    return "".join(group.labels[i] if i < m else group.labels[i - m].upper() for i in word)


# ---------------------------------------------------------------------------
# deduplication

def _key(g: np.ndarray, tol: float) -> bytes:
    return np.round(np.asarray(g) / tol).astype(np.int64).tobytes()


class _Dedup:
    """Rounded-key table with a k-d tree check for near-collisions."""

    def __init__(self, tol: float):
        self.tol = tol
        self.table: dict[bytes, int] = {}
        self.flat: list[np.ndarray] = []

    def lookup(self, g: np.ndarray) -> int | None:
        idx = self.table.get(_key(g, self.tol))
        if idx is None:
            return None
        gap = float(np.max(np.abs(self.flat[idx] - g.ravel())))
        if gap <= 0.1 * self.tol:
            return idx
        raise AmbiguityError(f"elements share a rounded key but differ by {gap:.2e}")

    def add(self, g: np.ndarray) -> int:
        self.table[_key(g, self.tol)] = len(self.flat)
        self.flat.append(np.asarray(g, dtype=float).ravel().copy())
        return len(self.flat) - 1

    def audit(self, start: int) -> list[int]:
        """Indices >= ``start`` that duplicate an earlier element across a grid edge."""
        if start >= len(self.flat):
            return []
        X = np.asarray(self.flat)
        tree = cKDTree(X)
        pairs = tree.query_pairs(10 * self.tol, p=np.inf, output_type="ndarray")
        drop = []
        for i, j in pairs:
            i, j = min(i, j), max(i, j)
            if j < start:
                continue
            gap = float(np.max(np.abs(X[i] - X[j])))
            if gap <= 0.1 * self.tol:
                drop.append(j)
            else:
                raise AmbiguityError(f"two kept elements differ by only {gap:.2e}")
        return sorted(set(drop))


# ---------------------------------------------------------------------------
# words

@dataclass(frozen=True)
class WordSet:
    elements: np.ndarray = field(repr=False)
    words: list = field(repr=False)
    lengths: np.ndarray = field(repr=False)
    L: int
    tolerance: float
    complete: bool = True

    @property
    def count(self) -> int:
        return len(self.words)

    def shell_counts(self) -> list[int]:
        return np.bincount(self.lengths, minlength=self.L + 1).tolist()


def _inverse_letter(i: int, m: int) -> int:
    return i + m if i < m else i - m


def enumerate_words(group: KleinianGroup, L: int, tol: float = DEDUP_TOL,
                    max_elements: int | None = WORD_BUDGET) -> WordSet:
    """All distinct elements given by words of length at most ``L``.

    Breadth-first over freely reduced words; within a shell the order is
    (parent order, letter order), so the output is deterministic.  When
    the element count would exceed ``max_elements``, enumeration stops after
    the last complete shell that fits and ``complete`` is False.
    """
    if L < 0 or L > L_MAX:
        raise GroupError(f"word length {L} outside 0..{L_MAX}")
    N = group.n + 2
    letters = [g for g, _ in group.letters]
    m = len(group.generators)
    dedup = _Dedup(tol)
    I = np.eye(N)
    dedup.add(I)
    elements = [I]
    words: list[tuple] = [()]
    lengths = [0]
    frontier = [0]
    complete = True
    reached = 0
    dropped: set[int] = set()
    for depth in range(1, L + 1):
        start = len(elements)
        new_front = []
        for idx in frontier:
            g = elements[idx]
            w = words[idx]
            for li, a in enumerate(letters):
                if w and li == _inverse_letter(w[-1], m):
                    continue
                h = g @ a
                if dedup.lookup(h) is not None:
                    continue
                new_front.append(dedup.add(h))
                elements.append(h)
                words.append(w + (li,))
                lengths.append(depth)
        drop = set(dedup.audit(start))
        if max_elements is not None and len(elements) - len(dropped) - len(drop) > max_elements:
            del elements[start:], words[start:], lengths[start:]
            complete = False
            break
        dropped |= drop
        frontier = [i for i in new_front if i not in drop]
        reached = depth
        if not frontier:
            break
    keep = [i for i in range(len(elements)) if i not in dropped]
    return WordSet(np.asarray(elements)[keep], [words[i] for i in keep],
                   np.asarray(lengths, dtype=int)[keep], reached if not complete else L, tol, complete)


# ---------------------------------------------------------------------------
# element classification

class ElementKind(str, enum.Enum):
    IDENTITY = "identity"
    ELLIPTIC = "elliptic"
    PARABOLIC = "parabolic"
    LOXODROMIC = "loxodromic"


@dataclass(frozen=True)
class Classification:
    kind: ElementKind
    fixed_point: np.ndarray | None = None


def classify_element(g, tol: float = 1e-7) -> Classification:
    """Type of an isometry from the fixed space of ``g`` with eigenvalue 1.

    ``ker(g - I)`` meets the light cone in a single ray exactly for parabolics
    (the unique boundary fixed point); it contains a timelike vector for
    elliptics and only spacelike vectors for loxodromics.
    """
    g = np.asarray(g, dtype=float)
    N = g.shape[0]
    scale = max(1.0, float(np.max(np.abs(g))))
    D = g - np.eye(N)
    if np.max(np.abs(D)) <= tol * scale:
        return Classification(ElementKind.IDENTITY)
    # Jordan blocks of a parabolic perturb its unit eigenvalues by about
    # (eps * |g|)^(1/3); a spectral radius clearly above that is loxodromic.
    radius = float(np.max(np.abs(np.linalg.eigvals(g))))
    if radius > 1.0 + max(1e-4, 10 * (np.finfo(float).eps * scale) ** (1 / 3)):
        return Classification(ElementKind.LOXODROMIC)
    _, sv, Vt = np.linalg.svd(D)
    B = Vt[sv <= 1e-9 * scale].T
    if B.shape[1] == 0:
        return Classification(ElementKind.LOXODROMIC)
    J = lie.lorentz_matrix(N - 2)
    q = B.T @ J @ B
    ev, evec = np.linalg.eigh(q)
    if ev[0] < -tol:
        return Classification(ElementKind.ELLIPTIC)
    null = np.abs(ev) <= tol
    if null.sum() == 1:
        xi = B @ evec[:, int(np.argmax(null))]
        return Classification(ElementKind.PARABOLIC, canonical_boundary(xi * np.sign(xi[-1])))
    if null.sum() > 1:
        raise AmbiguityError("degenerate fixed space; cannot classify element")
    return Classification(ElementKind.LOXODROMIC)


# ---------------------------------------------------------------------------
# cusps

@dataclass(frozen=True)
class CuspDatum:
    xi: np.ndarray
    frame: ParabolicFrame = field(repr=False)
    peripheral_generators: list = field(repr=False)
    rank: int
    lattice: np.ndarray
    is_toric: bool
    fundamental_diameter: float
    orbit_points: list = field(default_factory=list, repr=False)
    finite_parts: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.frame.n

    @property
    def full_rank(self) -> bool:
        return self.rank == self.n

    def with_frame(self, frame: ParabolicFrame) -> "CuspDatum":
        """Same cusp expressed in another frame at the same point (e.g. K_xi-twisted)."""
        if not boundary_equal(frame.xi, self.xi):
            raise GroupError("frame is based at a different boundary point")
        vecs = [frame.to_standard(p) for p in self.peripheral_generators]
        trans = [iwasawa_standard(v[None])[1][0] for v in vecs]
        lattice = _lattice_basis(np.array(trans), self.rank)
        return CuspDatum(self.xi, frame, self.peripheral_generators, self.rank, lattice,
                         self.is_toric, self.fundamental_diameter, self.orbit_points,
                         self.finite_parts)


@dataclass(frozen=True)
class CuspSearch:
    cusps: list
    excluded: list
    L: int
    conjugacy_note: str


def _hnf_refine(B: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Basis of the lattice generated by the columns of ``B`` and ``v``."""
    import sympy
    from sympy.matrices.normalforms import hermite_normal_form

    c = np.linalg.solve(B, v)
    fr = [Fraction(float(x)).limit_denominator(64) for x in c]
    if max(abs(float(f) - x) for f, x in zip(fr, c)) > 1e-6:
        raise GroupError("translation is not commensurable with the lattice")
    den = 1
    for f in fr:
        den = den * f.denominator // np.gcd(den, f.denominator)
    k = B.shape[0]
    M = sympy.Matrix(k, k + 1, lambda i, j: den if (j == i) else 0)
    for i, f in enumerate(fr):
        M[i, k] = int(f * den)
    H = hermite_normal_form(M)
    H = np.array(H.tolist(), dtype=float)[:, :k] / den
    return B @ H


def _lattice_basis(vectors: np.ndarray, rank: int) -> np.ndarray:
    """Reduced basis (columns) of the lattice spanned by translation vectors.

    Greedy successive minima on the supplied vectors, then every vector is
    checked to be an integral combination; non-integral ones refine the
    lattice through a Hermite normal form.  Columns are returned shortest first.
    """
    vecs = [v for v in vectors if np.linalg.norm(v) > 1e-9]
    vecs.sort(key=lambda v: (round(float(np.linalg.norm(v)), 9), tuple(np.round(-v, 9))))
    basis: list[np.ndarray] = []
    for v in vecs:
        cand = np.array(basis + [v]).T
        if np.linalg.matrix_rank(cand, tol=1e-8) > len(basis):
            basis.append(v)
        if len(basis) == rank:
            break
    if not basis:
        return np.zeros((vectors.shape[1] if vectors.ndim == 2 else 0, 0))
    B = np.array(basis).T
    if B.shape[0] == B.shape[1]:
        for v in vecs:
            c = np.linalg.solve(B, v)
            if np.max(np.abs(c - np.round(c))) > 1e-6:
                B = _hnf_refine(B, v)
        # size-reduce (Lagrange/Gauss style, sufficient for rank <= 3)
        changed = True
        while changed:
            changed = False
            order = np.argsort(np.linalg.norm(B, axis=0), kind="stable")
            B = B[:, order]
            for i in range(B.shape[1]):
                for j in range(B.shape[1]):
                    if i == j:
                        continue
                    mu = round(float(B[:, i] @ B[:, j] / (B[:, j] @ B[:, j])))
                    if mu and np.linalg.norm(B[:, i] - mu * B[:, j]) < np.linalg.norm(B[:, i]) - 1e-12:
                        B[:, i] = B[:, i] - mu * B[:, j]
                        changed = True
        for i in range(B.shape[1]):
            nz = np.flatnonzero(np.abs(B[:, i]) > 1e-12)
            if nz.size and B[nz[0], i] < 0:
                B[:, i] = -B[:, i]
    return B


def _cell_diameter(B: np.ndarray) -> float:
    import itertools
    k = B.shape[1]
    best = 0.0
    for eps in itertools.product((-1, 0, 1), repeat=k):
        best = max(best, float(np.linalg.norm(B @ np.array(eps, dtype=float))))
    return best


def _cluster_points(points: list[np.ndarray]) -> list[list[int]]:
    reps: list[np.ndarray] = []
    groups: list[list[int]] = []
    for i, p in enumerate(points):
        for gi, r in enumerate(reps):
            if boundary_equal(p, r):
                groups[gi].append(i)
                break
        else:
            reps.append(p)
            groups.append([i])
    return groups


def detect_cusps(group: KleinianGroup, L: int, words: WordSet | None = None) -> CuspSearch:
    """Cusp data, one per conjugacy class of parabolic fixed points found up to ``L``.

    Conjugacy is semi-decided: two fixed points are merged when some
    enumerated element maps one to the other.
    """
    words = words if words is not None else enumerate_words(group, L)
    n = group.n
    para = []
    for idx, g in enumerate(words.elements):
        c = classify_element(g)
        if c.kind is ElementKind.PARABOLIC:
            para.append((idx, c.fixed_point))
    if not para:
        return CuspSearch([], [], words.L, "no parabolic elements up to the search length")
    clusters = _cluster_points([p for _, p in para])
    points = [para[c[0]][1] for c in clusters]
    # union-find over points related by an enumerated element
    parent = list(range(len(points)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    E = words.elements
    for i, p in enumerate(points):
        images = E @ p
        images = images / images[:, -1:]
        for j in range(i + 1, len(points)):
            if find(i) == find(j):
                continue
            gap = np.linalg.norm(images - points[j], axis=1)
            if np.any(gap <= BOUNDARY_TOL):
                parent[find(j)] = find(i)
    classes: dict[int, list[int]] = {}
    for i in range(len(points)):
        classes.setdefault(find(i), []).append(i)

    cusps, excluded = [], []
    for members in sorted(classes.values(), key=lambda ms: min(clusters[m][0] for m in ms)):
        rep_cluster = min(members, key=lambda m: clusters[m][0])
        xi = points[rep_cluster]
        frame = ParabolicFrame.at(xi, n)
        idxs = [para[k][0] for k in clusters[rep_cluster]]
        gens = [E[i] for i in idxs]
        std = np.array([frame.to_standard(g) for g in gens])
        _, trans, kpart = iwasawa_standard(std)
        rot = kpart[:, 1:n + 1, 1:n + 1]
        pure = np.all(np.abs(rot - np.eye(n)) <= 1e-8, axis=(1, 2))
        rank = int(np.linalg.matrix_rank(trans[pure], tol=1e-8)) if pure.any() else 0
        lattice = _lattice_basis(trans[pure], rank) if rank else np.zeros((n, 0))
        finite = [np.eye(n + 2)]
        for r in rot[~pure]:
            k = np.eye(n + 2)
            k[1:n + 1, 1:n + 1] = r
            k = frame.from_standard(k)
            if not any(np.max(np.abs(k - f)) <= 1e-8 for f in finite):
                finite.append(k)
        datum = CuspDatum(xi, frame, gens, rank, lattice, bool(pure.all()),
                          _cell_diameter(lattice) if rank else float("inf"),
                          [points[m] for m in sorted(members)], finite)
        (cusps if rank == n else excluded).append(datum)
    note = "classes are non-conjugate up to word length %d" % words.L
    return CuspSearch(cusps, excluded, words.L, note)


def cusp_at(group: KleinianGroup, xi, L: int = 6, frame: ParabolicFrame | None = None) -> CuspDatum:
    """Cusp datum for a specific boundary point (which must be a parabolic fixed point)."""
    search = detect_cusps(group, L)
    for c in search.cusps + search.excluded:
        for p in c.orbit_points:
            if boundary_equal(p, xi):
                if not boundary_equal(c.xi, xi):
                    break
                return c.with_frame(frame) if frame is not None else c
    raise GroupError("no cusp of the group at the requested point within the search length")


# ---------------------------------------------------------------------------
# cosets

@dataclass(frozen=True)
class CosetEnumeration:
    reps: np.ndarray = field(repr=False)
    keys: list = field(repr=False)
    depths: np.ndarray = field(repr=False)
    words: list = field(repr=False)
    t: np.ndarray = field(repr=False)
    L: int
    dedup_tolerance: float
    t_threshold: float
    cusp: CuspDatum = field(repr=False)
    pruned: int = 0
    shifts: np.ndarray | None = field(default=None, repr=False)
    saturation: int = 0

    @property
    def count(self) -> int:
        return len(self.keys)

    def _shifts(self) -> np.ndarray:
        if self.shifts is None:
            return np.zeros((self.count, self.cusp.frame.n), dtype=int)
        return self.shifts

    def saturate(self, K: int) -> "CosetEnumeration":
        """Close the list under right multiplication by peripheral translations.

        Every coset ``Gamma_xi g`` gains ``Gamma_xi g p`` for the lattice
        translations ``p`` with integer coordinates in ``[-K, K]^n``.  A torus
        average over the saturated list approximates the unfolded integral over
        all of ``N_xi`` for each double coset, which a word-length cut does not.
        Only toric cusps qualify, since their lattice translations lie in the group.
        """
        if K <= 0:
            return self
        cusp = self.cusp
        if not (cusp.is_toric and cusp.full_rank):
            raise GroupError("saturation needs a toric cusp of full rank")
        n = cusp.frame.n
        grid = [np.array(c) for c in itertools.product(range(-K, K + 1), repeat=n) if any(c)]
        grid.sort(key=lambda c: (int(np.max(np.abs(c))), tuple(c)))
        translations = [(c, cusp.frame.translation(cusp.lattice @ c)) for c in grid]
        dedup = _Dedup(self.dedup_tolerance)
        for r in self.reps:
            dedup.add(r)
        reps, keys, depths, words, ts = list(self.reps), list(self.keys), list(self.depths), list(self.words), list(self.t)
        shifts = list(self._shifts())
        start = len(reps)
        for i in range(self.count):
            for c, P in translations:
                r, k, t = canonicalize(self.reps[i] @ P, cusp, self.dedup_tolerance)
                if dedup.lookup(r) is not None:
                    continue
                dedup.add(r)
                reps.append(r)
                keys.append(k)
                depths.append(self.depths[i])
                words.append(self.words[i])
                ts.append(t)
                shifts.append(shifts[i] + c)
        drop = set(dedup.audit(start))
        order = sorted((i for i in range(len(reps)) if i not in drop), key=lambda i: (depths[i], keys[i]))
        return CosetEnumeration(np.asarray(reps)[order], [keys[i] for i in order],
                                np.asarray(depths)[order], [words[i] for i in order],
                                np.asarray(ts)[order], self.L, self.dedup_tolerance, self.t_threshold,
                                cusp, self.pruned, np.asarray(shifts, dtype=int)[order], K)

    def deep_cosets(self) -> int:
        """Cosets whose orbit point lies inside the horoball of height 1."""
        return int(np.sum(self.t > 1.0 + 1e-12))

    def restrict(self, depth: int | None = None, t_min: float = 0.0) -> "CosetEnumeration":
        mask = np.ones(self.count, dtype=bool)
        if depth is not None:
            mask &= self.depths <= depth
        if t_min > 0:
            mask &= self.t >= t_min
        idx = np.flatnonzero(mask)
        return CosetEnumeration(self.reps[idx], [self.keys[i] for i in idx], self.depths[idx],
                                [self.words[i] for i in idx], self.t[idx],
                                depth if depth is not None else self.L, self.dedup_tolerance,
                                max(self.t_threshold, t_min), self.cusp, self.pruned,
                                None if self.shifts is None else self.shifts[idx], self.saturation)


def canonicalize(g, cusp: CuspDatum, tol: float = DEDUP_TOL) -> tuple[np.ndarray, bytes, float]:
    """Coset representative of ``Gamma_xi g`` with translation in the fundamental cell.

    Returns ``(rep, key, t)``; for non-toric cusps the finite rotation parts are
    also applied and the smallest key is kept.
    """
    if not cusp.full_rank:
        raise GroupError("cosets are only defined here for full-rank cusps")
    frame = cusp.frame
    B = cusp.lattice
    Binv = np.linalg.inv(B)
    best = None
    for f in cusp.finite_parts or [np.eye(frame.n + 2)]:
        h = frame.to_standard(f @ np.asarray(g, dtype=float))
        t, x, _ = iwasawa_standard(h[None])
        c = Binv @ x[0]
        shift = np.round(c)
        shift += (c - shift > 0.5 - 1e-9)
        c_new = c - shift
        if np.max(np.abs(c_new)) > 0.5 + 1e-9:
            raise GroupError("canonicalization left the fundamental cell")
        rep_std = nil_exp(-B @ shift, frame.n) @ h
        rep = frame.from_standard(rep_std)
        key = _key(rep, tol)
        if best is None or key < best[1]:
            best = (rep, key, float(t[0]))
    return best


def default_t_threshold(s: float, floor: float = 1e-9) -> float:
    """Pruning height whose single-term weight ``t^s`` equals ``floor``."""
    return floor ** (1.0 / s) if s > 0 else 0.0


def enumerate_cosets(group: KleinianGroup, cusp: CuspDatum, L: int, t_threshold: float = 0.0,
                     tol: float = DEDUP_TOL, max_cosets: int | None = None) -> CosetEnumeration:
    """Breadth-first search of the Schreier graph of ``Gamma_xi \\ Gamma``.

    Every coset reachable by a word of length at most ``L`` is listed once, with
    its canonical representative and depth (shortest word length).  Cosets with
    ``t < t_threshold`` are kept but not expanded; for the Eisenstein sums their
    descendants contribute below the threshold.
    """
    if L < 0 or L > L_MAX:
        raise GroupError(f"coset depth {L} out of range")
    letters = [g for g, _ in group.letters]
    dedup = _Dedup(tol)
    rep, key, t0 = canonicalize(np.eye(group.n + 2), cusp, tol)
    dedup.add(rep)
    reps, keys, depths, words, ts = [rep], [key], [0], [()], [t0]
    frontier = [0]
    pruned = 0
    dropped: set[int] = set()
    for depth in range(1, L + 1):
        start = len(reps)
        nxt = []
        for idx in frontier:
            if ts[idx] < t_threshold:
                pruned += 1
                continue
            g = reps[idx]
            for li, a in enumerate(letters):
                r, k, t = canonicalize(g @ a, cusp, tol)
                if dedup.lookup(r) is not None:
                    continue
                nxt.append(dedup.add(r))
                reps.append(r)
                keys.append(k)
                depths.append(depth)
                words.append(words[idx] + (li,))
                ts.append(t)
        drop = set(dedup.audit(start))
        dropped |= drop
        frontier = [i for i in nxt if i not in drop]
        if max_cosets is not None and len(reps) > max_cosets:
            raise GroupError(f"coset enumeration exceeded {max_cosets} cosets")
        if not frontier:
            break
    # deterministic order: by depth, then key
    order = sorted((i for i in range(len(reps)) if i not in dropped), key=lambda i: (depths[i], keys[i]))
    return CosetEnumeration(np.asarray(reps)[order], [keys[i] for i in order],
                            np.asarray(depths)[order], [words[i] for i in order],
                            np.asarray(ts)[order], L, tol, t_threshold, cusp, pruned)


# ---------------------------------------------------------------------------
# Poincare series

@dataclass(frozen=True)
class PoincareEstimate:
    s: float
    partial_sums: list
    delta_hat: float
    band: float
    convergent: bool
    completeness_radius: float
    shell_masses: list = field(default_factory=list)


def orbit_distances(elements: np.ndarray) -> np.ndarray:
    # d(O, gO) = arccosh(g[-1, -1])
    return np.arccosh(np.maximum(elements[:, -1, -1], 1.0))


def estimate_delta(distances: np.ndarray, lengths: np.ndarray, L: int,
                   window: float = 1.5) -> tuple[float, float, float]:
    """Growth exponent of the orbit counting function ``N(R) ~ C e^{delta R}``.

    Only radii below the completeness radius ``R_c`` (the smallest distance in
    the outermost shell) are trusted; the slope of ``log N`` is fitted on
    ``[R_c - window, R_c]`` at the sorted distances, with midpoint counts.
    Returns ``(delta_hat, band, R_c)``.
    """
    d = np.sort(distances)
    outer = distances[lengths == L]
    R_c = float(outer.min()) if outer.size else float(d[-1])
    counts = np.arange(1, d.size + 1) - 0.5
    sel = (d <= R_c) & (d >= R_c - window)
    x, y = d[sel], np.log(counts[sel])
    if x.size < 4 or np.ptp(x) < 1e-9:
        raise GroupError("too few orbit points in the regression window")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    resid = y - A @ coef
    se = float(np.sqrt(resid @ resid / max(1, x.size - 2) / np.sum((x - x.mean()) ** 2)))
    mid = 0.5 * (x.min() + x.max())
    halves = []
    for part in (x <= mid, x >= mid):
        if part.sum() >= 3 and np.ptp(x[part]) > 1e-9:
            halves.append(np.polyfit(x[part], y[part], 1)[0])
    spread = abs(halves[0] - halves[1]) / 2 if len(halves) == 2 else abs(slope)
    band = 2 * se + spread
    return slope, float(band), R_c


def poincare_series(group: KleinianGroup, s: float, L: int, words: WordSet | None = None) -> PoincareEstimate:
    words = words if words is not None else enumerate_words(group, L)
    if words.L < 4:
        raise GroupError("need at least 4 word-length shells")
    d = orbit_distances(words.elements)
    terms = np.exp(-s * d)
    shells = [float(terms[words.lengths == k].sum()) for k in range(words.L + 1)]
    partial = np.cumsum(shells).tolist()
    delta, band, R_c = estimate_delta(d, words.lengths, words.L)
    return PoincareEstimate(float(s), partial, delta, band, bool(s > delta + band), R_c, shells)


class GateDecision(str, enum.Enum):
    CONVERGES = "converges"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Gate:
    decision: GateDecision
    exponent: float
    delta_hat: float
    band: float
    message: str

    @property
    def converges(self) -> bool:
        return self.decision is GateDecision.CONVERGES


def convergence_gate(group: KleinianGroup, cusp: CuspDatum | None, s: float,
                     estimate: PoincareEstimate | None = None, L: int = 12,
                     max_elements: int = 200_000) -> Gate:
    """Convergence of the Eisenstein series at ``s`` via ``P_{s/2}``."""
    if estimate is None:
        words = enumerate_words(group, L, max_elements=max_elements)
        estimate = poincare_series(group, s / 2, words.L, words)
    e = s / 2
    ok = e > estimate.delta_hat + estimate.band
    msg = (f"s/2 = {e:g} {'>' if ok else '<='} delta_hat + band = "
           f"{estimate.delta_hat:.3f} + {estimate.band:.3f}")
    return Gate(GateDecision.CONVERGES if ok else GateDecision.UNKNOWN, e,
                estimate.delta_hat, estimate.band, msg)
