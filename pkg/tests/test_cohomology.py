import itertools

import numpy as np
import pytest
import sympy
from hypothesis import given, strategies as st

from cusplab import cohomology, lie
from cusplab.cohomology import CohomologyError
from cusplab.geometry import ParabolicFrame
from cusplab.lie import CoefficientModule, ModuleKind

from conftest import random_frame

NS = [1, 2, 3]
KINDS = [ModuleKind.TRIVIAL, ModuleKind.ADJOINT]


def _setup(n, kind, frame=None):
    frame = frame or ParabolicFrame.standard(n)
    return frame, CoefficientModule(kind, n)


@pytest.mark.parametrize("n", NS)
@pytest.mark.parametrize("kind", KINDS)
def test_d_squared_is_exactly_zero(n, kind):
    assert cohomology.check_d_squared(n, kind)
    frame, module = _setup(n, kind)
    mats = cohomology.build_complex(frame, module)
    for a, b in zip(mats, mats[1:]):
        prod = b.exact * a.exact
        assert isinstance(prod, sympy.MatrixBase) and prod.is_zero_matrix


def test_trivial_n1_differential_is_zero():
    frame, module = _setup(1, ModuleKind.TRIVIAL)
    assert not cohomology.build_complex(frame, module)[0].matrix.any()


def test_adjoint_n2_degree_one_differential_has_rank_four():
    frame, module = _setup(2, ModuleKind.ADJOINT)
    d1 = cohomology.build_complex(frame, module)[1].exact
    sl = lie.weight_slices(2)
    assert d1.rank() == (sl[0].stop - sl[0].start) + (sl[2].stop - sl[2].start) == 4


@pytest.mark.parametrize("n", NS)
def test_top_cohomology_dimensions(n):
    frame = ParabolicFrame.standard(n)
    adj = cohomology.top_cohomology(frame, CoefficientModule(ModuleKind.ADJOINT, n))
    triv = cohomology.top_cohomology(frame, CoefficientModule(ModuleKind.TRIVIAL, n))
    assert adj.dim_H == n
    assert triv.dim_H == 1
    assert adj.weight_tags == [-2] * n


@pytest.mark.parametrize("n", NS)
def test_all_degrees_for_trivial_coefficients_are_binomial(n):
    # abelian algebra with trivial coefficients: the differential vanishes
    frame, module = _setup(n, ModuleKind.TRIVIAL)
    for k in range(n + 1):
        assert cohomology.cohomology(frame, module, k).dim_H == len(list(itertools.combinations(range(n), k)))


@pytest.mark.parametrize("n", NS)
def test_j_iso_examples(n, rng):
    frame = random_frame(rng, n)
    module = CoefficientModule(ModuleKind.ADJOINT, n)
    v0 = np.zeros(lie.algebra_dim(n))
    assert not cohomology.J_iso(v0, frame).any()
    theta_u1 = lie.coordinates(lie.cartan_involution(frame.u[0]))
    coc = cohomology.J_iso(theta_u1, frame)
    solve = cohomology.coboundary_solve(coc, frame, module)
    assert solve.relative_residual == pytest.approx(1.0, abs=1e-10)
    u1 = lie.coordinates(frame.u[0])
    with pytest.raises(CohomologyError):
        cohomology.J_iso(u1, frame)
    # the rejected inputs are coboundaries
    for w in (0, 2):
        for e in np.eye(module.dim)[lie.weight_slices(n)[w]]:
            assert cohomology.coboundary_solve(e, frame, module).residual <= 1e-10


@pytest.mark.parametrize("n", NS)
def test_coboundaries_have_no_minus_two_component(n, rng):
    frame, module = _setup(n, ModuleKind.ADJOINT, random_frame(rng, n))
    space = cohomology.cochain_space(frame, module, n - 1)
    sl = lie.weight_slices(n)[-2]
    for _ in range(10):
        b = rng.normal(size=space.dim)
        top = cohomology.apply_d(b, frame, module, n - 1)
        assert np.abs(top[sl]).max() <= 1e-10


def test_van_est_returns_constant_coefficients():
    lattice = np.array([[3.0, 0.5], [0.0, 2.0]])
    c = np.array([0.3, -1.2])
    avg = cohomology.van_est_average(lambda x: np.tile(c, (len(x), 1)), lattice)
    assert np.allclose(avg, c, atol=1e-14)


@pytest.mark.parametrize("scale", [1.0, 2.0])
def test_van_est_removes_exact_periodic_part(scale):
    lattice = scale * np.array([[3.0, 1.0], [0.0, 2.0]])
    Binv = np.linalg.inv(lattice)
    c = 0.7

    def form(x):
        # c + d/dx_1 of a lattice-periodic function
        phase = 2 * np.pi * (x @ Binv.T)
        return c + 2 * np.pi * Binv[0, 0] * np.cos(phase[:, 0]) + 2 * np.pi * Binv[1, 0] * np.cos(phase[:, 1]) * 0.5

    assert cohomology.van_est_average(form, lattice) == pytest.approx(c, abs=1e-8)


def test_torus_average_rejects_degenerate_lattice():
    with pytest.raises(CohomologyError):
        cohomology.torus_average(lambda x: x[:, 0], np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_torus_primitive_recovers_exact_forms():
    n = 2
    frame, module = _setup(n, ModuleKind.TRIVIAL)
    lattice = np.diag([2.0, 3.0])
    m = 16
    ticks = np.arange(m) / m
    c = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 2)
    # d(f du2* - g du1*) = (d1 f + d2 g) du1* ^ du2*
    f = 2 * np.pi / 2 * np.cos(2 * np.pi * c[:, 0])
    g = 2 * np.pi / 3 * np.cos(2 * np.pi * c[:, 1])
    values = (f + g)[:, None]
    sol = cohomology.torus_primitive(values, lattice, frame, module, m)
    assert sol.relative_residual <= 1e-8


def test_transfer_on_toric_cusp_is_identity():
    n = 2
    frame = ParabolicFrame.standard(n)
    v = np.zeros(lie.algebra_dim(n))
    v[lie.weight_slices(n)[-2]] = [0.4, -1.0]
    res = cohomology.transfer_average(v, [np.eye(n + 2)], frame)
    assert np.allclose(res.v, v)
    assert res.fixed_dim == n


def test_transfer_keeps_fixed_axis_and_kills_rotated_plane():
    n = 3
    frame = ParabolicFrame.standard(n)
    m = np.diag([1.0, 1.0, -1.0, -1.0, 1.0])  # pi-rotation of the (u_2, u_3) plane
    sl = lie.weight_slices(n)[-2]
    e = np.eye(lie.algebra_dim(n))
    kept = cohomology.transfer_average(e[sl.start], [np.eye(n + 2), m], frame)
    assert np.allclose(kept.v, e[sl.start], atol=1e-12)
    dead = cohomology.transfer_average(e[sl.start + 1], [np.eye(n + 2), m], frame)
    assert np.allclose(dead.v, 0, atol=1e-12)
    assert kept.fixed_dim == 1


def test_transfer_rejects_non_group():
    n = 3
    frame = ParabolicFrame.standard(n)
    c, s = np.cos(0.3), np.sin(0.3)
    r = np.eye(n + 2)
    r[2:4, 2:4] = [[c, -s], [s, c]]
    with pytest.raises(CohomologyError):
        cohomology.transfer_average(np.eye(lie.algebra_dim(n))[0], [np.eye(n + 2), r], frame)


@given(st.integers(1, 3), st.integers(0, 2 ** 31 - 1))
def test_local_coordinates_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    frame = random_frame(rng, n)
    module = CoefficientModule(ModuleKind.ADJOINT, n)
    v = rng.normal(size=module.dim)
    assert np.allclose(cohomology.from_local(cohomology.to_local(v, frame, module), frame, module), v, atol=1e-12)
