import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from cusplab import lie
from cusplab.geometry import ParabolicFrame
from cusplab.lie import CoefficientModule, LieError, ModuleKind

from conftest import random_frame, random_group_element

NS = [1, 2, 3]


@pytest.mark.parametrize("n", NS)
def test_basis_lies_in_algebra_and_has_expected_size(n):
    basis = lie.standard_basis(n)
    assert len(basis) == lie.algebra_dim(n)
    assert all(lie.in_algebra(b) for b in basis)
    assert all(b.dtype.kind == "i" for b in basis)
    M = np.stack([b.ravel() for b in basis])
    assert np.linalg.matrix_rank(M) == len(basis)


@pytest.mark.parametrize("n", NS)
def test_bracket_examples(n):
    T = lie.cartan_generator(n)
    u = lie.nilpotent_basis(n)
    X = lie.standard_basis(n)[-1]
    assert not lie.bracket(X, X).any()
    for ui in u:
        assert np.array_equal(lie.bracket(T, ui), 2 * ui)
    for a, b in itertools.combinations(u, 2):
        assert not lie.bracket(a, b).any()


def test_bracket_rejects_mismatched_shapes():
    with pytest.raises(LieError):
        lie.bracket(np.eye(3), np.eye(4))


@pytest.mark.parametrize("n", NS)
def test_cartan_involution_examples(n):
    for k in lie.rotation_basis(n):
        assert np.array_equal(lie.cartan_involution(k), k)
    T = lie.cartan_generator(n)
    assert np.array_equal(lie.cartan_involution(T), -T.T)
    assert np.array_equal(lie.cartan_involution(T), -T)
    frame = ParabolicFrame.standard(n)
    module = CoefficientModule.adjoint(frame)
    for ui in lie.nilpotent_basis(n):
        th = lie.coordinates(lie.cartan_involution(ui))
        assert np.allclose(module.weight_project(th, -2), th, atol=1e-12)
        assert np.allclose(module.weight_project(th, 2), 0, atol=1e-12)
        assert np.allclose(module.weight_project(th, 0), 0, atol=1e-12)


@pytest.mark.parametrize("n", NS)
def test_weight_project_examples(n):
    module = CoefficientModule.adjoint(ParabolicFrame.standard(n))
    u1 = lie.coordinates(lie.nilpotent_basis(n)[0])
    th = lie.coordinates(lie.cartan_involution(lie.nilpotent_basis(n)[0]))
    assert np.allclose(module.weight_project(u1, 2), u1)
    assert np.allclose(module.weight_project(u1, -2), 0)
    # oracle: diagonalize Ad(exp T) numerically and project onto the e^-2 eigenspace
    M = lie.adjoint_matrix(expm(lie.cartan_generator(n).astype(float)))
    ev, V = np.linalg.eig(M)
    coeff = np.linalg.solve(V, th + u1)
    keep = np.abs(ev - np.e ** -2) < 1e-8
    oracle = np.real(V[:, keep] @ coeff[keep])
    assert np.allclose(module.weight_project(th + u1, -2), oracle, atol=1e-10)
    with pytest.raises(LieError):
        module.weight_project(u1, 1)
    with pytest.raises(LieError):
        CoefficientModule.trivial(n).weight_project(np.ones(1), 0)


@pytest.mark.parametrize("n,dims", [(1, (1, 1, 1)), (2, (2, 2, 2)), (3, (3, 4, 3))])
def test_weight_dimensions_against_eigensolve(n, dims, rng):
    for frame in (ParabolicFrame.standard(n), random_frame(rng, n)):
        wd = lie.build_weight_decomposition(frame)
        got = (len(wd.basis_minus2), len(wd.basis_0), len(wd.basis_plus2))
        assert got == dims
        M = lie.adjoint_matrix(expm(frame.T))
        ev = np.sort(np.real(np.linalg.eigvals(M)))
        counts = tuple(int(np.sum(np.abs(ev - lam) < 1e-6)) for lam in (np.e ** -2, 1.0, np.e ** 2))
        assert counts == dims


@pytest.mark.parametrize("n", NS)
def test_jacobi_identity_on_random_triples(n, rng):
    basis = lie.standard_basis(n)
    for _ in range(10):
        X, Y, Z = (basis[i] for i in rng.integers(len(basis), size=3))
        b = lie.bracket
        assert np.abs(b(b(X, Y), Z) + b(b(Y, Z), X) + b(b(Z, X), Y)).max() <= 1e-10


@pytest.mark.parametrize("n", NS)
def test_adjoint_is_a_homomorphism_of_brackets(n, rng):
    for _ in range(10):
        g = random_group_element(rng, n)
        X = lie.from_coordinates(rng.normal(size=lie.algebra_dim(n)), n)
        Y = lie.from_coordinates(rng.normal(size=lie.algebra_dim(n)), n)
        A = lie.adjoint_matrix(g)
        lhs = A @ lie.coordinates(lie.bracket(X, Y))
        rhs = lie.coordinates(lie.bracket(lie.from_coordinates(A @ lie.coordinates(X), n),
                                          lie.from_coordinates(A @ lie.coordinates(Y), n)))
        assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(1.0, np.linalg.norm(lhs))


@pytest.mark.parametrize("n", NS)
def test_bracket_with_nilradical_spans_upper_weights(n):
    basis = lie.standard_basis(n)
    sl = lie.weight_slices(n)
    vecs = np.array([lie.coordinates(lie.bracket(v, u)) for v in basis for u in lie.nilpotent_basis(n)])
    assert np.abs(vecs[:, sl[-2]]).max() <= 1e-10
    d_upper = (sl[0].stop - sl[0].start) + (sl[2].stop - sl[2].start)
    assert np.linalg.matrix_rank(vecs, tol=1e-10) == d_upper


@pytest.mark.parametrize("n", NS)
def test_theta_swaps_extreme_weights(n, rng):
    frame = random_frame(rng, n)
    module = CoefficientModule.adjoint(frame)
    for ui in frame.u:
        th = lie.coordinates(lie.cartan_involution(ui))
        upper = module.weight_project(th, 2) + module.weight_project(th, 0)
        assert np.abs(upper).max() <= 1e-10


@given(st.integers(1, 3), st.lists(st.floats(-3, 3), min_size=10, max_size=10))
def test_coordinates_round_trip(n, raw):
    c = np.array(raw[:lie.algebra_dim(n)])
    assert np.allclose(lie.coordinates(lie.from_coordinates(c, n)), c, atol=1e-12)


def test_ad_matrix_is_derivative_of_adjoint():
    n = 2
    X = lie.from_coordinates(np.linspace(-1, 1, lie.algebra_dim(n)), n)
    h = 1e-6
    fd = (lie.adjoint_matrix(expm(h * X)) - lie.adjoint_matrix(expm(-h * X))) / (2 * h)
    assert np.allclose(fd, lie.ad_matrix(X), atol=1e-7)


def test_trivial_module_acts_trivially():
    m = CoefficientModule.trivial(2)
    assert m.dim == 1 and not m.is_adjoint
    assert np.array_equal(m.action(np.eye(4) * 2, np.ones(1)), np.ones(1))
    assert m.kind is ModuleKind.TRIVIAL
