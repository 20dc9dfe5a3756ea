import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.linalg import expm

from cusplab import forms, groups, kernels, lie
from cusplab.geometry import ParabolicFrame, iwasawa
from cusplab.lie import CoefficientModule, ModuleKind

from conftest import cusps, preset, random_group_element

compiled = pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled kernel not built")


def _case(name, kind, L):
    (cusp, *_) = cusps(name)
    n = cusp.frame.n
    module = CoefficientModule(kind, n)
    v = lie.coordinates(lie.cartan_involution(cusp.frame.u[0])) if module.is_adjoint else 1.0
    f = forms.phi(cusp.frame, module, v).with_s(2 * n + 2 if module.is_adjoint else 2 * n)
    cos = groups.enumerate_cosets(preset(name), cusp, L)
    pts = np.stack([expm(r * cusp.frame.T) @ cusp.frame.translation(np.full(n, 0.1 * r))
                    for r in np.linspace(-1.0, 1.0, 5)])
    return f, cos.reps, pts


CASES = [("hecke-3", ModuleKind.ADJOINT, 8), ("hecke-3", ModuleKind.TRIVIAL, 8),
         ("two-cusp", ModuleKind.ADJOINT, 4), ("two-cusp", ModuleKind.TRIVIAL, 4)]


@compiled
@pytest.mark.parametrize("name,kind,L", CASES)
def test_backends_agree(name, kind, L):
    f, reps, pts = _case(name, kind, L)
    a, ma = f.hodge_sum(reps, pts, backend="compiled")
    b, mb = f.hodge_sum(reps, pts, backend="python")
    # per-term rounding grows with |gamma|^2 for far cosets; both backends see it
    assert np.abs(a - b).max() <= 1e-9 * max(1.0, np.abs(b).max())
    assert np.allclose(ma, mb, rtol=1e-9)


@pytest.mark.parametrize("backend", ["python", pytest.param("compiled", marks=compiled)])
@pytest.mark.parametrize("name,kind,L", CASES[:2])
def test_thread_count_does_not_change_sums(backend, name, kind, L):
    f, reps, pts = _case(name, kind, L)
    one, m1 = f.hodge_sum(reps, pts, nthreads=1, backend=backend)
    eight, m8 = f.hodge_sum(reps, pts, nthreads=8, backend=backend)
    assert np.array_equal(one, eight) and np.array_equal(m1, m8)


def test_sum_equals_sum_of_terms():
    f, reps, pts = _case("hecke-3", ModuleKind.ADJOINT, 6)
    vrows, trows = f._rows()
    k = f.frame.k
    gam = np.einsum("ji,mjk,kl->mil", k, reps, k)
    p = k.T @ pts[2] @ k
    vals, ts = kernels.form_terms(gam @ p, f.s, vrows, trows, True)
    total, mass = kernels.form_sum(gam, p[None], f.s, vrows, trows, True, backend="python")
    assert np.allclose(vals.sum(axis=0), total[0], rtol=1e-12, atol=1e-14)
    assert mass[0] == pytest.approx(ts.sum(), rel=1e-12)


def test_vectorised_iwasawa_matches_geometry(rng):
    n = 2
    frame = ParabolicFrame.standard(n)
    H = np.stack([random_group_element(rng, n) for _ in range(20)])
    t, x, k = kernels.iwasawa_standard(H)
    for i, h in enumerate(H):
        f = iwasawa(h, frame)
        assert t[i] == pytest.approx(f.t, rel=1e-12)
        assert np.allclose(x[i], f.translation, atol=1e-12)
        assert np.allclose(k[i], f.k_part, atol=1e-10)


def test_algebra_coords_inverts_from_coordinates(rng):
    for n in (1, 2, 3):
        c = rng.normal(size=(4, lie.algebra_dim(n)))
        mats = np.stack([lie.from_coordinates(v, n) for v in c])
        assert np.allclose(kernels.algebra_coords(mats, n), c, atol=1e-12)


def test_environment_forces_fallback():
    env = dict(os.environ, CUSPLAB_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from cusplab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_compiled_backend_request_without_extension_raises(monkeypatch):
    monkeypatch.setattr(kernels, "_compiled", None)
    f, reps, pts = _case("hecke-3", ModuleKind.TRIVIAL, 3)
    with pytest.raises(RuntimeError):
        f.hodge_sum(reps, pts, backend="compiled")
