"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (also repeated in the pytest
terminal summary) before asserting, so a failing criterion still reports
its measured values.
"""
import json
import time

import numpy as np
import pytest
import sympy

from cusplab import cli, cohomology, forms, groups, intertwining as it, lie
from cusplab.geometry import ParabolicFrame
from cusplab.lie import CoefficientModule, ModuleKind

from conftest import random_group_element, record

ADJ = ModuleKind.ADJOINT
TRIV = ModuleKind.TRIVIAL
NS = (1, 2, 3)


def _two_cusp():
    group = groups.preset("two-cusp")
    return group, groups.detect_cusps(group, 5).cusps


def _hecke():
    group = groups.preset("hecke-3")
    return group, groups.detect_cusps(group, 5).cusps[0]


def _minus2(n, a=0):
    v = np.zeros(lie.algebra_dim(n))
    v[lie.weight_slices(n)[-2].start + a] = 1.0
    return v


@pytest.fixture(scope="module")
def two_cusp_runs():
    """The two defining-cusp / cross-cusp intertwining runs at L = 12, m = 16."""
    group, (a, b) = _two_cusp()
    mod = CoefficientModule(ADJ, 2)
    start = time.perf_counter()
    diag = it.intertwine(group, a, a, mod, _minus2(2), L=12, m=16)
    cross = it.intertwine(group, a, b, mod, _minus2(2), L=12, m=16)
    return diag, cross, time.perf_counter() - start, (a, b)


def test_criterion_01_d_squared_is_exact():
    start = time.perf_counter()
    ok = True
    for n in NS:
        for kind in (TRIV, ADJ):
            mats = cohomology.build_complex(ParabolicFrame.standard(n), CoefficientModule(kind, n))
            for d0, d1 in zip(mats, mats[1:]):
                prod = d1.exact * d0.exact
                ok &= isinstance(prod, sympy.MatrixBase) and prod.is_zero_matrix
    elapsed = time.perf_counter() - start
    passed = ok and elapsed < 1.0
    record(1, "d o d = 0 exactly", passed, f"n=1..3, both modules, rational arithmetic, {elapsed:.2f} s (< 1 s)")
    assert passed


def test_criterion_02_top_degree_dimensions():
    start = time.perf_counter()
    dims = {}
    for n in NS:
        frame = ParabolicFrame.standard(n)
        for kind in (ADJ, TRIV):
            dims[(n, kind.value)] = cohomology.top_cohomology(frame, CoefficientModule(kind, n)).dim_H
    elapsed = time.perf_counter() - start
    ok = all(dims[(n, "adjoint")] == n and dims[(n, "trivial")] == 1 for n in NS)
    passed = ok and elapsed < 5.0
    record(2, "top-degree dimensions", passed,
           f"adjoint {[dims[(n, 'adjoint')] for n in NS]}, trivial {[dims[(n, 'trivial')] for n in NS]}, "
           f"{elapsed:.2f} s (< 5 s)")
    assert passed


def _sweep(n, rng):
    """Relative coefficient errors and halving gains over the (weight, s) grid at 10 points."""
    frame = ParabolicFrame.standard(n)
    pts = [random_group_element(rng, n) for _ in range(10)]
    cells = []
    initials = [(ADJ, w, _weight_vector(n, w)) for w in (-2, 0, 2)] + [(TRIV, None, np.ones(1))]
    for kind, w, v in initials:
        base = forms.phi(frame, CoefficientModule(kind, n), v, local=True, allow_mixed=True)
        for s in range(2 * n - 2, 2 * n + 3):
            form = base.with_s(s)
            if forms.differential(form) == 0:
                continue
            coarse = [forms.check_coefficient(form, g, h=1e-3) for g in pts]
            fine = [forms.check_coefficient(form, g, h=5e-4) for g in pts]
            err = max(c.relative_error for c in coarse)
            gain = np.mean([c.relative_error for c in coarse]) / np.mean([c.relative_error for c in fine])
            cells.append((kind.value, w, s, err, gain))
    return cells


def _weight_vector(n, w):
    v = np.zeros(lie.algebra_dim(n))
    v[lie.weight_slices(n)[w].start] = 1.0
    return v


def test_criterion_03_differential_coefficient(rng):
    start = time.perf_counter()
    cells = [c for n in NS for c in _sweep(n, rng)]
    elapsed = time.perf_counter() - start
    worst = max(c[3] for c in cells)
    gains = [c[4] for c in cells]
    passed = worst <= 1e-4 and all(abs(g / 4 - 1) <= 0.2 for g in gains) and elapsed < 10.0
    record(3, "analytic c vs finite differences", passed,
           f"{len(cells)} cells with c != 0, max rel err {worst:.2e} (<= 1e-4), halving gain "
           f"{min(gains):.2f}..{max(gains):.2f} (4 +- 20%), {elapsed:.2f} s (< 10 s)")
    assert passed


def test_criterion_04_closed_points(rng):
    worst = 0.0
    for n in NS:
        frame = ParabolicFrame.standard(n)
        closed = [forms.phi(frame, CoefficientModule(TRIV, n)).with_s(2 * n),
                  forms.phi(frame, CoefficientModule(ADJ, n), _minus2(n), local=True).with_s(2 * n + 2)]
        for form in closed:
            assert forms.differential(form) == 0
            for _ in range(10):
                g = random_group_element(rng, n)
                worst = max(worst, forms.check_coefficient(form, g, h=1e-3, order=4).fd_norm)
    passed = worst <= 1e-6
    record(4, "closed points", passed, f"c = 0 analytically, max fd norm {worst:.2e} (<= 1e-6)")
    assert passed


def _series_report(preset, L=12):
    """Eisenstein series at s = 2n+2 at 5 random points, as the CLI computes it."""
    group = groups.preset(preset)
    cusp = groups.detect_cusps(group, 5).cusps[0]
    n = group.n
    s = 2 * n + 2
    form = forms.phi(cusp.frame, CoefficientModule(ADJ, n), _minus2(n), local=True).with_s(s)
    cos = groups.enumerate_cosets(group, cusp, L, t_threshold=groups.default_t_threshold(s))
    pts = cli._random_points(cusp.frame, cusp.lattice, 5, 0)
    series = forms.eisenstein(form, group, pts, cosets=cos)
    evaluate = forms.series_evaluator(form, cos)
    fd = [float(np.linalg.norm(forms.fd_differential(evaluate, g, cusp.frame, form.module, order=4)))
          for g in pts]
    return series, fd


@pytest.fixture(scope="module")
def series_runs():
    start = time.perf_counter()
    runs = {p: _series_report(p) for p in ("hecke-3", "two-cusp")}
    return runs, time.perf_counter() - start


def test_criterion_05_convergence_gate_and_cauchy_sums(series_runs):
    start = time.perf_counter()
    z = groups.poincare_series(groups.preset("cyclic-parabolic"), 1.0, 120)
    z2 = groups.poincare_series(groups.preset("z2-parabolic"), 2.0, 40)
    runs, series_time = series_runs
    elapsed = time.perf_counter() - start + series_time
    ratios = {p: [a / b for a, b in zip(r.increments, r.increments[1:])] for p, (r, _) in runs.items()}
    passed = (abs(z.delta_hat - 0.5) <= 0.05 and abs(z2.delta_hat - 1.0) <= 0.1
              and all(min(v) >= 2 for v in ratios.values()) and elapsed < 120)
    record(5, "critical exponents and Cauchy partial sums", passed,
           f"Z delta {z.delta_hat:.3f} (0.5 +- 0.05), Z^2 delta {z2.delta_hat:.3f} (1.0 +- 0.1), "
           f"min increment ratio hecke {min(ratios['hecke-3']):.2f} two-cusp {min(ratios['two-cusp']):.2f} "
           f"(>= 2), {elapsed:.1f} s (< 120 s)")
    assert passed


def test_criterion_06_truncated_series_is_closed(series_runs):
    runs, _ = series_runs
    margins = {}
    for p, (series, fd) in runs.items():
        margins[p] = max(fd) - (series.tail_estimate + 1e-6)
    passed = all(m <= 0 for m in margins.values())
    detail = ", ".join(f"{p}: max fd {max(fd):.2e} vs tail {s.tail_estimate:.2e} + 1e-6"
                       for p, (s, fd) in runs.items())
    record(6, "fd differential of the truncated series", passed, detail)
    assert passed


def test_criterion_07_two_exponential_structure(two_cusp_runs):
    diag, cross, elapsed, _ = two_cusp_runs
    passed = (diag.fit_residual <= 0.05 and cross.fit_residual <= 0.05
              and abs(diag.delta_coefficient - 1) <= 0.02 and abs(cross.delta_coefficient) <= 0.02
              and elapsed < 600)
    record(7, "two-exponential fit on the two-cusp preset", passed,
           f"same cusp delta {diag.delta_coefficient:.4f} (1 +- 0.02) residual {diag.fit_residual:.1e}; "
           f"cross delta {cross.delta_coefficient:.1e} (0 +- 0.02) residual {cross.fit_residual:.1e} "
           f"(<= 0.05); {elapsed:.0f} s (< 600 s)")
    assert passed


def test_criterion_08_constant_term_weights(two_cusp_runs):
    group, cusp = _hecke()
    mod = CoefficientModule(ADJ, 1)
    coarse = it.restricted_class(it.intertwine(group, cusp, cusp, mod, L=8), cusp)
    fine = it.restricted_class(it.intertwine(group, cusp, cusp, mod, L=12), cusp)
    diag, cross, _, (a, b) = two_cusp_runs
    rc_diag = it.restricted_class(diag, a)
    rc_cross = it.restricted_class(cross, b)
    triv = it.restricted_class(it.intertwine(group, cusp, cusp, CoefficientModule(TRIV, 1), L=12), cusp)
    checks = {
        "hecke V-2 ratio": fine.c_minus2_ratio <= 0.02,
        "hecke ratio falls with L": fine.c_minus2_ratio < coarse.c_minus2_ratio,
        "two-cusp V-2 ratio": rc_diag.c_minus2_ratio <= 0.02 and rc_cross.c_minus2_ratio <= 0.02,
        "coboundaries": not any(r.violation for r in (fine, rc_diag, rc_cross)),
        "trivial c1": triv.c_minus2_ratio <= 0.02,
    }
    passed = all(checks.values())
    record(8, "constant-term weights", passed,
           f"hecke V-2 ratio {coarse.c_minus2_ratio:.1e} (L=8) -> {fine.c_minus2_ratio:.1e} (L=12); "
           f"two-cusp {rc_diag.c_minus2_ratio:.1e}/{rc_cross.c_minus2_ratio:.1e} (<= 0.02); "
           f"coboundary residuals {fine.coboundary_residual:.1e}, {rc_diag.coboundary_residual:.1e}, "
           f"{rc_cross.coboundary_residual:.1e}; trivial c1 ratio {triv.c_minus2_ratio:.1e} (<= 0.02)"
           + ("" if passed else f"; failed: {[k for k, v in checks.items() if not v]}"))
    assert passed


def test_criterion_09_restriction_matrix():
    group, found = _two_cusp()
    start = time.perf_counter()
    rep = it.independence_report(group, found, ADJ, L=12, m=16)
    elapsed = time.perf_counter() - start
    passed = rep.rank == 4 and rep.offdiag_norm <= 0.02 and rep.cusp_bound == 2 and not rep.partial
    record(9, "restriction matrix on the two-cusp preset", passed,
           f"rank {rep.rank} (4), off-diagonal norm {rep.offdiag_norm:.1e} (<= 0.02), "
           f"diagonal deviation {rep.diag_deviation:.1e}, bound {rep.cusp_bound:g} (2), {elapsed:.0f} s")
    assert passed


DETERMINISM = [
    ["cohomology", "--n", "2"],
    ["closedness", "--n", "2", "--points", "3"],
    ["poincare", "--preset", "hecke-3", "--max-word-len", "10"],
    ["eisenstein", "--preset", "hecke-3", "--max-word-len", "8", "--points", "3"],
    ["intertwine", "--preset", "two-cusp", "--max-word-len", "3", "--to-cusp", "1"],
    ["cusp-report", "--preset", "hecke-3", "--max-word-len", "8"],
]


def test_criterion_10_reports_do_not_depend_on_thread_count(capsys):
    differing = []
    for argv in DETERMINISM:
        outs = []
        for threads in ("1", "8"):
            cli.main(argv + ["--threads", threads, "--no-timing"])
            outs.append(capsys.readouterr().out)
        json.loads(outs[0])
        if outs[0] != outs[1]:
            differing.append(argv[0])
    passed = not differing
    record(10, "thread-count determinism", passed,
           f"{len(DETERMINISM)} commands byte-identical for --threads 1 and 8"
           if passed else f"differing: {differing}")
    assert passed
