"""Compiled kernel versus numpy fallback on the Eisenstein summation.

Each case sums an extended form over the cosets of a preset group at a set of
sample points, once per backend, and reports terms per second, the speedup
and the largest disagreement between the two results.

    python benchmarks/bench_kernels.py [--repeat 3] [--points 64] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from cusplab import forms, groups, kernels, lie
from cusplab.lie import CoefficientModule, ModuleKind

CASES = [
    ("hecke-3", ModuleKind.ADJOINT, 10),
    ("hecke-3", ModuleKind.TRIVIAL, 10),
    ("two-cusp", ModuleKind.ADJOINT, 6),
    ("z2-parabolic", ModuleKind.TRIVIAL, 12),
]


def _setup(preset: str, kind: ModuleKind, L: int, points: int, seed: int):
    group = groups.preset(preset)
    n = group.n
    cusp = groups.detect_cusps(group, 5).cusps[0]
    s = 2 * n + 2 if kind is ModuleKind.ADJOINT else 2 * n
    cosets = groups.enumerate_cosets(group, cusp, L, t_threshold=groups.default_t_threshold(s))
    module = CoefficientModule(kind, n)
    if kind is ModuleKind.ADJOINT:
        v = np.zeros(lie.algebra_dim(n))
        v[lie.weight_slices(n)[-2].start] = 1.0
    else:
        v = np.ones(1)
    form = forms.phi(cusp.frame, module, v, local=True).with_s(s)
    rng = np.random.default_rng(seed)
    pts = np.array([cusp.frame.translation(cusp.lattice @ rng.random(n)) @ cusp.frame.dilation(t)
                    for t in np.exp(rng.uniform(-1.0, 1.0, points))])
    return form, cosets, pts


def _time(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(repeat: int, points: int, seed: int, threads: int) -> list[dict]:
    rows = []
    for preset, kind, L in CASES:
        form, cosets, pts = _setup(preset, kind, L, points, seed)
        terms = cosets.count * len(pts)
        row = {"preset": preset, "module": kind.value, "L": L, "cosets": cosets.count,
               "points": len(pts), "terms": terms}
        results = {}
        for backend in ("compiled", "python"):
            if backend == "compiled" and kernels.BACKEND != "compiled":
                row["compiled_s"] = None
                continue
            dt, (vals, _) = _time(lambda: form.hodge_sum(cosets.reps, pts, nthreads=threads,
                                                         backend=backend), repeat)
            row[f"{backend}_s"] = dt
            row[f"{backend}_terms_per_s"] = terms / dt
            results[backend] = vals
        if len(results) == 2:
            a, b = results["compiled"], results["python"]
            row["speedup"] = row["python_s"] / row["compiled_s"]
            row["max_rel_diff"] = float(np.max(np.abs(a - b)) / max(1e-300, np.max(np.abs(b))))
        rows.append(row)
    return rows


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--points", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--json", help="also write the rows to this file")
    args = p.parse_args()
    rows = run(args.repeat, args.points, args.seed, args.threads)
    head = f"{'case':<28}{'terms':>10}{'compiled':>12}{'python':>12}{'speedup':>9}{'max diff':>11}"
    print(head)
    print("-" * len(head))
    for r in rows:
        name = f"{r['preset']}/{r['module']} L={r['L']}"
        comp = f"{r['compiled_s']:.3f}s" if r.get("compiled_s") else "n/a"
        spd = f"{r['speedup']:.1f}x" if "speedup" in r else "n/a"
        diff = f"{r['max_rel_diff']:.1e}" if "max_rel_diff" in r else "n/a"
        print(f"{name:<28}{r['terms']:>10}{comp:>12}{r['python_s']:>11.3f}s{spd:>9}{diff:>11}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
