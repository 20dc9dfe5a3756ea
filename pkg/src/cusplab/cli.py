"""Command-line driver: ``cusplab <command> [options]``.

Every command writes one report (JSON, CSV or text) holding the command, the
configuration echo and its hash, the library version, the results payload and
a list of checks, each with value, tolerance and pass flag.  Exit codes: 0 all
checks pass, 2 a numeric check failed, 3 a convergence gate refused, 4 bad
configuration.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, cohomology, forms, groups, intertwining, lie
from .geometry import ParabolicFrame, rotation_between
from .lie import CoefficientModule, ModuleKind

EXIT_OK, EXIT_FAIL, EXIT_GATE, EXIT_CONFIG = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


@dataclass
class Report:
    command: str
    config: dict
    results: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    wall_clock: float | None = None
    gate_refused: bool = False

    def check(self, name: str, value, tolerance, passed: bool) -> None:
        self.checks.append({"criterion": name, "value": _plain(value),
                            "tolerance": _plain(tolerance), "pass": bool(passed)})

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def exit_code(self) -> int:
        if self.gate_refused:
            return EXIT_GATE
        return EXIT_OK if self.passed else EXIT_FAIL

    def to_json(self) -> dict:
        out = {
            "command": self.command,
            "version": __version__,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "results": _plain(self.results),
            "checks": self.checks,
            "all_pass": self.passed,
        }
        if self.wall_clock is not None:
            out["wall_clock_s"] = round(self.wall_clock, 3)
        return out


def _plain(x):
    """JSON-ready copy: arrays to lists, numpy scalars to Python numbers."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def render(report: Report, fmt: str) -> str:
    data = report.to_json()
    if fmt == "json":
        return json.dumps(data, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["criterion", "value", "tolerance", "pass"])
        for c in report.checks:
            w.writerow([c["criterion"], json.dumps(c["value"]), json.dumps(c["tolerance"]),
                        "true" if c["pass"] else "false"])
        return buf.getvalue()
    lines = [f"cusplab {__version__}  {report.command}  config {data['config_hash']}"]
    for k, v in sorted(report.config.items()):
        lines.append(f"  {k} = {v}")
    for c in report.checks:
        flag = "PASS" if c["pass"] else "FAIL"
        lines.append(f"[{flag}] {c['criterion']}: {c['value']} (tolerance {c['tolerance']})")
    if report.wall_clock is not None:
        lines.append(f"wall clock {report.wall_clock:.2f} s")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# configuration

def _load_group(args) -> groups.KleinianGroup:
    if args.group and args.preset:
        raise ConfigError("give either --group or --preset, not both")
    try:
        if args.group:
            return groups.group_from_json(args.group)
        if args.preset:
            return groups.preset(args.preset)
    except (OSError, json.JSONDecodeError, groups.GroupError) as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError("this command needs --group FILE or --preset NAME")


def _quadrature(spec: str | None) -> tuple[int, float]:
    if not spec:
        return 16, 1e-6
    try:
        head, _, tail = spec.partition(":")
        m = int(head)
        target = float(tail) if tail else 1e-6
    except ValueError as exc:
        raise ConfigError(f"--quadrature expects M[:TARGET], got {spec!r}") from exc
    if m < 2 or m & (m - 1):
        raise ConfigError("--quadrature M must be a power of two >= 2")
    return m, target


def _module_kind(name: str) -> ModuleKind:
    return ModuleKind.ADJOINT if name == "adjoint" else ModuleKind.TRIVIAL


def _default_s(kind: ModuleKind, n: int) -> float:
    return float(2 * n + 2 if kind is ModuleKind.ADJOINT else 2 * n)


def _config(args, n: int | None = None) -> dict:
    cfg = {"command": args.command, "module": args.module}
    if getattr(args, "group", None):
        cfg["group"] = str(args.group)
    if getattr(args, "preset", None):
        cfg["preset"] = args.preset
    if n is not None:
        cfg["n"] = n
        cfg["s"] = float(args.s) if args.s is not None else _default_s(_module_kind(args.module), n)
    for key in ("max_word_len", "epsilon", "quadrature", "seed", "cusp_word_len",
                "from_cusp", "to_cusp", "points", "h", "stencil_order"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    return cfg


def _source_cusps(group, args) -> list:
    search = groups.detect_cusps(group, args.cusp_word_len)
    full = [c for c in search.cusps if c.full_rank]
    if not full:
        raise ConfigError("no full-rank cusp found within the cusp search length")
    return full


def _initial(kind: ModuleKind, n: int, index: int = 0) -> np.ndarray:
    if kind is ModuleKind.TRIVIAL:
        return np.ones(1)
    v = np.zeros(lie.algebra_dim(n))
    v[lie.weight_slices(n)[-2].start + index] = 1.0
    return v


def _random_points(frame: ParabolicFrame, lattice, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = frame.n
    out = []
    for _ in range(count):
        x = lattice @ (rng.random(lattice.shape[1]) - 0.5)
        t = float(np.exp(rng.uniform(-0.2, 0.4)))
        a = rng.normal(size=n + 1)
        b = rng.normal(size=n + 1)
        k = rotation_between(a / np.linalg.norm(a), b / np.linalg.norm(b))
        out.append(frame.translation(x) @ frame.dilation(t) @ k)
    return np.array(out)


# ---------------------------------------------------------------------------
# commands

def cmd_cohomology(args) -> Report:
    n = args.n
    if args.group or args.preset:
        n = _load_group(args).n
    if n is None or n < 1 or n > 3:
        raise ConfigError("cohomology needs --n in 1..3 (or a group)")
    kind = _module_kind(args.module)
    frame = ParabolicFrame.standard(n)
    module = CoefficientModule(kind, n)
    rep = Report("cohomology", _config(args, n))
    dims = []
    for k in range(n + 1):
        h = cohomology.cohomology(frame, module, k)
        dims.append({"degree": k, "dim_kernel": h.dim_kernel, "dim_image": h.dim_image,
                     "dim_H": h.dim_H, "weight_tags": h.weight_tags,
                     "harmonic_basis": [np.round(v, 12) for v in h.harmonic_basis]})
    rep.results = {"n": n, "module": kind.value, "degrees": dims}
    rep.check("d_squared_zero", 0 if cohomology.check_d_squared(n, kind) else 1, 0,
              cohomology.check_d_squared(n, kind))
    expected = n if kind is ModuleKind.ADJOINT else 1
    rep.check(f"dim_H{n}", dims[n]["dim_H"], expected, dims[n]["dim_H"] == expected)
    return rep


def cmd_closedness(args) -> Report:
    n = args.n
    if args.group or args.preset:
        n = _load_group(args).n
    if n is None or n < 1 or n > 3:
        raise ConfigError("closedness needs --n in 1..3 (or a group)")
    kind = _module_kind(args.module)
    frame = ParabolicFrame.standard(n)
    module = CoefficientModule(kind, n)
    pts = _random_points(frame, np.eye(n), args.points, args.seed)
    s_grid = [args.s] if args.s is not None else [2 * n + d for d in (-2, -1, 0, 1, 2)]
    if kind is ModuleKind.ADJOINT:
        sl = lie.weight_slices(n)
        initials = [(w, np.eye(module.dim)[sl[w].start]) for w in (-2, 0, 2)]
    else:
        initials = [(0, np.ones(1))]
    rep = Report("closedness", _config(args, n))
    order = args.stencil_order
    expected_gain = 2.0 ** order
    rows = []
    for w, v in initials:
        base = forms.phi(frame, module, v, local=True, allow_mixed=True)
        for s in s_grid:
            form = base.with_s(s)
            c = forms.differential(form)
            coarse = [forms.check_coefficient(form, g, h=args.h, order=order) for g in pts]
            fine = [forms.check_coefficient(form, g, h=args.h / 2, order=order) for g in pts]
            row = {"weight": w, "s": s, "analytic_c": c,
                   "fd_c_mean": float(np.mean([k.fd_coefficient for k in coarse])),
                   "max_relative_error": max(k.relative_error for k in coarse),
                   "max_fd_norm": max(k.fd_norm for k in coarse)}
            if abs(c) < 1e-12:
                # a vanishing differential is tested with the order-4 stencil
                exact = [forms.check_coefficient(form, g, h=args.h, order=4) for g in pts]
                row["max_fd_norm"] = max(k.fd_norm for k in exact)
                rows.append(row)
                rep.check(f"closed(weight={w},s={s:g})", row["max_fd_norm"], 1e-6,
                          row["max_fd_norm"] <= 1e-6)
                continue
            err_h = float(np.mean([k.relative_error for k in coarse]))
            err_h2 = float(np.mean([k.relative_error for k in fine]))
            gain = err_h / err_h2 if err_h2 > 0 else float("inf")
            row["halving_gain"] = gain
            rows.append(row)
            rep.check(f"coefficient(weight={w},s={s:g})", row["max_relative_error"], 1e-4,
                      row["max_relative_error"] <= 1e-4)
            rep.check(f"halving_gain(weight={w},s={s:g})", gain,
                      f"{expected_gain:g} +- 20%", abs(gain / expected_gain - 1) <= 0.2)
    rep.results = {"n": n, "module": kind.value, "h": args.h, "stencil_order": order,
                   "closed_stencil_order": 4, "rows": rows}
    return rep


def cmd_poincare(args) -> Report:
    group = _load_group(args)
    n = group.n
    kind = _module_kind(args.module)
    s = float(args.s) if args.s is not None else _default_s(kind, n)
    words = groups.enumerate_words(group, args.max_word_len)
    est = groups.poincare_series(group, s / 2, words.L, words)
    gate = groups.convergence_gate(group, None, s, estimate=est)
    rep = Report("poincare", _config(args, n))
    rep.results = {"exponent": s / 2, "delta_hat": est.delta_hat, "band": est.band,
                   "completeness_radius": est.completeness_radius, "word_count": words.count,
                   "shells_reached": words.L, "word_budget_hit": not words.complete,
                   "shell_counts": words.shell_counts(), "shell_masses": est.shell_masses,
                   "partial_sums": est.partial_sums, "gate": gate.decision.value,
                   "gate_message": gate.message}
    rep.check("convergence_gate", est.delta_hat + est.band, s / 2, gate.converges)
    if not gate.converges:
        rep.gate_refused = True
    return rep


def _gate_length(L: int) -> int:
    # the Poincare estimate needs a few shells even when the series is shallow
    return min(max(L, 6), 12)


def _gate_or_refuse(rep: Report, group, cusp, s: float, L: int) -> bool:
    gate = groups.convergence_gate(group, cusp, s, L=_gate_length(L))
    rep.results["gate"] = {"decision": gate.decision.value, "message": gate.message,
                           "delta_hat": gate.delta_hat, "band": gate.band}
    rep.check("convergence_gate", gate.delta_hat + gate.band, s / 2, gate.converges)
    if not gate.converges:
        rep.gate_refused = True
    return gate.converges


def _t_threshold(args, s: float) -> float:
    return groups.default_t_threshold(s, args.epsilon)


def cmd_eisenstein(args) -> Report:
    group = _load_group(args)
    n = group.n
    kind = _module_kind(args.module)
    s = float(args.s) if args.s is not None else _default_s(kind, n)
    rep = Report("eisenstein", _config(args, n))
    cusp = _source_cusps(group, args)[args.from_cusp]
    if not _gate_or_refuse(rep, group, cusp, s, args.max_word_len):
        return rep
    module = CoefficientModule(kind, n)
    form = forms.phi(cusp.frame, module, _initial(kind, n), local=True).with_s(s)
    cosets = groups.enumerate_cosets(group, cusp, args.max_word_len, t_threshold=_t_threshold(args, s))
    pts = _random_points(cusp.frame, cusp.lattice, args.points, args.seed)
    evaluate = forms.series_evaluator(form, cosets, nthreads=args.threads)
    with warnings.catch_warnings():
        # contraction is reported as a check below
        warnings.simplefilter("ignore", forms.DivergenceWarning)
        series = forms.eisenstein(form, group, pts, cosets=cosets, nthreads=args.threads)
    incs = series.increments
    full = evaluate(pts)
    values = []
    for q, g in enumerate(pts):
        fd = float(np.linalg.norm(forms.fd_differential(evaluate, g, cusp.frame, module,
                                                        h=args.h, order=4)))
        values.append({"point": q, "value": forms.FormValue.from_hodge(full[q]).flat(),
                       "fd_norm": fd})
        rep.check(f"closed(point={q})", fd, series.tail_estimate + 1e-6,
                  fd <= series.tail_estimate + 1e-6)
    ratios = [incs[i] / incs[i + 1] for i in range(len(incs) - 1) if incs[i + 1] > 0]
    tail_ratios = ratios[-2:] if len(ratios) >= 2 else ratios
    rep.results.update({"s": s, "cusp": cusp.xi, "coset_count": cosets.count,
                        "t_threshold": cosets.t_threshold, "increments": incs,
                        "increment_ratios": ratios, "tail_estimate": series.tail_estimate,
                        "points": values})
    # at s >= 2n+2 the shells must halve; nearer the critical line only contract
    need = 2.0 if s >= 2 * n + 2 else 1.0
    if not any(incs):
        # every coset sits at depth < 2: the sum is finite and exact
        rep.check("cauchy_increment_ratio", "terminated", need, True)
    else:
        rep.check("cauchy_increment_ratio", min(tail_ratios) if tail_ratios else None, need,
                  bool(tail_ratios) and min(tail_ratios) >= need)
    return rep


def cmd_intertwine(args) -> Report:
    group = _load_group(args)
    n = group.n
    kind = _module_kind(args.module)
    s = float(args.s) if args.s is not None else _default_s(kind, n)
    rep = Report("intertwine", _config(args, n))
    cusps = _source_cusps(group, args)
    try:
        ci, cj = cusps[args.from_cusp], cusps[args.to_cusp]
    except IndexError as exc:
        raise ConfigError(f"only {len(cusps)} full-rank cusps were found") from exc
    if not _gate_or_refuse(rep, group, ci, s, args.max_word_len):
        return rep
    m, target = _quadrature(args.quadrature)
    module = CoefficientModule(kind, n)
    res = intertwining.intertwine(group, ci, cj, module, _initial(kind, n), s, m=m,
                                  quad_target=target, L=args.max_word_len,
                                  t_threshold=_t_threshold(args, s), nthreads=args.threads)
    rc = intertwining.restricted_class(res, cj)
    rep.results.update({"intertwine": res.to_json(), "restricted_class": {
        "coordinates": rc.coordinates, "c_minus2_ratio": rc.c_minus2_ratio,
        "coboundary_residual": rc.coboundary_residual, "identity_residuals": rc.identity_residuals,
        "identities_hold": rc.identities_hold, "violation": rc.violation}})
    rep.check("fit_residual", res.fit_residual, intertwining.FIT_RESIDUAL_MAX, res.ok)
    expected = 1.0 if args.from_cusp == args.to_cusp else 0.0
    rep.check("delta_hat", res.delta_coefficient, f"{expected:g} +- 0.02",
              abs(res.delta_coefficient - expected) <= 0.02)
    if kind is ModuleKind.ADJOINT:
        rep.check("coboundary_residual", rc.coboundary_residual, "10 x quadrature", not rc.violation)
    if args.from_cusp == args.to_cusp:
        rep.check("c_minus2_ratio" if kind is ModuleKind.ADJOINT else "c1_ratio",
                  rc.c_minus2_ratio, 0.02, rc.c_minus2_ratio <= 0.02)
    return rep


def cmd_cusp_report(args) -> Report:
    group = _load_group(args)
    n = group.n
    kind = _module_kind(args.module)
    s = float(args.s) if args.s is not None else _default_s(kind, n)
    rep = Report("cusp-report", _config(args, n))
    cusps = _source_cusps(group, args)
    m, _ = _quadrature(args.quadrature)
    try:
        rr = intertwining.independence_report(group, cusps, kind, s, L=args.max_word_len,
                                              t_threshold=_t_threshold(args, s), m=m,
                                              nthreads=args.threads,
                                              gate_L=_gate_length(args.max_word_len))
    except intertwining.GateRefused as exc:
        rep.results["gate"] = {"message": str(exc)}
        rep.check("convergence_gate", None, s / 2, False)
        rep.gate_refused = True
        return rep
    rep.results = rr.to_json()
    dim = n if kind is ModuleKind.ADJOINT else 1
    rep.check("rank", rr.rank, dim * len(cusps), rr.rank == dim * len(cusps))
    rep.check("offdiag_norm", rr.offdiag_norm, 0.02, rr.offdiag_norm <= 0.02)
    rep.check("diag_deviation", rr.diag_deviation, 0.02, rr.diag_deviation <= 0.02)
    rep.check("cusp_bound", rr.cusp_bound, len(cusps), rr.cusp_bound == len(cusps))
    rep.check("complete", "partial" if rr.partial else "complete", "complete", not rr.partial)
    return rep


COMMANDS = {
    "cohomology": cmd_cohomology,
    "closedness": cmd_closedness,
    "poincare": cmd_poincare,
    "eisenstein": cmd_eisenstein,
    "intertwine": cmd_intertwine,
    "cusp-report": cmd_cusp_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cusplab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cusplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--group", type=Path, help="group definition (JSON)")
        c.add_argument("--preset", help=f"built-in group ({', '.join(groups.preset_names())})")
        c.add_argument("--module", choices=["trivial", "adjoint"], default="adjoint")
        c.add_argument("--s", type=float, help="exponent (default 2n+2 adjoint, 2n trivial)")
        c.add_argument("--max-word-len", type=int, default=12, help="word / coset depth L")
        c.add_argument("--epsilon", type=float, default=1e-9,
                       help="cosets whose single-term weight t^s falls below this are not expanded")
        c.add_argument("--quadrature", help="torus quadrature M[:TARGET], M a power of two")
        c.add_argument("--out", type=Path, help="write the report here instead of stdout")
        c.add_argument("--format", choices=["json", "csv", "text"], default="json")
        c.add_argument("--threads", type=int, default=1)
        c.add_argument("--no-timing", action="store_true",
                       help="omit the wall-clock field (byte-stable reports)")
        if name in ("cohomology", "closedness"):
            c.add_argument("--n", type=int, default=None)
        if name in ("closedness", "eisenstein"):
            c.add_argument("--seed", type=int, default=0)
            c.add_argument("--points", type=int, default=10 if name == "closedness" else 5)
            c.add_argument("--h", type=float, default=1e-3, help="finite-difference step")
        if name == "closedness":
            c.add_argument("--stencil-order", type=int, choices=[2, 4], default=2)
        if name in ("eisenstein", "intertwine", "cusp-report"):
            c.add_argument("--cusp-word-len", type=int, default=5,
                           help="word length for the cusp search")
        if name in ("eisenstein", "intertwine"):
            c.add_argument("--from-cusp", type=int, default=0, help="index of the source cusp")
        if name == "intertwine":
            c.add_argument("--to-cusp", type=int, default=0, help="index of the target cusp")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be positive")
    if args.max_word_len < 1:
        parser.error("--max-word-len must be positive")
    if not 0 < args.epsilon < 1:
        parser.error("--epsilon must lie in (0, 1)")
    start = time.perf_counter()
    try:
        report = COMMANDS[args.command](args)
    except (ConfigError, groups.GroupError) as exc:
        print(f"cusplab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except intertwining.GateRefused as exc:
        print(f"cusplab: {exc}", file=sys.stderr)
        return EXIT_GATE
    if not args.no_timing:
        report.wall_clock = time.perf_counter() - start
    text = render(report, args.format)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return report.exit_code()


if __name__ == "__main__":
    sys.exit(main())
