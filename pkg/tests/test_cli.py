import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from cusplab import __version__, cli, forms, groups, lie
from cusplab.lie import CoefficientModule, ModuleKind


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, *argv):
    code, out, _ = run(capsys, *argv, "--no-timing")
    return code, json.loads(out)


@pytest.mark.parametrize("n,module,expected", [(2, "adjoint", 2), (1, "trivial", 1), (3, "adjoint", 3)])
def test_cohomology_dimensions(capsys, n, module, expected):
    code, rep = run_json(capsys, "cohomology", "--n", str(n), "--module", module)
    assert code == 0
    assert rep["results"]["degrees"][n]["dim_H"] == expected


@pytest.mark.parametrize("module", ["adjoint", "trivial"])
def test_closedness_sweep(capsys, module):
    code, rep = run_json(capsys, "closedness", "--n", "1", "--module", module, "--points", "3")
    assert code == 0 and rep["all_pass"]
    rows = {(r["weight"], r["s"]): r for r in rep["results"]["rows"]}
    if module == "adjoint":
        assert rows[(-2, 4)]["analytic_c"] == 0
        assert rows[(2, 2)]["analytic_c"] == 2
    else:
        assert rows[(0, 2)]["analytic_c"] == 0


def test_poincare_on_cyclic_parabolic(capsys):
    code, rep = run_json(capsys, "poincare", "--preset", "cyclic-parabolic", "--max-word-len", "120")
    assert code == 0
    assert rep["results"]["delta_hat"] == pytest.approx(0.5, abs=0.05)


def test_poincare_refuses_at_critical_exponent(capsys):
    code, rep = run_json(capsys, "poincare", "--preset", "theta", "--module", "trivial")
    assert code == cli.EXIT_GATE
    assert rep["results"]["gate"] == "unknown"


def test_eisenstein_single_coset_is_phi(capsys):
    code, rep = run_json(capsys, "eisenstein", "--preset", "cyclic-parabolic", "--points", "2")
    assert code == 0
    assert rep["results"]["coset_count"] == 1
    (cusp,) = groups.detect_cusps(groups.preset("cyclic-parabolic"), 5).cusps
    form = forms.phi(cusp.frame, CoefficientModule(ModuleKind.ADJOINT, 1), np.eye(3)[0], local=True).with_s(4)
    pts = cli._random_points(cusp.frame, cusp.lattice, 2, 0)
    for p, g in zip(rep["results"]["points"], pts):
        assert np.array_equal(np.array(p["value"]), form(g).flat())


def test_eisenstein_gate_refusal_exit_code(capsys):
    code, rep = run_json(capsys, "eisenstein", "--preset", "theta", "--module", "trivial",
                         "--max-word-len", "8")
    assert code == cli.EXIT_GATE and rep["all_pass"] is False


def test_intertwine_and_cusp_report_on_hecke(capsys):
    code, rep = run_json(capsys, "intertwine", "--preset", "hecke-3", "--max-word-len", "8")
    assert code == 0
    assert rep["results"]["intertwine"]["delta_coefficient"] == pytest.approx(1.0, abs=0.02)
    code, rep = run_json(capsys, "cusp-report", "--preset", "hecke-3", "--max-word-len", "8")
    assert code == 0
    assert rep["results"]["cusp_bound"] == 1


def test_intertwine_rejects_missing_cusp_index(capsys):
    code, _, err = run(capsys, "intertwine", "--preset", "hecke-3", "--to-cusp", "3", "--max-word-len", "6")
    assert code == cli.EXIT_CONFIG and "full-rank cusps" in err


@pytest.mark.parametrize("argv", [
    ["poincare"],
    ["poincare", "--preset", "hecke-3", "--group", "x.json"],
    ["poincare", "--preset", "no-such-group"],
    ["intertwine", "--preset", "hecke-3", "--quadrature", "12"],
    ["cohomology", "--n", "7"],
    ["eisenstein", "--preset", "schottky"],
])
def test_config_errors_exit_with_code_4(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == cli.EXIT_CONFIG
    assert "configuration error" in err


@pytest.mark.parametrize("argv", [["poincare", "--threads", "0"], ["bogus"], ["poincare", "--format", "xml"]])
def test_argument_errors_exit_with_code_4(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == cli.EXIT_CONFIG


def test_numeric_failure_exit_code():
    rep = cli.Report("x", {})
    rep.check("c", 1.0, 0.5, False)
    assert rep.exit_code() == cli.EXIT_FAIL


def test_group_file_and_preset_dir(capsys, tmp_path, monkeypatch):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(groups.preset("z2-parabolic").to_json()))
    code, rep = run_json(capsys, "poincare", "--group", str(path), "--max-word-len", "20")
    assert code == 0 and rep["config"]["group"] == str(path)
    monkeypatch.setenv(groups.PRESET_ENV, str(tmp_path))
    code, rep2 = run_json(capsys, "poincare", "--preset", "g", "--max-word-len", "20")
    assert rep2["results"]["delta_hat"] == rep["results"]["delta_hat"]


def test_report_formats(capsys, tmp_path):
    code, out, _ = run(capsys, "cohomology", "--n", "1", "--format", "csv")
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["criterion", "value", "tolerance", "pass"]
    assert {r[0] for r in rows[1:]} == {"d_squared_zero", "dim_H1"}
    assert all(r[3] == "true" for r in rows[1:])
    code, out, _ = run(capsys, "cohomology", "--n", "1", "--format", "text")
    assert out.startswith(f"cusplab {__version__}  cohomology  config ")
    assert "[PASS] dim_H1" in out and "wall clock" in out
    target = tmp_path / "r.json"
    code, out, _ = run(capsys, "cohomology", "--n", "1", "--out", str(target))
    assert out == "" and json.loads(target.read_text())["command"] == "cohomology"


def test_reports_embed_version_and_config_hash(capsys):
    _, a = run_json(capsys, "cohomology", "--n", "2")
    _, b = run_json(capsys, "cohomology", "--n", "2", "--module", "trivial")
    assert a["version"] == __version__
    assert a["config_hash"] == cli.config_hash(a["config"])
    assert a["config_hash"] != b["config_hash"]
    for c in a["checks"]:
        assert set(c) == {"criterion", "value", "tolerance", "pass"}


@pytest.mark.parametrize("argv", [
    ["closedness", "--n", "2", "--points", "2"],
    ["poincare", "--preset", "hecke-3", "--max-word-len", "8"],
    ["eisenstein", "--preset", "hecke-3", "--max-word-len", "8", "--points", "2"],
])
def test_reports_are_identical_across_thread_counts(capsys, argv):
    outs = []
    for threads in ("1", "8"):
        cli.main(argv + ["--threads", threads, "--no-timing"])
        outs.append(capsys.readouterr().out)
    # the thread count is not part of the config, so the whole report must match
    assert outs[0] == outs[1]


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "cusplab.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
