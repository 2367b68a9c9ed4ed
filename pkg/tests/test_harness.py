import json

import numpy as np
import pytest

from orthantmc import expr as ex
from orthantmc.cli import main as cli_main
from orthantmc.config import Budgets, load_config
from orthantmc.errors import ConfigParseError, ConfigValidationError
from orthantmc.harness import (
    EXIT_CHECK_FAILURE,
    EXIT_INPUT_ERROR,
    EXIT_PASS,
    convergence_study,
    make_manufactured_problem,
    run,
)
from orthantmc.model import ModelParams, validate


MINIMAL_TOML = """
mode = "naive"
seed = 3

[model]
d = 2
m = 2
mu = [0.0, 0.0]
sigma = [[1.0, 0.0], [0.0, 1.0]]
rho = 0.3
c = [0.0, 0.0]
T = 1.0

[problem]
f = ["0", "0"]
g = "1"

[[query_points]]
t = 0.25
x = [0.5, 0.5]
"""


def write_cfg(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_config_minimal(tmp_path):
    cfg = load_config(write_cfg(tmp_path, MINIMAL_TOML))
    assert cfg.mode == "naive"
    assert cfg.seed == 3
    assert cfg.params.d == 2
    assert cfg.query_points == [(0.25, [0.5, 0.5])]
    assert cfg.budgets == Budgets()


def test_load_config_json(tmp_path):
    data = {
        "mode": "naive", "seed": 1,
        "model": {"d": 2, "m": 2, "mu": [0, 0],
                  "sigma": [[1, 0], [0, 1]], "rho": 0.0, "c": [0, 0], "T": 1.0},
        "problem": {"f": ["0", "0"], "g": "1"},
        "query_points": [{"t": 0.0, "x": [1.0, 1.0]}],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    cfg = load_config(path)
    assert cfg.g_source == "1"


def test_load_config_rejects_unknown_key(tmp_path):
    bad = MINIMAL_TOML + "\nfoo = 1\n"
    with pytest.raises(ConfigParseError, match="foo"):
        load_config(write_cfg(tmp_path, bad))


def test_load_config_rejects_bad_sigma(tmp_path):
    bad = MINIMAL_TOML.replace(
        "sigma = [[1.0, 0.0], [0.0, 1.0]]", "sigma = [[1.0, 0.0]]"
    )
    with pytest.raises(ConfigValidationError) as err:
        load_config(write_cfg(tmp_path, bad))
    assert "sigma" in err.value.field


def test_load_config_rejects_query_outside_domain(tmp_path):
    bad = MINIMAL_TOML.replace("x = [0.5, 0.5]", "x = [-0.5, 0.5]")
    with pytest.raises(ConfigValidationError, match="orthant"):
        load_config(write_cfg(tmp_path, bad))
    bad = MINIMAL_TOML.replace("t = 0.25", "t = 1.0")
    with pytest.raises(ConfigValidationError):
        load_config(write_cfg(tmp_path, bad))


def test_load_config_requires_problem_data(tmp_path):
    bad = MINIMAL_TOML.replace('f = ["0", "0"]\ng = "1"', 'label = "empty"')
    with pytest.raises(ConfigValidationError, match="manufactured_a"):
        load_config(write_cfg(tmp_path, bad))


def test_load_config_missing_file():
    with pytest.raises(ConfigParseError):
        load_config("/nonexistent/nowhere.toml")


def diag_params(rho=0.1, c=(-0.3, 0.2), mu=(0.2, -0.1), corr=0.0):
    cov = np.array([[1.0, corr], [corr, 1.0]])
    return validate(ModelParams(
        d=2, m=2, mu=np.asarray(mu, dtype=float),
        sigma=np.linalg.cholesky(cov), rho=rho,
        c=np.asarray(c, dtype=float), T=1.0,
    ))


def test_manufactured_theta_value():
    # a = (1, 1), corr = 0.5: theta = a.Q.a/2 + mu.a - rho = 1.5 + 0 - 0 = 1.5
    params = diag_params(rho=0.0, c=(-0.5, -0.5), mu=(0.0, 0.0), corr=0.5)
    spec, u = make_manufactured_problem(params, np.array([1.0, 1.0]))
    val = ex.evaluate(u, {"t": 0.0, "x1": 0.0, "x2": 0.0})
    assert val == pytest.approx(np.exp(1.5), rel=1e-12)


def test_manufactured_homogeneous_when_c_equals_minus_a():
    # f_i carries the factor (a_i + c_i); c = -a makes the boundary data 0
    params = diag_params(rho=0.2, c=(-0.7, -0.4))
    spec, _ = make_manufactured_problem(params, np.array([0.7, 0.4]))
    for i in range(2):
        vals = ex.evaluate(spec.f[i], {"t": 0.3, f"x{2 - i}": 1.1})
        assert float(vals) == pytest.approx(0.0, abs=1e-15)


def test_manufactured_constant_when_a_zero():
    # a = 0: u = exp(-rho (T - t)), independent of x
    params = diag_params(rho=0.4, c=(-0.3, 0.1))
    spec, u = make_manufactured_problem(params, np.zeros(2))
    assert ex.evaluate(u, {"t": 0.0, "x1": 3.0, "x2": 5.0}) == pytest.approx(
        np.exp(-0.4), rel=1e-12
    )


def run_cfg(tmp_path, text, out_name="out"):
    cfg = load_config(write_cfg(tmp_path, text))
    out = tmp_path / out_name
    code, report = run(cfg, out_dir=out)
    return code, report, out


def test_run_naive_mode_outputs(tmp_path):
    fast = MINIMAL_TOML + "\n[budgets]\nn_paths = 500\ndt = 0.01\n"
    code, report, out = run_cfg(tmp_path, fast)
    assert code == EXIT_PASS
    assert (out / "results.csv").exists()
    assert (out / "report.json").exists()
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header == "t,x1,x2,estimator,value,std_error,n_paths,dt,seed,wall_time"
    persisted = json.loads((out / "report.json").read_text())
    assert persisted["exit_code"] == EXIT_PASS
    assert persisted["results"][0]["estimator"] == "naive"
    # pure killing: the value is exactly exp(-0.3 * 0.75)
    assert persisted["results"][0]["value"] == pytest.approx(
        np.exp(-0.3 * 0.75), rel=1e-12
    )


MANUFACTURED_TOML = """
mode = "both"
seed = 11

[model]
d = 2
m = 2
mu = [0.0, 0.0]
sigma = [[1.0, 0.0], [0.0, 1.0]]
rho = 0.1
c = [-0.4, -0.2]
T = 1.0

[problem]
manufactured_a = [0.5, 0.3]

[[query_points]]
t = 0.5
x = [0.5, 0.5]

[budgets]
n_paths = 20000
dt = 0.002
"""


def test_run_both_mode_checks_pass(tmp_path):
    code, report, out = run_cfg(tmp_path, MANUFACTURED_TOML)
    assert code == EXIT_PASS
    names = {c["check"] for c in report["checks"]}
    assert "naive_vs_decomposed" in names
    assert "naive_vs_closed_form" in names
    assert "decomposed_vs_closed_form" in names
    assert all(c["pass"] for c in report["checks"])
    body = (out / "results.csv").read_text().splitlines()
    assert len(body) == 3  # header + naive + decomposed


def test_run_selftest_mode(tmp_path):
    text = MINIMAL_TOML.replace('mode = "naive"', 'mode = "selftest"')
    code, report, _ = run_cfg(tmp_path, text)
    assert code == EXIT_PASS
    assert len(report["checks"]) >= 5


def test_run_fd_compare_mode(tmp_path):
    text = MANUFACTURED_TOML.replace('mode = "both"', 'mode = "fd_compare"')
    text += "\n[fd]\nn_x = 48\ndt_fd = 0.004\n"
    code, report, _ = run_cfg(tmp_path, text)
    assert code == EXIT_PASS
    fd_checks = [c for c in report["checks"] if c["check"] == "fd_compare"]
    assert fd_checks and fd_checks[0]["pass"]


def test_run_reports_numerical_failure(tmp_path):
    # large c > 0: exp(c L) overflows on this window, flagged up front
    text = MINIMAL_TOML.replace("c = [0.0, 0.0]", "c = [50.0, 0.0]")
    code, report, _ = run_cfg(tmp_path, text)
    assert code == 3
    assert report["errors"]


def test_convergence_study_slope(tmp_path):
    text = MINIMAL_TOML.replace('f = ["0", "0"]', 'f = ["1", "exp(0 - x1)"]')
    text += "\n[budgets]\ndt = 0.01\n"
    cfg = load_config(write_cfg(tmp_path, text))
    report = convergence_study(cfg, [2000, 8000, 32000])
    assert report["pass"]
    assert -0.6 <= report["slope"] <= -0.4
    single = convergence_study(cfg, [2000])
    assert single["slope"] is None
    assert "warning" in single


def test_convergence_study_rejects_unsorted(tmp_path):
    cfg = load_config(write_cfg(tmp_path, MINIMAL_TOML))
    with pytest.raises(ValueError):
        convergence_study(cfg, [8000, 2000])


def test_cli_roundtrip(tmp_path, capsys):
    path = write_cfg(tmp_path, MINIMAL_TOML)
    out = tmp_path / "cli_out"
    code = cli_main(["--config", str(path), "--paths", "500",
                     "--dt", "0.01", "--seed", "5", "--out", str(out)])
    assert code == EXIT_PASS
    summary = json.loads(capsys.readouterr().out)
    assert summary["exit_code"] == 0
    assert summary["mode"] == "naive"
    assert (out / "results.csv").exists()
    row = (out / "results.csv").read_text().splitlines()[1]
    assert row.split(",")[8] == "5"  # the seed override lands in the CSV


def test_cli_input_error_exit_code(tmp_path, capsys):
    bad = write_cfg(tmp_path, MINIMAL_TOML + "\nfoo = 1\n")
    assert cli_main(["--config", str(bad)]) == EXIT_INPUT_ERROR
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigParseError"
    assert cli_main(["--config", "/nonexistent.toml"]) == EXIT_INPUT_ERROR
    capsys.readouterr()


def test_cli_rejects_bad_overrides(tmp_path, capsys):
    path = write_cfg(tmp_path, MINIMAL_TOML)
    assert cli_main(["--config", str(path), "--paths", "-5"]) == EXIT_INPUT_ERROR
    assert cli_main(["--config", str(path), "--dt", "-0.1"]) == EXIT_INPUT_ERROR
    assert cli_main(["--config", str(path), "--seed", "-1"]) == EXIT_INPUT_ERROR
    capsys.readouterr()
