import json

import pytest

from reebflow.cli import main
from reebflow.config import ExperimentConfig, load_config
from reebflow.errors import ConfigError
from reebflow.harness import Report, test_function, write_report


def test_config_invariants():
    with pytest.raises(ConfigError):
        ExperimentConfig(eps_ladder=[0.1, 0.2])
    with pytest.raises(ConfigError):
        ExperimentConfig(tau=1.0, t_end=1.0)
    with pytest.raises(ConfigError):
        ExperimentConfig(thresholds={"made_up": 1})
    cfg = ExperimentConfig(tau=0.25, t_end=1.0, n_times=4)
    assert cfg.t_grid == [0.25, 0.5, 0.75, 1.0]


def test_load_toml_and_overrides(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('hamiltonian = "radial"\nhamiltonian_params = {}\nz_max = 5.0\n[thresholds]\nse_mult = 4.0\n')
    cfg = load_config(p, seed=7)
    assert cfg.hamiltonian == "radial" and cfg.seed == 7 and cfg.thr("se_mult") == 4.0
    assert cfg.thr("quad_budget") == 1e-3
    bad = tmp_path / "c.yaml"
    bad.write_text("x: 1")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(p, nonsense=1)


def test_unknown_test_function():
    with pytest.raises(ConfigError):
        test_function("nope", None)


def test_report_files_are_deterministic(tmp_path):
    rep = Report("demo", [{"a": 1.0, "b": 2}], {"passed": True})
    a = write_report(rep, tmp_path / "a", ExperimentConfig())
    b = write_report(rep, tmp_path / "b", ExperimentConfig())
    for k in a:
        assert open(a[k]).read() == open(b[k]).read()


def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["coeffs", "--no-such-flag"])
    assert e.value.code == 2
    assert main(["coeffs", "--eps", "0.1,0.2"]) == 2


def test_cli_reeb_json(tmp_path, capsys):
    out = tmp_path / "g.json"
    assert main(["reeb", "--hamiltonian", "twowell", "--z-max", "8", "--json", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["n_edges"] == 3 and d["saddles"] == 1


def test_cli_coeffs_radial(tmp_path, capsys):
    code = main(["coeffs", "--hamiltonian", "radial", "--z-max", "6", "--output-dir", str(tmp_path)])
    summary = json.loads(capsys.readouterr().out)
    assert code == 0 and summary["passed"]
    assert (tmp_path / "coefficients.csv").exists()
    first = (tmp_path / "coefficients.csv").read_bytes()
    main(["coeffs", "--hamiltonian", "radial", "--z-max", "6", "--output-dir", str(tmp_path)])
    assert (tmp_path / "coefficients.csv").read_bytes() == first


def test_cli_simulate(tmp_path, capsys):
    code = main(["simulate", "--hamiltonian", "radial", "--z-max", "6", "--x0", "1,0", "--t", "0.5",
                 "--u", "H", "--eps", "0.05", "--n-paths", "2000", "--paths-csv", str(tmp_path / "p.csv")])
    rec = json.loads(capsys.readouterr().out)
    assert code == 0
    assert abs(rec["mean"][0] - 1.0) < 5 * rec["se"][0]
    assert (tmp_path / "p.csv").exists()
