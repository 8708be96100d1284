import csv
import json

import pytest

from twolayer_ebm.cli import main, parse_config
from twolayer_ebm.errors import ConfigError


def run(tmp_path, cmd, toml=None, name="out", extra=()):
    argv = [cmd, "--out", str(tmp_path / name), *extra]
    if toml is not None:
        cfg = tmp_path / f"{name}.toml"
        cfg.write_text(toml)
        argv += ["--config", str(cfg)]
    return main(argv), tmp_path / name


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate_default(tmp_path):
    code, out = run(tmp_path, "simulate")
    assert code == 0
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["verdict"] == "Converged"
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["files"]) == {"trajectory.csv", "verdict.json", "manifest.json"}
    assert man["subcommand"] == "simulate" and len(man["config_sha256"]) == 64
    rows = read_csv(out / "trajectory.csv")
    assert list(rows[0]) == ["t_seconds", "T_a", "T_s"]
    assert float(rows[0]["T_a"]) == 250.0


def test_simulate_blowup_exit_code(tmp_path):
    code, out = run(tmp_path, "simulate", "epsilon_a = 3.0\n")
    assert code == 3
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["verdict"] == "BlowUp"
    assert verdict["certificate"]["valid"] is True


@pytest.mark.parametrize("toml,needle", [
    ("epsilon_a = 0.62\nfoo = 1\n", "foo"),
    ("[integrator]\nrel_tol = -1.0\n", "rel_tol"),
    ("[coalbedo_s]\nbeta_minus = 0.3\nbeta_pluss = 0.7\n", "beta_pluss"),
    ("lambda = \"big\"\n", "lambda"),
    ("[simulate]\ninitial = [1.0]\n", "initial"),
    ("epsilon_a = \n", "out.toml"),
    ("lambda = -1.0\n", "lam"),
])
def test_config_errors(tmp_path, capsys, toml, needle):
    code, out = run(tmp_path, "simulate", toml)
    assert code == 2
    assert needle in capsys.readouterr().err
    assert not (out / "trajectory.csv").exists()


def test_bad_sweep_range_is_config_error(tmp_path):
    code, _ = run(tmp_path, "sweep", "[sweep]\nn_steps = 1\n")
    assert code == 2


def test_missing_config_is_io_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.toml"),
                 "--out", str(tmp_path / "o")]) == 4


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["equilibria", "--out", str(blocker)]) == 4


def test_equilibria_json(tmp_path):
    code, out = run(tmp_path, "equilibria")
    assert code == 0
    data = json.loads((out / "equilibria.json").read_text())
    assert data["count"] == 3
    assert [e["verdict"] for e in data["equilibria"]] == [
        "AsymptoticallyStable", "Unstable", "AsymptoticallyStable"]
    ts = [e["T_s"] for e in data["equilibria"]]
    assert ts == sorted(ts)
    assert (out / "phi_curve.csv").exists()


def test_convexity_bracket(tmp_path):
    code, out = run(tmp_path, "convexity", "[convexity]\ntol = 1e-4\n")
    assert code == 0
    lo, hi = json.loads((out / "convexity.json").read_text())["epsilon_a0_bracket"]
    assert 1.99 < lo < hi < 1.991


def test_sweep_warm_branch_increasing(tmp_path):
    code, out = run(tmp_path, "sweep", "[sweep]\nparam = \"epsilon_a\"\nlo = 0.3\nhi = 1.9\n")
    assert code == 0
    rows = [r for r in read_csv(out / "sweep.csv") if r["class"] == "Warm"]
    ts = [float(r["T_s"]) for r in rows]
    assert len(ts) > 50 and all(b > a for a, b in zip(ts, ts[1:]))
    assert all(float(r["dTs_dparam"]) > 0 for r in rows)


def test_regime_error_writes_manifest_only(tmp_path):
    code, out = run(tmp_path, "blowup")
    assert code == 5
    man = json.loads((out / "manifest.json").read_text())
    assert man["files"] == ["manifest.json"]
    assert "EpsilonNotSupercritical" in man["summary"]


def test_jump_and_hysteresis(tmp_path):
    code, out = run(tmp_path, "jump", "lambda = 1.0\n", name="j")
    assert code == 0
    data = json.loads((out / "jump.json").read_text())
    assert data["rate_identity_error"] < 1e-12
    assert data["new_warm"]["T_s"] > data["old_warm"]["T_s"]
    code, out = run(tmp_path, "hysteresis", name="h")
    assert code == 0
    assert len(json.loads((out / "hysteresis.json").read_text())["jumps"]) == 2


def test_basins_outputs(tmp_path):
    code, out = run(tmp_path, "basins", "[basins]\nn = 24\nm = 20\n", extra=["--threads", "2"])
    assert code == 0
    lines = (out / "basin_map.csv").read_text().splitlines()
    assert len(lines) == 20 and len(lines[0].split(",")) == 24
    legend = json.loads((out / "basin_legend.json").read_text())
    assert set(legend["attractors"]) == {"0", "1", "2"}
    sep = read_csv(out / "separatrix.csv")
    assert list(sep[0]) == ["T_a", "T_s"] and len(sep) == 400


def test_determinism(tmp_path):
    toml = "lambda = 2.0\n[sweep]\nparam = \"lambda\"\nlo = 0.0\nhi = 20.0\nn_steps = 20\n"
    _, a = run(tmp_path, "sweep", toml, name="a")
    _, b = run(tmp_path, "sweep", toml, name="b")
    for f in ("sweep.csv", "sweep_events.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["config_sha256"] == mb["config_sha256"]


def test_csv_round_trips_floats(tmp_path):
    _, out = run(tmp_path, "equilibria")
    data = json.loads((out / "equilibria.json").read_text())
    _, out2 = run(tmp_path, "sweep", "[sweep]\nlo = 0.62\nhi = 0.7\nn_steps = 2\n", name="s")
    first = read_csv(out2 / "sweep.csv")[0]
    assert float(first["T_s"]) == data["equilibria"][0]["T_s"]


def test_parse_config_defaults_and_hash():
    a = parse_config({})
    b = parse_config({"lambda": 0.0})
    assert a.digest == b.digest
    assert parse_config({"lambda": 1.0}).digest != a.digest
    with pytest.raises(ConfigError):
        parse_config({"integrator": {"max_steps": "many"}})
