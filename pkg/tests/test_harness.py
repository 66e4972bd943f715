import json
import math

import numpy as np
import pytest

from dkfnet.harness import (ConfigError, Workload, parse_config, run_bounds_report,
                            run_min_pbeta_sweep, run_mse_experiment, run_pushsum)
from dkfnet.harness import experiments
from dkfnet.harness.cli import main
from dkfnet.harness.config import build_plant, resolve_delta, build_topology


def small(**kw):
    base = {"trials": 30, "horizon": 200, "p_beta": [1.0, 0.7], "gamma": [1, 2, 4, 8, 16], "seed": 2}
    base.update(kw)
    return parse_config(base)


def test_paper5_preset():
    cfg = parse_config("paper5")
    plant = build_plant(cfg)
    assert (cfg.trials, cfg.horizon, cfg.n_nodes) == (300, 450, 10)
    assert cfg.plant["tau"] == 0.25 and cfg.plant["sigma"] == 0.05 and cfg.plant["sigma_g"] == 0.1
    assert plant.R[4][0, 0] == pytest.approx(0.01)
    assert cfg.delta == "auto" and resolve_delta(cfg, build_topology(cfg)) == 4.5


@pytest.mark.parametrize("field,value", [("trials", 0), ("horizon", 9), ("burn_in", 1.0), ("mode", "fast"),
                                         ("p_beta", [0.0]), ("gamma", [-1]), ("delta", -2), ("trials", 2.5)])
def test_validation_errors_name_field(tmp_path, field, value):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"preset": "paper5", field: value}, indent=1))
    with pytest.raises(ConfigError) as exc:
        parse_config(path)
    assert exc.value.field == field and exc.value.line is not None


def test_unknown_field_and_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "trials": 3,\n  "horizn": 50\n}')
    with pytest.raises(ConfigError) as exc:
        parse_config(p)
    assert exc.value.field == "horizn" and exc.value.line == 3
    p.write_text('{"trials": 3,,}')
    with pytest.raises(ConfigError):
        parse_config(p)


def test_custom_plant_matrices(tmp_path):
    edges = tmp_path / "g.txt"
    edges.write_text("3 2\n0 1\n1 2\n")
    cfg = parse_config({"n_nodes": 3, "graph": str(edges), "trials": 5, "horizon": 20, "p_beta": [1.0],
                        "gamma": [2], "plant": {"A": [[0.9]], "Q": [[1.0]], "C": [[[1.0]], [], [[1.0]]],
                                                "R": [[[1.0]], [], [[2.0]]]}})
    table = run_mse_experiment(cfg)
    assert table.rows[0].diverged_fraction == 0 and table.rows[0].mse_mean > 0


def test_mse_csv_deterministic(tmp_path):
    cfg = small(gamma=[1, 8], p_beta=[0.7])
    a = run_mse_experiment(cfg, tmp_path / "a").to_csv()
    run_mse_experiment(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "mse.csv").read_bytes() == (tmp_path / "b" / "mse.csv").read_bytes()
    lines = a.splitlines()
    assert lines[0].startswith("# mse schema_version=")
    assert lines[1] == "p_beta,gamma,mse_mean,mse_stderr,diverged_fraction,ckf_mse"


def test_mse_trends():
    cfg = small()
    table = run_mse_experiment(cfg)
    assert len({r.ckf_mse for r in table.rows}) == 1
    for p in (1.0, 0.7):
        rows = [table.lookup(p, g) for g in cfg.gamma]
        finite = [r for r in rows if not math.isnan(r.mse_mean)]
        for a, b in zip(finite, finite[1:]):
            assert b.mse_mean <= a.mse_mean + 2 * (a.mse_stderr + b.mse_stderr)
    assert table.lookup(1.0, 8).mse_mean < 1.1 * table.lookup(1.0, 8).ckf_mse
    assert table.lookup(0.7, 1).diverged_fraction > 0.5
    assert math.isnan(table.lookup(0.7, 1).mse_mean)


def test_ckf_depends_on_seed_only():
    a = Workload(small(seed=1, trials=5)).ckf_mse
    assert a == Workload(small(seed=1, trials=5, p_beta=[0.5], gamma=[3])).ckf_mse
    assert a != Workload(small(seed=2, trials=5)).ckf_mse


def test_live_mode_runs():
    cfg = small(mode="live", trials=2, horizon=60, p_beta=[0.9], gamma=[6])
    row = run_mse_experiment(cfg).rows[0]
    assert row.diverged_fraction == 0 and np.isfinite(row.mse_mean)


def test_bounds_report(tmp_path):
    cfg = small(p_beta=[1.0, 0.7])
    reps = run_bounds_report(cfg, tmp_path, p_d_trials=5000)
    assert reps[0].theta_pd == pytest.approx(reps[0].theta_pbeta ** 2)
    assert reps[1].gamma_min_mean is not None
    assert reps[1].closed_form_implies_AR
    text = (tmp_path / "bounds.csv").read_text().splitlines()
    assert text[1].split(",")[:2] == ["p_beta", "p_d"] and len(text) == 4


def test_bounds_report_error_row(tmp_path, monkeypatch):
    from dkfnet.analysis import AnalysisError

    def boom(*a, **k):
        raise AnalysisError("Lyapunov rate 1.2 >= 1")
    monkeypatch.setattr(experiments, "bounds_report", boom)
    reps = run_bounds_report(small(p_beta=[0.7]), tmp_path)
    assert isinstance(reps[0], AnalysisError)
    assert "Lyapunov" in (tmp_path / "bounds.csv").read_text()


def test_min_pbeta_sweep(tmp_path):
    cfg = small(gamma=[2, 16], trials=20)
    res = run_min_pbeta_sweep(cfg, 0.10, out_dir=tmp_path)
    assert res[2] is None
    assert res[16] is not None and res[16] < 0.7
    loose = run_min_pbeta_sweep(small(gamma=[16], trials=20), math.inf)
    assert loose[16] <= res[16]
    assert "min_p_beta" in (tmp_path / "sweep.csv").read_text()


def test_pushsum_command():
    rows = run_pushsum(small(p_beta=[0.7]), trials=5)
    assert rows[0]["all_stopped"] and rows[0]["G_relerr_p95"] < 1e-3


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"trials": 4, "horizon": 30, "p_beta": [1.0], "gamma": [4]}))
    assert main(["mse", "--config", str(good), "--out", str(tmp_path / "o"), "--seed", "5"]) == 0
    assert "schema_version" in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    bad.write_text('{"trials": 0}')
    assert main(["mse", "--config", str(bad)]) == 2
    assert main(["mse", "--config", str(tmp_path / "missing.json")]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({"trials": 2, "horizon": 20, "n_nodes": 1, "graph": str(tmp_path / "g1.txt"),
                                  "plant": {"A": [[1.0, 0.0], [0.0, 1.0]], "Q": [[1.0, 0.0], [0.0, 1.0]],
                                            "C": [[[1.0, 0.0]]], "R": [[[1.0]]]}}))
    (tmp_path / "g1.txt").write_text("1 0\n")
    assert main(["mse", "--config", str(broken), "--out", str(tmp_path / "o2")]) == 3
    assert "runtime error" in capsys.readouterr().err
    assert main(["bounds", "--config", str(good), "--out", str(tmp_path / "o")]) == 0
    assert main(["sweep", "--config", str(good), "--tol", "-1"]) == 2
