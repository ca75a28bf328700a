import json
import subprocess
import sys

import numpy as np
import pytest

from dseg.bench import ExperimentConfig, GridSpec, SolverSpec, run_bench, write_bench
from dseg.cli import main
from dseg.games import QuadraticGame
from dseg.solvers import ConfigError


def tiny(**kw):
    base = dict(n=3, d=3, alpha=0.9, mu=0.01, reg_l1=0.02, noise_std=1.0, games=2, seeds=[0, 1],
                k_max=300, checkpoints=4, grid={"min": 1e-3, "max": 1.0, "count": 3},
                solvers=[{"method": "eg", "sampler": "full"},
                         {"method": "dseg", "sampler": "uniform:1", "vr": True}])
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_bench_directories_are_byte_identical(tmp_path):
    cfg = tiny()
    write_bench(run_bench(cfg), tmp_path / "a")
    write_bench(run_bench(cfg), tmp_path / "b")
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert a == b
    assert {"config.json", "grid.csv", "summary.json", "records.jsonl", "warnings.txt",
            "traces/eg.csv", "traces/dseg-uniform1-vr.csv"} <= set(a)


def test_bench_parallel_matches_serial(tmp_path):
    cfg = tiny()
    write_bench(run_bench(cfg, jobs=1), tmp_path / "a")
    write_bench(run_bench(cfg, jobs=2), tmp_path / "b")
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_single_gamma_single_seed():
    cfg = tiny(seeds=[0], games=1, grid={"min": 0.05, "max": 0.05, "count": 1},
               solvers=[{"method": "dseg", "sampler": "uniform:1"}])
    res = run_bench(cfg)
    r = res.solvers["dseg-uniform1"]
    assert r.best_gamma == 0.05 and not r.boundary and len(res.records) == 1
    assert r.final_err == pytest.approx(res.records[0].final_err)


def test_boundary_warning():
    res = run_bench(tiny(noise_std=0.0, reg_l1=0.0, grid={"min": 1e-4, "max": 1e-3, "count": 2},
                         solvers=[{"method": "eg", "sampler": "full"}]))
    assert res.solvers["eg"].boundary
    assert any("grid boundary" in w for w in res.warnings)


def test_config_hash_ignores_output_and_game_spelling():
    a = tiny(out="x")
    b = tiny(out="y", games=None, game_seeds=[0, 1])
    assert a.config_hash() == b.config_hash()
    assert tiny(k_max=301).config_hash() != a.config_hash()


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny(bogus=1)
    with pytest.raises(ConfigError):
        tiny(solvers=[{"method": "eg", "sampler": "full"}, {"method": "eg", "sampler": "full"}])
    with pytest.raises(ConfigError):
        tiny(seeds=[])
    with pytest.raises(ConfigError):
        GridSpec(min=0.0)


def test_solver_ids():
    assert SolverSpec("eg", "full").id == "eg"
    assert SolverSpec("dseg", "uniform:2", vr=True).id == "dseg-uniform2-vr"
    assert SolverSpec("dseg", "cyclic", name="custom").id == "custom"


def test_records_refer_to_config(tmp_path):
    cfg = tiny()
    out = write_bench(run_bench(cfg), tmp_path / "r")
    recs = [json.loads(line) for line in (out / "records.jsonl").read_text().splitlines()]
    assert len(recs) == 2 * 3 * 2 * 2
    assert {r["config_hash"] for r in recs} == {cfg.config_hash()}
    assert all(r["wall_time"] is None for r in recs)


# -- CLI ------------------------------------------------------------------------------


def test_cli_rps_target_met(tmp_path):
    code = main(["solve", "--game", "rps", "--gamma", "0.1", "--k-max", "40000", "--target", "1e-3",
                 "--out", str(tmp_path)])
    assert code == 0
    strategy = json.loads((tmp_path / "strategy.json").read_text())
    assert np.allclose(strategy["theta"], 1 / 3, atol=1e-6)
    assert (tmp_path / "trace.csv").read_text().startswith("k,err")


def test_cli_target_not_met(tmp_path):
    code = main(["solve", "--game", "rps", "--gamma", "0.1", "--init", "random", "--k-max", "8",
                 "--target", "1e-12", "--out", str(tmp_path)])
    assert code == 3


@pytest.mark.parametrize("argv", [["solve", "--game", "missing.json"],
                                  ["solve", "--game", "rps", "--sampler", "uniform:1"],
                                  ["bench", "--config", "nope.json"],
                                  ["frobnicate"]])
def test_cli_config_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if argv[0] != "frobnicate" else argv) == 2


def test_cli_bad_json(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_cli_generate_round_trip(tmp_path):
    out = tmp_path / "g.json"
    assert main(["generate", "--n", "4", "--alpha", "1.0", "--seed", "3", "--out", str(out)]) == 0
    game = QuadraticGame.load(out)
    assert game.n == 4 and np.abs(game.payoff + game.payoff.T).max() == 0.0
    again = tmp_path / "h.json"
    main(["generate", "--n", "4", "--alpha", "1.0", "--seed", "3", "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()


def test_cli_bench_and_spectral(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps(tiny().to_dict()))
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "summary.json").is_file()
    assert main(["spectral", "--alphas", "0.5", "--games", "2", "--out", str(tmp_path / "s")]) == 0
    summary = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert {s["scheme"] for s in summary} == {"full", "cyclic", "random"}


def test_cli_env_output_root(tmp_path):
    env_out = tmp_path / "root"
    proc = subprocess.run([sys.executable, "-m", "dseg.cli", "solve", "--game", "rps", "--k-max", "40"],
                          env={"DSEG_OUT": str(env_out), "PATH": ""}, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (env_out / "solve" / "trace.csv").is_file()
