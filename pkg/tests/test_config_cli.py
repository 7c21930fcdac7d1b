import csv
import json

import pytest

from gapaware import cli
from gapaware.config import (
    ADAM_PRESET,
    MOMENTUM_PRESET,
    ConfigError,
    grid_sweep_text,
    parse_text,
    resolve,
    run_id,
)
from gapaware.simkernel import RunLog, run_sequential

TINY = """\
[run]
model = logistic
strategy = GA
N = 1
M = 64
B = 8
K = 30
eta0 = 0.05
gamma = 0.9
"""


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# parsing


def test_minimal_file_gets_defaults():
    cfg = resolve(parse_text("model = mlp1\nstrategy = GA\n").run)
    assert cfg.hyper.eta0 == MOMENTUM_PRESET["eta0"] and cfg.hyper.gamma == 0.9
    assert cfg.B == 128 and cfg.hyper.decay_milestones == (80.0, 120.0)
    assert cfg.K == -(-160 * cfg.M // cfg.B)
    assert cfg.exec_model.mu_task == cfg.B


def test_adam_preset():
    cfg = resolve(parse_text("strategy = ADAM_GA\n").run)
    assert cfg.hyper.eta0 == ADAM_PRESET["eta0"] == 0.00025
    assert cfg.B == 64 and cfg.hyper.decay_milestones == ()


def test_misspelled_key_is_named():
    with pytest.raises(ConfigError, match="learning_rte"):
        parse_text("model = mlp1\nlearning_rte = 0.1\n")


@pytest.mark.parametrize("text, key", [
    ("N = four\n", "N"),
    ("strategy = BOGUS\n", "strategy"),
    ("nesterov = maybe\n", "nesterov"),
])
def test_bad_values_are_named(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_text(text)


def test_k_and_epochs_conflict():
    with pytest.raises(ConfigError):
        parse_text("K = 10\nepochs = 2\n")


def test_json_config():
    a = parse_text(json.dumps({"model": "logistic", "N": 2, "K": 5}))
    b = parse_text(json.dumps({"run": {"model": "logistic", "N": 2, "K": 5}, "sweep": {"seed": [0, 1]}}))
    assert resolve(a.run).N == 2
    assert len(b.expand()) == 2
    with pytest.raises(ConfigError):
        parse_text("{not json")


def test_grid_sweep_has_70_points():
    exp = parse_text(grid_sweep_text())
    cfgs = exp.expand()
    assert len(cfgs) == 70
    assert len({(c.hyper.eta0, c.hyper.gamma) for c in cfgs}) == 70
    assert min(c.hyper.gamma for c in cfgs) < 0


def test_sweep_expansion_and_dedupe():
    exp = parse_text(TINY + "[sweep]\neta0 = 0.01, 0.1\ngamma = 0.0, 0.9\n")
    assert len(exp.expand()) == 4
    dup = parse_text(TINY + "[sweep]\neta0 = 0.01, 0.01, 0.1\n")
    with pytest.warns(UserWarning, match="duplicate"):
        assert len(dup.expand()) == 2


def test_milestone_sweep_uses_semicolons():
    exp = parse_text(TINY + "[sweep]\ndecay_milestones = 1,2; 3\n")
    assert [c.hyper.decay_milestones for c in exp.expand()] == [(1.0, 2.0), (3.0,)]


def test_run_id_stable_and_sensitive():
    a = resolve(parse_text(TINY).run)
    assert run_id(a) == run_id(resolve(parse_text(TINY).run))
    assert run_id(a) != run_id(a, "ssgd")
    assert run_id(a) != run_id(resolve(parse_text(TINY + "seed = 1\n").run))


# ---------------------------------------------------------------------------
# CLI


def test_run_writes_outputs_and_caches(tmp_path, capsys):
    cfg = write(tmp_path, TINY)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    (d,) = list((out / "runs").iterdir())
    files = {p.name: p.read_bytes() for p in d.iterdir()}
    assert set(files) == {"log.jsonl", "summary.csv", "config.echo"}
    assert cli.main(["run", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    assert "cache hit" in capsys.readouterr().out
    assert {p.name: p.read_bytes() for p in d.iterdir()} == files


def test_out_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", "--config", write(tmp_path, TINY)]) == 0
    assert (tmp_path / "env" / "runs").is_dir()


def test_single_worker_summary_matches_sequential(tmp_path):
    cfg = write(tmp_path, TINY)
    cli.main(["run", "--config", cfg, "--out", str(tmp_path)])
    (row,) = read_csv(next((tmp_path / "runs").iterdir()) / "summary.csv")
    seq = run_sequential(resolve(parse_text(TINY).run)).summary
    assert float(row["final_loss"]) == seq["final_loss"]


def test_exit_codes(tmp_path):
    assert cli.main(["run", "--config", write(tmp_path, "learning_rte = 1\n", "bad.cfg")]) == cli.EXIT_CONFIG
    assert cli.main(["run"]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
    diverge = TINY.replace("eta0 = 0.05", "eta0 = 1e6").replace("model = logistic", "model = quadratic")
    diverge = diverge.replace("K = 30", "K = 300") + "N = 4\n"
    assert cli.main(["run", "--config", write(tmp_path, diverge, "d.cfg"), "--out", str(tmp_path)]) == cli.EXIT_DIVERGED
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["run", "--config", write(tmp_path, TINY), "--out", str(blocker / "x")]) == cli.EXIT_IO


def test_sweep_command(tmp_path):
    cfg = write(tmp_path, TINY + "[sweep]\neta0 = 0.01, 0.1\ngamma = 0.0, 0.9\n")
    assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert len(rows) == 4 and all(r["error"] == "" for r in rows)
    assert list(rows[0]) == cli.SUMMARY_HEADER


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = write(tmp_path, TINY + "[sweep]\nseed = 0, 1, 2\n")
    cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "b"), "--parallel", "2"])
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_speedup_command(tmp_path):
    out = tmp_path / "s.csv"
    rc = cli.main(["speedup", "--regime", "heterogeneous", "--Ns", "1,2,4", "--iterations", "500",
                   "--repeats", "2", "--out", str(out)])
    assert rc == 0
    rows = read_csv(out)
    assert [int(r["N"]) for r in rows] == [1, 2, 4]
    assert float(rows[0]["async_speedup"]) == 1.0
    assert cli.main(["speedup", "--Ns", "1,x"]) == cli.EXIT_CONFIG


def test_gap_summary_and_check_bound(tmp_path, capsys):
    text = TINY.replace("N = 1", "N = 4").replace("K = 30", "K = 80")
    cfg = write(tmp_path, text)
    out = tmp_path / "g.csv"
    assert cli.main(["gap-summary", "--config", cfg, "--out-root", str(tmp_path), "--out", str(out)]) == 0
    assert read_csv(out)[0]["epoch"] == "0"
    log = next((tmp_path / "runs").iterdir()) / "log.jsonl"
    assert cli.main(["check-bound", "--log", str(log)]) == cli.EXIT_CONFIG
    assert cli.main(["check-bound", "--log", str(log), "--L", "1", "--sigma", "1", "--f-star", "0"]) == 0
    assert "satisfied=" in capsys.readouterr().out
    quad = TINY.replace("model = logistic", "model = quadratic\nnoise_sigma = 1").replace("gamma = 0.9", "gamma = 0")
    assert cli.main(["check-bound", "--config", write(tmp_path, quad, "q.cfg"), "--out-root", str(tmp_path)]) == 0


def test_gap_summary_rejects_non_gap_log(tmp_path):
    text = TINY.replace("strategy = GA", "strategy = SA_LR")
    assert cli.main(["gap-summary", "--config", write(tmp_path, text), "--out-root", str(tmp_path)]) == cli.EXIT_CONFIG


def test_log_loads_from_cli_output(tmp_path):
    cli.main(["run", "--config", write(tmp_path, TINY), "--out", str(tmp_path)])
    log = RunLog.from_jsonl(next((tmp_path / "runs").iterdir()) / "log.jsonl")
    assert log.summary["steps"] == 30 and log.config["strategy"] == "GA"
