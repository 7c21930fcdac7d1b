"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 the run diverged
(its log is still written), 4 file-system error.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import analysis, models
from .config import ConfigError, echo, parse_config, resolve, run_id
from .core import RngStream
from .simkernel import ExecTimeModel, RunConfig, RunLog, run

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "GAPAWARE_OUT"

SUMMARY_HEADER = [
    "run_id", "mode", "model", "strategy", "gap_mode", "N", "B", "K", "seed", "eta0", "gamma",
    "steps", "sim_time", "final_loss", "final_accuracy", "diverged", "error",
]


def out_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or ".")


def summary_row(rid: str, mode: str, cfg: RunConfig, log: RunLog | None, error: str = "") -> dict:
    s = log.summary if log is not None else {}
    return {
        "run_id": rid, "mode": mode, "model": cfg.model.kind, "strategy": cfg.strategy.value,
        "gap_mode": cfg.gap_mode.value, "N": cfg.N, "B": cfg.B, "K": cfg.K, "seed": cfg.seed,
        "eta0": cfg.hyper.eta0, "gamma": cfg.hyper.gamma,
        "steps": s.get("steps"), "sim_time": s.get("sim_time"),
        "final_loss": s.get("final_loss"), "final_accuracy": s.get("final_accuracy"),
        "diverged": s.get("diverged"), "error": error,
    }


def _csv_text(rows, header) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: analysis._fmt(r.get(k)) for k in header})
    return buf.getvalue()


def execute(cfg: RunConfig, mode: str, root: Path) -> tuple[dict, bool]:
    """Run one config into ``root/runs/<id>/`` unless identical output exists.

    Returns the summary row and whether it was a cache hit.
    """
    rid = run_id(cfg, mode)
    d = root / "runs" / rid
    text = echo(cfg, mode)
    files = [d / "config.echo", d / "log.jsonl", d / "summary.csv"]
    if all(f.exists() for f in files) and files[0].read_text() == text:
        log = RunLog.from_jsonl(files[1])
        return summary_row(rid, mode, cfg, log), True
    d.mkdir(parents=True, exist_ok=True)
    log = run(cfg, mode)
    log.to_jsonl(files[1])
    row = summary_row(rid, mode, cfg, log)
    files[2].write_text(_csv_text([row], SUMMARY_HEADER))
    # written last so an interrupted run is never mistaken for a cached one
    files[0].write_text(text)
    return row, False


def _execute_safe(args):
    cfg, mode, root = args
    try:
        row, _ = execute(cfg, mode, root)
        return row
    except Exception as exc:  # recorded per row, the sweep carries on
        return summary_row(run_id(cfg, mode), mode, cfg, None, error=f"{type(exc).__name__}: {exc}")


def _load(path, seed=None):
    exp = parse_config(path)
    if seed is not None:
        exp.run["seed"] = seed
        exp.sweep.pop("seed", None)
    return exp


# ---------------------------------------------------------------------------
# verbs


def cmd_run(args) -> int:
    exp = _load(args.config, args.seed)
    if exp.is_sweep:
        raise ConfigError("config has a [sweep] block; use the 'sweep' command")
    cfg = resolve(exp.run)
    root = out_root(args.out)
    row, hit = execute(cfg, args.mode, root)
    where = root / "runs" / row["run_id"]
    print(f"{'cache hit' if hit else 'wrote'} {where}")
    print(f"final_loss={row['final_loss']} final_accuracy={row['final_accuracy']} diverged={row['diverged']}")
    return EXIT_DIVERGED if row["diverged"] else EXIT_OK


def _sort_key(row):
    return (row["model"], row["strategy"], row["gap_mode"], row["N"], row["eta0"], row["gamma"], row["seed"],
            row["run_id"])


def cmd_sweep(args) -> int:
    exp = _load(args.config, args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cfgs = exp.expand()
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    root = out_root(args.out)
    jobs = [(c, args.mode, root) for c in cfgs]
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as ex:
            rows = list(ex.map(_execute_safe, jobs))
    else:
        rows = [_execute_safe(j) for j in jobs]
    rows.sort(key=_sort_key)
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.csv").write_text(_csv_text(rows, SUMMARY_HEADER))
    failed = sum(1 for r in rows if r["error"])
    diverged = sum(1 for r in rows if r["diverged"])
    print(f"{len(rows)} runs, {diverged} diverged, {failed} failed -> {root / 'sweep.csv'}")
    return EXIT_OK


def _ns(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"invalid value for 'Ns': {text!r}") from None


def cmd_speedup(args) -> int:
    model = ExecTimeModel(args.regime, mu_task=args.mu_task, v_task=args.v_task, v_mach=args.v_mach)
    pts = analysis.speedup_table(model, _ns(args.Ns), args.iterations, args.repeats, args.seed)
    text = _csv_text([asdict(p) for p in pts], analysis.SPEEDUP_HEADER)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _log_and_cfg(args):
    if args.log:
        log = RunLog.from_jsonl(args.log)
        return log, None
    exp = _load(args.config, args.seed)
    cfg = resolve(exp.run)
    row, _ = execute(cfg, "async", out_root(args.out_root))
    return RunLog.from_jsonl(out_root(args.out_root) / "runs" / row["run_id"] / "log.jsonl"), cfg


def cmd_check_bound(args) -> int:
    if not args.log and not args.config:
        raise ConfigError("give --config or --log")
    log, cfg = _log_and_cfg(args)
    L, sigma, f_star = args.L, args.sigma, args.f_star
    if cfg is not None and cfg.model.kind == "quadratic":
        info = models.make_synthetic(cfg.model, cfg.M, RngStream(cfg.seed).child("data")).info
        L = info["L"] if L is None else L
        sigma = info["sigma2"] ** 0.5 if sigma is None else sigma
        f_star = info["f_star"] if f_star is None else f_star
    try:
        rep = analysis.bound_check(log, L, sigma, f_star, args.B)
    except analysis.CannotCheck as exc:
        print(f"cannot check: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for k, v in asdict(rep).items():
        print(f"{k}={v}")
    return EXIT_OK


def cmd_gap_summary(args) -> int:
    if not args.log and not args.config:
        raise ConfigError("give --config or --log")
    log, _ = _log_and_cfg(args)
    try:
        summ = analysis.gap_delay_summary(log)
    except analysis.UnsupportedLogError as exc:
        raise ConfigError(str(exc)) from None
    text = _csv_text(summ.epochs, analysis.GAP_HEADER)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"frac_gap_below_delay={summ.frac_gap_below_delay} min_gap={summ.min_gap} min_tau={summ.min_tau}",
          file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gapaware", description="Asynchronous SGD simulator with staleness mitigation.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output root (default: $GAPAWARE_OUT or .)"):
        sp.add_argument("--config", help="experiment file (key=value or JSON)")
        sp.add_argument("--seed", type=int, default=None, help="override the seed")
        sp.add_argument("--out", default=None, help=out_help)

    sp = sub.add_parser("run", help="run one configuration")
    common(sp)
    sp.add_argument("--mode", choices=("async", "ssgd", "sequential"), default="async")
    sp.set_defaults(func=cmd_run, need_config=True)

    sp = sub.add_parser("sweep", help="run every configuration of a sweep")
    common(sp)
    sp.add_argument("--mode", choices=("async", "ssgd", "sequential"), default="async")
    sp.add_argument("--parallel", type=int, default=1, help="concurrent runs")
    sp.set_defaults(func=cmd_sweep, need_config=True)

    sp = sub.add_parser("speedup", help="async vs sync throughput under the gamma timing model")
    sp.add_argument("--regime", choices=("homogeneous", "heterogeneous"), default="homogeneous")
    sp.add_argument("--Ns", default=",".join(str(2**i) for i in range(11)))
    sp.add_argument("--repeats", type=int, default=20)
    sp.add_argument("--iterations", type=int, default=100_000)
    sp.add_argument("--mu-task", type=float, default=128.0)
    sp.add_argument("--v-task", type=float, default=0.1)
    sp.add_argument("--v-mach", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="CSV path (default: stdout)")
    sp.set_defaults(func=cmd_speedup, need_config=False)

    for name, func, helptext in (("check-bound", cmd_check_bound, "convergence-bound check of a run"),
                                 ("gap-summary", cmd_gap_summary, "per-epoch delay and Gap table")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config")
        sp.add_argument("--log", help="existing log.jsonl instead of --config")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-root", default=None, help="where --config runs are stored")
        if name == "check-bound":
            sp.add_argument("--L", type=float, default=None)
            sp.add_argument("--sigma", type=float, default=None)
            sp.add_argument("--f-star", type=float, default=None)
            sp.add_argument("--B", type=int, default=None)
        else:
            sp.add_argument("--out", default=None, help="CSV path (default: stdout)")
        sp.set_defaults(func=func, need_config=False)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.need_config and not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
