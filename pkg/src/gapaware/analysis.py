"""Post-hoc analysis: throughput speedups, Gap/delay traces and bound checks."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import kernels
from .core import RngStream
from .simkernel import ExecTimeModel, RunLog


class CannotCheck(ValueError):
    """The constants needed for a bound check are missing or degenerate."""


class UnsupportedLogError(ValueError):
    """The log does not carry the fields an analysis needs."""


# ---------------------------------------------------------------------------
# speedups


@dataclass(frozen=True)
class SpeedupPoint:
    N: int
    async_throughput: float
    sync_throughput: float
    async_speedup: float
    sync_speedup: float
    async_over_sync: float


def _async_wall(pool_blocks, k: int, extend) -> float:
    """Time of the ``k``-th completion, growing machine blocks until it is exact."""
    while True:
        sizes = np.array([b.size for b in pool_blocks])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        wall = kernels.kth_completion(np.concatenate(pool_blocks), offsets, k)
        # a machine whose drawn tasks all end before ``wall`` might have
        # finished more of them in time; give it more draws and retry
        short = [j for j, b in enumerate(pool_blocks) if b.sum() <= wall]
        if not short:
            return wall
        for j in short:
            pool_blocks[j] = np.concatenate([pool_blocks[j], extend(j, max(16, pool_blocks[j].size))])


def speedup_table(exec_model: ExecTimeModel, Ns, iterations: int = 100_000, repeats: int = 20,
                  seed: int = 0) -> list[SpeedupPoint]:
    """Timing-only comparison of asynchronous and synchronous training.

    Both modes are charged for the same number of gradient computations
    (``iterations``). Asynchronous wall time is the moment the
    ``iterations``-th task completes across N independent machines;
    synchronous training runs ``ceil(iterations/N)`` rounds, each lasting as
    long as its slowest machine. Throughputs are gradients per simulated time
    unit and speedups are relative to the single-machine asynchronous
    throughput. Each repeat shares its machine means and task-time streams
    across modes and across N, so at N=1 both modes see identical draws.
    """
    if iterations < 1 or repeats < 1:
        raise ValueError("iterations and repeats must be >= 1")
    Ns = sorted({int(n) for n in Ns})
    if not Ns or Ns[0] < 1:
        raise ValueError("worker counts must be >= 1")
    grid = sorted(set(Ns) | {1})
    n_max = grid[-1]
    shape = exec_model.task_shape
    thr_async = np.zeros((repeats, len(grid)))
    thr_sync = np.zeros((repeats, len(grid)))
    for r in range(repeats):
        rs = RngStream(seed).child("speedup", r)
        means = exec_model.machine_means(n_max, rs.child("machines"))
        for c, N in enumerate(grid):
            streams = [rs.child("tasks", N, j) for j in range(N)]
            scale = means[:N] / shape

            def draw(j, n):
                return streams[j].gamma(shape, scale[j], n)

            rounds = math.ceil(iterations / N)
            share = (1.0 / means[:N]) / np.sum(1.0 / means[:N])
            need = np.ceil(iterations * share * 1.05 + 6.0 * np.sqrt(iterations * share) + 10).astype(int)
            blocks = [draw(j, max(rounds, int(need[j]))) for j in range(N)]
            sync = np.stack([b[:rounds] for b in blocks])
            thr_sync[r, c] = N * rounds / kernels.sync_total(sync)
            thr_async[r, c] = iterations / _async_wall(blocks, iterations, draw)
    a_mean = thr_async.mean(axis=0)
    s_mean = thr_sync.mean(axis=0)
    base = a_mean[0]
    out = []
    for c, N in enumerate(grid):
        if N not in Ns:
            continue
        out.append(SpeedupPoint(N, float(a_mean[c]), float(s_mean[c]), float(a_mean[c] / base),
                                float(s_mean[c] / base), float(a_mean[c] / s_mean[c])))
    return out


def tail_probability(exec_model: ExecTimeModel, threshold: float, n: int = 1_000_000, seed: int = 0) -> float:
    """Monte Carlo estimate of P(task time > threshold) over a large cluster."""
    return float(np.mean(exec_model.pooled_samples(n, RngStream(seed).child("tail")) > threshold))


# ---------------------------------------------------------------------------
# gap / delay


@dataclass
class GapDelaySummary:
    epochs: list  # dicts: epoch, steps, tau_mean, tau_std, gap_mean, gap_std
    frac_gap_below_delay: float
    min_gap: float
    min_tau: int


def _steps_per_epoch(log: RunLog) -> float:
    cfg = log.config or {}
    if "M" in cfg and "B" in cfg:
        return cfg["M"] / cfg["B"]
    if "steps_per_epoch" in log.summary:
        return float(log.summary["steps_per_epoch"])
    raise UnsupportedLogError("log does not record the epoch length")


def gap_delay_summary(log: RunLog, steps_per_epoch: float | None = None) -> GapDelaySummary:
    """Per-epoch mean and spread of the delay and the (parameter-averaged) Gap."""
    if not log.records or any("gap_mean" not in r or "tau" not in r for r in log.records):
        raise UnsupportedLogError("log has no Gap records; run a Gap-Aware strategy")
    spe = steps_per_epoch or _steps_per_epoch(log)
    k = np.array([r["k"] for r in log.records])
    tau = np.array([r["tau"] for r in log.records], dtype=np.float64)
    gap = np.array([r["gap_mean"] for r in log.records], dtype=np.float64)
    gmin = np.array([r.get("gap_min", r["gap_mean"]) for r in log.records], dtype=np.float64)
    epoch = np.floor((k - 1) / spe).astype(int)
    rows = []
    for e in np.unique(epoch):
        sel = epoch == e
        rows.append({
            "epoch": int(e),
            "steps": int(sel.sum()),
            "tau_mean": float(tau[sel].mean()),
            "tau_std": float(tau[sel].std()),
            "gap_mean": float(gap[sel].mean()),
            "gap_std": float(gap[sel].std()),
        })
    below = np.mean([row["gap_mean"] < row["tau_mean"] for row in rows])
    return GapDelaySummary(rows, float(below), float(gmin.min()), int(tau.min()))


# ---------------------------------------------------------------------------
# convergence bound


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    L: float
    sigma: float
    f1: float
    f_star: float
    B: int
    K: int
    T: int
    k_threshold: float
    precondition: bool
    condition_max: float
    logged_points: int
    satisfied: bool


def theorem_condition(step_scale, B: int, L: float, T: int) -> np.ndarray:
    """Per-step value of ``B L r_k + 2 B^2 L^2 T sum_{t=1..T} r_{k+t}^2``.

    ``r_k`` is the per-sample step ``eta_k/G_k``; our updates average the
    batch gradient, so ``r_k = step_scale_k / B``. Steps past the end of the
    log contribute nothing to the look-ahead sum.
    """
    r = np.asarray(step_scale, dtype=np.float64) / B
    r2 = np.concatenate([r * r, np.zeros(T)])
    c = np.concatenate([[0.0], np.cumsum(r2)])
    K = r.size
    idx = np.arange(K)
    ahead = c[idx + T + 1] - c[idx + 1]
    return B * L * r + 2.0 * B * B * L * L * T * ahead


def bound_check(log: RunLog, L: float | None, sigma: float | None, f_star: float | None,
                B: int | None = None) -> BoundReport:
    """Compare the logged average squared gradient norm with the convergence bound.

    The average runs over the logged subsequence of steps (every
    ``log_every`` steps, always including the first).
    """
    if L is None or sigma is None or f_star is None:
        raise CannotCheck("L, sigma and f_star are all required")
    if not sigma > 0:
        raise CannotCheck("sigma must be > 0; the bound degenerates for noiseless gradients")
    if not L > 0:
        raise CannotCheck("L must be > 0")
    if log.diverged:
        raise CannotCheck("run diverged")
    B = int(B if B is not None else log.config.get("B", 0))
    if B < 1:
        raise CannotCheck("batch size unknown")
    f1 = log.summary.get("f_theta1")
    if f1 is None:
        raise CannotCheck("log lacks f(theta_1)")
    gn = log.column("grad_norm2")
    gn = gn[np.isfinite(gn)]
    if gn.size == 0:
        raise CannotCheck("log has no gradient-norm records")
    K = len(log.records)
    tau = log.column("tau")
    T = int(np.nanmax(tau)) if np.isfinite(tau).any() else 1
    gap_f = max(f1 - f_star, 0.0)
    lhs = float(gn.mean())
    rhs = 4.0 * math.sqrt(gap_f * L * sigma**2 / (B * K))
    threshold = 4.0 * B * L * (T + 1) ** 2 * gap_f / sigma**2
    scale = log.column("step_scale")
    if not np.isfinite(scale).all():
        scale = log.column("lr")
    cond = float(theorem_condition(scale, B, L, T).max())
    pre = K >= threshold
    return BoundReport(lhs, rhs, L, sigma, f1, f_star, B, K, T, threshold, pre, cond, int(gn.size),
                       bool(pre and lhs <= rhs and cond <= 1.0))


# ---------------------------------------------------------------------------
# CSV output


def write_csv(path, rows, header=None) -> None:
    rows = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]
    if header is None:
        header = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in header})


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return "" if x is None else x


SPEEDUP_HEADER = [f.name for f in fields(SpeedupPoint)]
GAP_HEADER = ["epoch", "steps", "tau_mean", "tau_std", "gap_mean", "gap_std"]
