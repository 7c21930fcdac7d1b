"""Discrete-event simulation of one master and N asynchronous workers.

Workers hold the last parameters they received, draw a batch, compute a
gradient and report back after a gamma-distributed task time. The master
handles arrivals strictly in time order (ties by worker id), applies the
configured strategy and replies immediately. Everything is driven by
:class:`~gapaware.core.RngStream` children of ``cfg.seed``, so a run is
bit-for-bit reproducible.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import models
from .core import RngStream
from .models import Dataset, ModelSpec
from .strategies import (
    CEstimatorState,
    GapMode,
    GradientMsg,
    Hyper,
    StrategyKind,
    compute_gap,
    init_master,
    lr_at,
    master_step,
    update_c,
)

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# execution-time model


@dataclass(frozen=True)
class ExecTimeModel:
    """Gamma task-time model with task and machine variability coefficients.

    Homogeneous: one machine mean ``q ~ Gamma(a_task, mu_task/a_task)`` is
    drawn per run and shared by all machines; each task then takes
    ``Gamma(a_mach, q/a_mach)``. Heterogeneous: every machine ``j`` draws its
    own mean ``p[j] ~ Gamma(a_mach, mu_mach/a_mach)`` and each task takes
    ``Gamma(a_task, p[j]/a_task)``. Shapes are ``a = 1/V**2``.
    """

    regime: str = "homogeneous"
    mu_task: float = 128.0
    v_task: float = 0.1
    v_mach: float | None = None
    mu_mach: float | None = None

    def __post_init__(self):
        if self.regime not in ("homogeneous", "heterogeneous"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.v_mach is None:
            object.__setattr__(self, "v_mach", 0.1 if self.regime == "homogeneous" else 0.6)
        if self.mu_mach is None:
            object.__setattr__(self, "mu_mach", self.mu_task)
        for name in ("mu_task", "v_task", "v_mach", "mu_mach"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def homogeneous(self) -> bool:
        return self.regime == "homogeneous"

    @property
    def alpha_task(self) -> float:
        return 1.0 / self.v_task**2

    @property
    def alpha_mach(self) -> float:
        return 1.0 / self.v_mach**2

    @property
    def task_shape(self) -> float:
        return self.alpha_mach if self.homogeneous else self.alpha_task

    def machine_means(self, n: int, rng: RngStream) -> np.ndarray:
        if self.homogeneous:
            q = rng.gamma(self.alpha_task, self.mu_task / self.alpha_task, 1)[0]
            return np.full(n, q)
        return rng.gamma(self.alpha_mach, self.mu_mach / self.alpha_mach, n)

    def realize(self, n: int, rng: RngStream) -> "MachinePool":
        return MachinePool(self, self.machine_means(n, rng.child("means")), rng)

    def pooled_samples(self, n: int, rng: RngStream) -> np.ndarray:
        """Task times pooled over a large cluster whose overall mean is pinned.

        Homogeneous clusters share one machine mean, fixed here at
        ``mu_task``; heterogeneous samples each come from a fresh machine.
        """
        if self.homogeneous:
            return rng.gamma(self.task_shape, self.mu_task / self.task_shape, n)
        p = rng.child("means").gamma(self.alpha_mach, self.mu_mach / self.alpha_mach, n)
        return rng.child("tasks").gamma(self.alpha_task, p / self.alpha_task, n)


class MachinePool:
    """Per-machine task-time streams for one run."""

    def __init__(self, model: ExecTimeModel, means: np.ndarray, rng: RngStream, chunk: int = 256):
        self.model = model
        self.means = np.asarray(means, dtype=np.float64)
        self._streams = [rng.child("tasks", j) for j in range(self.means.size)]
        self._chunk = chunk
        self._buf = [np.empty(0) for _ in range(self.means.size)]
        self._pos = [0] * self.means.size

    def block(self, j: int, count: int) -> np.ndarray:
        shape = self.model.task_shape
        return self._streams[j].gamma(shape, self.means[j] / shape, count)

    def sample_task_time(self, j: int) -> float:
        if self._pos[j] >= self._buf[j].size:
            self._buf[j] = self.block(j, self._chunk)
            self._pos[j] = 0
        t = self._buf[j][self._pos[j]]
        self._pos[j] += 1
        return float(t)


def sample_task_time(pool: MachinePool, machine_id: int) -> float:
    return pool.sample_task_time(machine_id)


# ---------------------------------------------------------------------------
# configuration and log


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    hyper: Hyper = field(default_factory=Hyper)
    strategy: StrategyKind = StrategyKind.GA
    gap_mode: GapMode = GapMode.PARAMWISE
    N: int = 1
    M: int = 1024
    B: int = 32
    K: int = 1000
    exec_model: ExecTimeModel = field(default_factory=ExecTimeModel)
    seed: int = 0
    log_every: int = 10

    def __post_init__(self):
        object.__setattr__(self, "strategy", StrategyKind.parse(self.strategy))
        object.__setattr__(self, "gap_mode", GapMode.parse(self.gap_mode))
        if self.N < 1 or self.K < 1 or self.log_every < 1:
            raise ValueError("N, K and log_every must be >= 1")
        if not 1 <= self.B <= self.M:
            raise ValueError("batch size must satisfy 1 <= B <= M")

    @property
    def steps_per_epoch(self) -> float:
        return self.M / self.B

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["gap_mode"] = self.gap_mode.value
        d["hyper"]["decay_milestones"] = list(self.hyper.decay_milestones)
        return d


@dataclass
class RunLog:
    config: dict
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        vals = [r.get(name) for r in self.records]
        return np.array([np.nan if v is None else v for v in vals], dtype=np.float64)

    @property
    def diverged(self) -> bool:
        return bool(self.summary.get("diverged"))

    def lines(self) -> Iterator[str]:
        yield _dumps({"type": "header", "schema": SCHEMA_VERSION, "config": self.config})
        for r in self.records:
            yield _dumps({"type": "step", **r})
        yield _dumps({"type": "summary", **self.summary})

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RunLog":
        log = cls(config={})
        with open(path) as fh:
            for line in fh:
                obj = json.loads(line)
                kind = obj.pop("type")
                if kind == "header":
                    log.config = obj["config"]
                elif kind == "step":
                    log.records.append(obj)
                elif kind == "summary":
                    log.summary = obj
        return log


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# shared plumbing


class BatchSampler:
    """Batches drawn without replacement from a per-worker shuffled pass."""

    def __init__(self, M: int, B: int, rng: RngStream):
        self.M, self.B, self.rng = M, B, rng
        self._perm = rng.permutation(M)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.B > self.M:
            self._perm = self.rng.permutation(self.M)
            self._pos = 0
        out = self._perm[self._pos:self._pos + self.B]
        self._pos += self.B
        return out


class _Problem:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        root = RngStream(cfg.seed)
        self.root = root
        self.spec = cfg.model
        self.data: Dataset = models.make_synthetic(cfg.model, cfg.M, root.child("data"))
        self.theta0 = models.init_params(cfg.model, root.child("init"))
        self.full = self.data.full_batch()

    def worker(self, i: int) -> "_Worker":
        return _Worker(self, i)

    def evaluate(self, theta) -> dict:
        spec, data = self.spec, self.data
        g = models.grad(spec, theta, data, self.full)
        return {
            "loss": models.loss(spec, theta, data, self.full),
            "grad_norm2": float(g @ g),
            "accuracy": models.accuracy(spec, theta, data),
        }


class _Worker:
    def __init__(self, prob: _Problem, i: int):
        self.prob = prob
        self.sampler = BatchSampler(prob.cfg.M, prob.cfg.B, prob.root.child("batch", i))
        self.noise = prob.root.child("noise", i)

    def gradient(self, theta) -> np.ndarray:
        p = self.prob
        return models.stochastic_grad(p.spec, theta, p.data, self.sampler.next(), self.noise)


def _finite(x) -> bool:
    return bool(np.all(np.isfinite(x)))


def _summary(prob: _Problem, theta, steps: int, t: float, diverged: bool) -> dict:
    out = {
        "steps": steps,
        "sim_time": t,
        "diverged": diverged,
        "f_theta1": prob.evaluate(prob.theta0)["loss"],
        "steps_per_epoch": prob.cfg.steps_per_epoch,
    }
    if diverged:
        out.update(final_loss=None, final_accuracy=None, final_grad_norm2=None)
    else:
        ev = prob.evaluate(theta)
        out.update(final_loss=ev["loss"], final_accuracy=ev["accuracy"], final_grad_norm2=ev["grad_norm2"])
    return out


# ---------------------------------------------------------------------------
# runners


def run_async(cfg: RunConfig) -> RunLog:
    """Asynchronous parameter-server run with exactly ``cfg.K`` master steps.

    Each step record carries ``k``, the arrival time ``t``, ``worker``, the
    clamped delay ``tau`` and raw ``tau_raw``, the learning rate ``lr``, the
    effective ``step_scale``, Gap statistics for Gap-Aware strategies, and
    every ``log_every`` steps the full-dataset ``loss``, ``grad_norm2`` and
    ``accuracy`` evaluated at the parameters *before* the step.
    """
    prob = _Problem(cfg)
    N, spe = cfg.N, cfg.steps_per_epoch
    layout = cfg.model.layout
    pool = cfg.exec_model.realize(N, prob.root.child("exec"))
    workers = [prob.worker(i) for i in range(N)]
    state = init_master(prob.theta0, N, cfg.hyper)

    pending: list = [None] * N
    events: list = []
    with np.errstate(all="ignore"):
        for i in range(N):
            pending[i] = workers[i].gradient(prob.theta0)
            heapq.heappush(events, (pool.sample_task_time(i), i))

        log = RunLog(config=cfg.to_dict())
        diverged = False
        t = 0.0
        for step in range(cfg.K):
            t, i = heapq.heappop(events)
            k = state.k + 1
            rec = {"k": k, "t": t, "worker": i}
            if k == 1 or k % cfg.log_every == 0:
                rec.update(prob.evaluate(state.theta))
            eta = lr_at(cfg.hyper, state.k, N, spe)
            state, reply = master_step(cfg.strategy, state, GradientMsg(i, pending[i]), eta,
                                       cfg.hyper, cfg.gap_mode, layout)
            rec["lr"] = eta
            rec.update(state.info)
            log.records.append(rec)
            if not (_finite(state.theta) and _finite(reply)):
                diverged = True
                break
            if step + 1 < cfg.K:
                pending[i] = workers[i].gradient(reply)
                heapq.heappush(events, (t + pool.sample_task_time(i), i))
        log.summary = _summary(prob, state.theta, state.k, t, diverged)
    return log


class _LocalOptimizer:
    """Single-process optimizer mirroring each strategy family without staleness.

    DANA-GA is the one variant that still penalizes with one worker: its Gap
    compares the master with the look-ahead estimate it last handed out.
    """

    def __init__(self, kind: StrategyKind, hyper: Hyper, theta0, mode=GapMode.PARAMWISE, layout=None):
        self.kind, self.h = kind, hyper
        self.mode, self.layout = mode, layout
        self.c_state = CEstimatorState.zeros(np.size(theta0), hyper.peak_lr, hyper.c_beta, hyper.c_eps)
        self.family = kind.family
        self.theta = np.asarray(theta0, dtype=np.float64).copy()
        self.query = self.theta
        self.v = np.zeros_like(self.theta)
        self.m = np.zeros_like(self.theta)
        self.s = np.zeros_like(self.theta)
        self.k = 0

    def step(self, g, eta):
        h = self.h
        self.k += 1
        if self.family == "adam":
            b1, b2, k = h.beta1, h.beta2, self.k
            self.s = b2 * self.s + (1.0 - b2) * g * g
            s_hat = self.s / (1.0 - b2**k)
            self.m = b1 * self.m + (1.0 - b1) * g
            m_hat = self.m / (1.0 - b1**k)
            self.theta = self.theta - eta * m_hat / (np.sqrt(s_hat) + h.epsilon)
            self.query = self.theta
            return
        gamma = 0.0 if self.kind is StrategyKind.ASGD_PLAIN else h.gamma
        if self.kind is StrategyKind.DANA_GA:
            if h.c_fixed is None:
                self.c_state, C = update_c(self.c_state, gamma * self.v + g, self.mode, self.layout)
            else:
                C = h.c_fixed
            g = g / compute_gap(self.mode, self.theta, self.query, C, self.layout)
        self.v = gamma * self.v + g
        if self.family == "dana":
            self.theta = self.theta - eta * self.v
            self.query = self.theta - (eta * gamma) * self.v
            return
        direction = g + gamma * self.v if h.nesterov else self.v
        self.theta = self.theta - eta * direction
        self.query = self.theta


def run_sequential(cfg: RunConfig) -> RunLog:
    """Single worker, no staleness machinery; the reference every async run is checked against."""
    prob = _Problem(cfg)
    worker = prob.worker(0)
    opt = _LocalOptimizer(cfg.strategy, cfg.hyper, prob.theta0, cfg.gap_mode, cfg.model.layout)
    spe = cfg.steps_per_epoch
    log = RunLog(config={**cfg.to_dict(), "mode": "sequential"})
    diverged = False
    with np.errstate(all="ignore"):
        g = worker.gradient(opt.query)
        for step in range(cfg.K):
            k = step + 1
            rec = {"k": k, "t": float(k), "worker": 0}
            if k == 1 or k % cfg.log_every == 0:
                rec.update(prob.evaluate(opt.theta))
            eta = lr_at(cfg.hyper, step, 1, spe)
            opt.step(g, eta)
            rec["lr"] = eta
            log.records.append(rec)
            if not (_finite(opt.theta) and _finite(opt.query)):
                diverged = True
                break
            if step + 1 < cfg.K:
                g = worker.gradient(opt.query)
        log.summary = _summary(prob, opt.theta, len(log.records), float(len(log.records)), diverged)
    return log


def run_ssgd(cfg: RunConfig) -> RunLog:
    """Synchronous baseline: every iteration waits for all N workers and averages their gradients."""
    prob = _Problem(cfg)
    N, spe = cfg.N, cfg.steps_per_epoch
    pool = cfg.exec_model.realize(N, prob.root.child("exec"))
    workers = [prob.worker(i) for i in range(N)]
    opt = _LocalOptimizer(cfg.strategy, cfg.hyper, prob.theta0)
    log = RunLog(config={**cfg.to_dict(), "mode": "ssgd"})
    diverged = False
    t = 0.0
    with np.errstate(all="ignore"):
        for step in range(cfg.K):
            k = step + 1
            grads = np.stack([w.gradient(opt.query) for w in workers])
            times = [pool.sample_task_time(i) for i in range(N)]
            t += max(times)
            rec = {"k": k, "t": t, "worker": -1, "iter_time": max(times)}
            if k == 1 or k % cfg.log_every == 0:
                rec.update(prob.evaluate(opt.theta))
            eta = lr_at(cfg.hyper, step, N, spe)
            opt.step(grads.mean(axis=0), eta)
            rec["lr"] = eta
            log.records.append(rec)
            if not (_finite(opt.theta) and _finite(opt.query)):
                diverged = True
                break
        log.summary = _summary(prob, opt.theta, len(log.records), t, diverged)
    return log


def run(cfg: RunConfig, mode: str = "async") -> RunLog:
    runners = {"async": run_async, "ssgd": run_ssgd, "sequential": run_sequential}
    if mode not in runners:
        raise ValueError(f"unknown mode {mode!r}")
    return runners[mode](cfg)
