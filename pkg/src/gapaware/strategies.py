"""Master-side update rules for asynchronous parameter-server SGD.

Every step function is a pure function of ``(state, msg, eta)`` and returns
``(new_state, reply)``. ``reply`` is the parameter vector sent back to the
worker that produced ``msg``. Arrays inside a :class:`MasterState` are never
modified in place once the state has been returned.

Momentum follows the heavy-ball form ``v <- gamma*v + g``,
``theta <- theta - eta*v`` by default; ``Hyper(nesterov=True)`` switches the
momentum family and the Gap-Aware step to the look-ahead form
``theta <- theta - eta*(g + gamma*v)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .core import InvalidGapError, LayerLayout, l2_norm


class StrategyKind(str, enum.Enum):
    ASGD_PLAIN = "ASGD_PLAIN"
    NAG_ASGD = "NAG_ASGD"
    SA_LR = "SA_LR"
    SA_GRAD = "SA_GRAD"
    GA = "GA"
    DANA = "DANA"
    DANA_SA = "DANA_SA"
    DANA_GA = "DANA_GA"
    ADAM = "ADAM"
    ADAM_SA = "ADAM_SA"
    ADAM_GA = "ADAM_GA"

    @classmethod
    def parse(cls, name) -> "StrategyKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_")
        aliases = {"ASGD": "ASGD_PLAIN", "NAG": "NAG_ASGD", "SA": "SA_LR"}
        return cls(aliases.get(key, key))

    @property
    def family(self) -> str:
        if self in MOMENTUM_FAMILY:
            return "momentum"
        if self is StrategyKind.GA:
            return "ga"
        if self.value.startswith("DANA"):
            return "dana"
        return "adam"

    @property
    def uses_gap(self) -> bool:
        return self in (StrategyKind.GA, StrategyKind.DANA_GA, StrategyKind.ADAM_GA)

    @property
    def uses_delay(self) -> bool:
        return self in (StrategyKind.SA_LR, StrategyKind.SA_GRAD, StrategyKind.DANA_SA, StrategyKind.ADAM_SA)


MOMENTUM_FAMILY = (StrategyKind.ASGD_PLAIN, StrategyKind.NAG_ASGD, StrategyKind.SA_LR, StrategyKind.SA_GRAD)


class GapMode(str, enum.Enum):
    GLOBAL = "GLOBAL"
    LAYERWISE = "LAYERWISE"
    PARAMWISE = "PARAMWISE"

    @classmethod
    def parse(cls, name) -> "GapMode":
        if isinstance(name, cls):
            return name
        return cls(str(name).strip().upper().replace("-", "").replace("_", ""))


class UnknownStrategyError(ValueError):
    pass


@dataclass(frozen=True)
class Hyper:
    eta0: float = 0.1
    eta_max: float | None = None  # defaults to eta0
    gamma: float = 0.9
    nesterov: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    warmup_epochs: float = 5.0
    decay_factor: float = 0.1
    decay_milestones: tuple = ()
    c_beta: float = 0.999
    c_eps: float = 1e-8
    c_fixed: float | None = None  # pin the Gap normaliser instead of estimating it
    schedule: str = "step"  # "step" or "corollary"
    allow_negative_gamma: bool = False

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be > 0")
        lo = -1.0 if self.allow_negative_gamma else 0.0
        if not (lo < self.gamma < 1.0 or self.gamma == 0.0):
            raise ValueError(f"gamma={self.gamma} outside [{lo}, 1)")
        for name in ("beta1", "beta2", "c_beta"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.schedule not in ("step", "corollary"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.c_fixed is not None and not self.c_fixed > 0:
            raise InvalidGapError("c_fixed must be > 0")
        object.__setattr__(self, "decay_milestones", tuple(sorted(self.decay_milestones)))

    @property
    def peak_lr(self) -> float:
        return self.eta0 if self.eta_max is None else self.eta_max


def lr_at(h: Hyper, k: int, N: int, steps_per_epoch: float) -> float:
    """Learning rate for the master step that follows ``k`` completed steps.

    Linear warm-up from ``eta0/N`` to ``eta0`` over ``warmup_epochs`` epochs,
    then multiplicative decay at every epoch milestone passed.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if h.schedule == "corollary":
        return h.eta0
    warm = h.warmup_epochs * steps_per_epoch
    if warm > 0 and k < warm:
        start = h.eta0 / N
        return start + (h.eta0 - start) * (k / warm)
    passed = sum(1 for m in h.decay_milestones if k >= m * steps_per_epoch)
    return h.eta0 * h.decay_factor**passed


# ---------------------------------------------------------------------------
# C coefficient and Gap


@dataclass(frozen=True)
class CEstimatorState:
    """Running second moment of update steps, bias-corrected like Adam."""

    m: np.ndarray
    norm_mean: float = 0.0
    k: int = 0
    eta_max: float = 0.1
    beta: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, d: int, eta_max: float, beta: float = 0.999, eps: float = 1e-8):
        return cls(np.zeros(d), 0.0, 0, eta_max, beta, eps)


def update_c(c: CEstimatorState, v_step, mode: GapMode = GapMode.PARAMWISE,
             layout: LayerLayout | None = None):
    """Advance the C estimator with one update step and return ``(state, C)``.

    ``C`` is per parameter (PARAMWISE), per layer (LAYERWISE, from the summed
    second moment of the layer) or a scalar (GLOBAL, from a running mean of
    the step norm). Every value is at least ``eta_max * eps``.
    """
    v_step = np.asarray(v_step, dtype=np.float64)
    k = c.k + 1
    b = c.beta
    m = b * c.m + (1.0 - b) * v_step * v_step
    norm_mean = b * c.norm_mean + (1.0 - b) * l2_norm(v_step)
    corr = 1.0 - b**k
    new = replace(c, m=m, norm_mean=norm_mean, k=k)
    return new, c_value(new, mode, layout, _corr=corr)


def c_value(c: CEstimatorState, mode: GapMode, layout: LayerLayout | None = None, _corr=None):
    if c.k == 0:
        floor = c.eta_max * c.eps
        if mode is GapMode.GLOBAL:
            return floor
        n = c.m.size if mode is GapMode.PARAMWISE else _layout(layout, c.m.size).n_layers
        return np.full(n, floor)
    corr = (1.0 - c.beta**c.k) if _corr is None else _corr
    if mode is GapMode.PARAMWISE:
        return c.eta_max * (np.sqrt(c.m / corr) + c.eps)
    if mode is GapMode.LAYERWISE:
        lay = _layout(layout, c.m.size)
        m_hat = c.m / corr
        per = np.array([np.sqrt(m_hat[lo:hi].sum()) for lo, hi in lay.spans])
        return c.eta_max * (per + c.eps)
    return c.eta_max * (c.norm_mean / corr + c.eps)


def _layout(layout, d):
    return layout if layout is not None else LayerLayout.single(d)


def compute_gap(mode: GapMode, theta_k, theta_sent, C, layout: LayerLayout | None = None):
    """Gap between the master's parameters and those a gradient was computed on.

    GLOBAL returns a float; LAYERWISE and PARAMWISE return a length-``d``
    array (LAYERWISE broadcasts each layer's value over its coordinates).
    """
    theta_k = np.asarray(theta_k, dtype=np.float64)
    theta_sent = np.asarray(theta_sent, dtype=np.float64)
    if theta_k.shape != theta_sent.shape:
        raise ValueError("dimension mismatch")
    C_arr = np.asarray(C, dtype=np.float64)
    if not np.all(C_arr > 0):
        raise InvalidGapError("Gap normaliser must be strictly positive")
    diff = theta_k - theta_sent
    if mode is GapMode.GLOBAL:
        if C_arr.size != 1:
            raise ValueError("GLOBAL mode takes a scalar C")
        return l2_norm(diff) / float(C_arr.reshape(-1)[0]) + 1.0
    if mode is GapMode.LAYERWISE:
        lay = _layout(layout, diff.size)
        Cl = np.broadcast_to(C_arr, (lay.n_layers,))
        per = np.array([l2_norm(diff[lo:hi]) / Cl[p] + 1.0 for p, (lo, hi) in enumerate(lay.spans)])
        return per[lay.layer_ids()]
    return kernels.paramwise_gap(theta_k, theta_sent, np.broadcast_to(C_arr, diff.shape))


# ---------------------------------------------------------------------------
# master state


@dataclass(frozen=True)
class MasterState:
    k: int
    theta: np.ndarray
    v: np.ndarray
    v_workers: np.ndarray  # (N, d)
    iter_array: np.ndarray  # (N,) step at which each worker last got parameters
    sent: np.ndarray  # (N, d) parameters (or estimates) last sent to each worker
    adam_m: np.ndarray
    adam_v: np.ndarray
    c_state: CEstimatorState
    info: dict = field(default_factory=dict, compare=False)

    @property
    def N(self) -> int:
        return self.iter_array.size


class GradientMsg(NamedTuple):
    worker_id: int
    g: np.ndarray


def init_master(theta0, N: int, hyper: Hyper) -> MasterState:
    theta0 = np.asarray(theta0, dtype=np.float64).copy()
    d = theta0.size
    if N < 1:
        raise ValueError("need at least one worker")
    return MasterState(
        k=0,
        theta=theta0,
        v=np.zeros(d),
        v_workers=np.zeros((N, d)),
        iter_array=np.zeros(N, dtype=np.int64),
        sent=np.tile(theta0, (N, 1)),
        adam_m=np.zeros(d),
        adam_v=np.zeros(d),
        c_state=CEstimatorState.zeros(d, hyper.peak_lr, hyper.c_beta, hyper.c_eps),
    )


def compute_delay(state: MasterState, worker_id: int) -> int:
    """Delay of ``worker_id``'s gradient at the current step ``state.k``, clamped to >= 1."""
    return max(1, int(state.k - state.iter_array[worker_id]))


def _begin(state: MasterState, msg: GradientMsg):
    i = int(msg.worker_id)
    if not 0 <= i < state.N:
        raise IndexError(f"worker id {i} out of range")
    g = np.asarray(msg.g, dtype=np.float64)
    if g.shape != state.theta.shape:
        raise ValueError("gradient dimension mismatch")
    st = replace(state, k=state.k + 1)
    tau_raw = int(st.k - st.iter_array[i])
    tau = compute_delay(st, i)
    it = st.iter_array.copy()
    it[i] = st.k
    return st, i, g, tau, tau_raw, it


def _row(arr: np.ndarray, i: int, value) -> np.ndarray:
    out = arr.copy()
    out[i] = value
    return out


def _gap_for(state: MasterState, i, v_step, hyper: Hyper, mode, layout):
    if hyper.c_fixed is not None:
        c_state, C = state.c_state, hyper.c_fixed
    else:
        c_state, C = update_c(state.c_state, v_step, mode, layout)
    G = compute_gap(mode, state.theta, state.sent[i], C, layout)
    return c_state, G


def _gap_info(G):
    G = np.asarray(G, dtype=np.float64)
    return {"gap_mean": float(G.mean()), "gap_max": float(G.max()), "gap_min": float(G.min())}


def step_momentum_family(variant, state: MasterState, msg: GradientMsg, eta: float, hyper: Hyper):
    variant = StrategyKind.parse(variant)
    if variant not in MOMENTUM_FAMILY:
        raise UnknownStrategyError(f"{variant} is not a momentum-family strategy")
    st, i, g, tau, tau_raw, it = _begin(state, msg)
    gamma = 0.0 if variant is StrategyKind.ASGD_PLAIN else hyper.gamma
    step_eta = eta
    if variant is StrategyKind.SA_GRAD:
        g_in = g / tau
    else:
        g_in = g
    if variant is StrategyKind.SA_LR:
        step_eta = eta / tau
    v = gamma * st.v + g_in
    direction = g_in + gamma * v if hyper.nesterov else v
    theta = st.theta - step_eta * direction
    new = replace(st, theta=theta, v=v, iter_array=it, sent=_row(st.sent, i, theta),
                  info={"tau": tau, "tau_raw": tau_raw, "step_scale": step_eta})
    return new, theta


def step_ga(state: MasterState, msg: GradientMsg, eta: float, hyper: Hyper,
            mode: GapMode = GapMode.PARAMWISE, layout: LayerLayout | None = None):
    """Gap-Aware master: divide the incoming gradient by its Gap before the momentum update."""
    st, i, g, tau, tau_raw, it = _begin(state, msg)
    gamma = hyper.gamma
    c_state, G = _gap_for(st, i, gamma * st.v + g, hyper, mode, layout)
    g_in = g / G
    v = gamma * st.v + g_in
    direction = g_in + gamma * v if hyper.nesterov else v
    if hyper.schedule == "corollary":
        # eta_k / G_k held constant
        step_eta = eta * G
        scale = eta
    else:
        step_eta = eta
        scale = float(np.mean(eta / np.asarray(G)))
    theta = st.theta - step_eta * direction
    new = replace(st, theta=theta, v=v, iter_array=it, sent=_row(st.sent, i, theta), c_state=c_state,
                  info={"tau": tau, "tau_raw": tau_raw, **_gap_info(G), "step_scale": scale})
    return new, theta


def step_dana_family(variant, state: MasterState, msg: GradientMsg, eta: float, hyper: Hyper,
                     mode: GapMode = GapMode.PARAMWISE, layout: LayerLayout | None = None):
    """DANA masters: per-worker momentum and a look-ahead estimate as reply."""
    variant = StrategyKind.parse(variant)
    if variant.family != "dana":
        raise UnknownStrategyError(f"{variant} is not a DANA-family strategy")
    st, i, g, tau, tau_raw, it = _begin(state, msg)
    gamma = hyper.gamma
    info = {"tau": tau, "tau_raw": tau_raw, "step_scale": eta}
    c_state = st.c_state
    if variant is StrategyKind.DANA_SA:
        g_in = g / tau
    elif variant is StrategyKind.DANA_GA:
        c_state, G = _gap_for(st, i, gamma * st.v_workers[i] + g, hyper, mode, layout)
        g_in = g / G
        info.update(_gap_info(G))
        info["step_scale"] = float(np.mean(eta / np.asarray(G)))
    else:
        g_in = g
    vw = _row(st.v_workers, i, gamma * st.v_workers[i] + g_in)
    theta = st.theta - eta * vw[i]
    estimate = theta - (eta * gamma) * vw.sum(axis=0)
    new = replace(st, theta=theta, v_workers=vw, iter_array=it, sent=_row(st.sent, i, estimate),
                  c_state=c_state, info=info)
    return new, estimate


def step_adam_family(variant, state: MasterState, msg: GradientMsg, eta: float, hyper: Hyper,
                     mode: GapMode = GapMode.PARAMWISE, layout: LayerLayout | None = None):
    """Adam masters; staleness penalties touch only the first moment."""
    variant = StrategyKind.parse(variant)
    if variant.family != "adam":
        raise UnknownStrategyError(f"{variant} is not an Adam-family strategy")
    st, i, g, tau, tau_raw, it = _begin(state, msg)
    b1, b2, eps = hyper.beta1, hyper.beta2, hyper.epsilon
    k = st.k
    info = {"tau": tau, "tau_raw": tau_raw}
    c_state = st.c_state
    v = b2 * st.adam_v + (1.0 - b2) * g * g
    v_hat = v / (1.0 - b2**k)
    if variant is StrategyKind.ADAM:
        m = b1 * st.adam_m + (1.0 - b1) * g
    elif variant is StrategyKind.ADAM_SA:
        m = b1 * st.adam_m + (1.0 - b1) * (g / tau)
    else:
        # unpenalised Adam step feeds the C estimator
        m_raw = b1 * st.adam_m + (1.0 - b1) * g
        raw_step = (m_raw / (1.0 - b1**k)) / (np.sqrt(v_hat) + eps)
        c_state, G = _gap_for(st, i, raw_step, hyper, mode, layout)
        m = b1 * st.adam_m + ((1.0 - b1) / G) * g
        info.update(_gap_info(G))
    m_hat = m / (1.0 - b1**k)
    theta = st.theta - eta * m_hat / (np.sqrt(v_hat) + eps)
    info["step_scale"] = eta
    new = replace(st, theta=theta, adam_m=m, adam_v=v, iter_array=it, sent=_row(st.sent, i, theta),
                  c_state=c_state, info=info)
    return new, theta


def master_step(kind, state: MasterState, msg: GradientMsg, eta: float, hyper: Hyper,
                mode: GapMode = GapMode.PARAMWISE, layout: LayerLayout | None = None):
    kind = StrategyKind.parse(kind)
    fam = kind.family
    if fam == "momentum":
        return step_momentum_family(kind, state, msg, eta, hyper)
    if fam == "ga":
        return step_ga(state, msg, eta, hyper, mode, layout)
    if fam == "dana":
        return step_dana_family(kind, state, msg, eta, hyper, mode, layout)
    if fam == "adam":
        return step_adam_family(kind, state, msg, eta, hyper, mode, layout)
    raise UnknownStrategyError(str(kind))  # pragma: no cover


def corollary_eta(f1: float, f_star: float, B: int, L: float, K: int, sigma2: float) -> float:
    """Constant ``eta_k/G_k`` for the summed-gradient update: sqrt((f1-f*)/(B L K sigma^2))."""
    if sigma2 <= 0:
        raise ValueError("sigma^2 must be > 0")
    return math.sqrt((f1 - f_star) / (B * L * K * sigma2))
