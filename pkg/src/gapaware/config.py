"""Experiment files: strict parsing, preset defaults and sweep expansion.

Two formats are accepted. The text format is flat ``key = value`` lines
grouped under ``[run]`` and ``[sweep]`` headers; ``#`` starts a comment::

    [run]
    model = mlp1
    strategy = GA
    N = 8
    seed = 1

    [sweep]
    eta0 = 0.01, 0.1
    gamma = 0.0, 0.9

Keys under ``[sweep]`` take comma-separated lists and are expanded as a
Cartesian product over the ``[run]`` block. JSON files use the same keys,
either as ``{"run": {...}, "sweep": {...}}`` or as a flat run object.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .models import ModelSpec
from .simkernel import ExecTimeModel, RunConfig
from .strategies import GapMode, Hyper, StrategyKind


class ConfigError(ValueError):
    pass


# key -> parser. None means "accept as given".
def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    if s is None or str(s).strip().lower() in ("", "none", "null"):
        return None
    return float(s)


def _floats(s):
    if isinstance(s, (list, tuple)):
        return tuple(float(x) for x in s)
    s = str(s).strip()
    return tuple(float(x) for x in s.split(",") if x.strip()) if s else ()


def _str(s):
    return str(s).strip()


KEYS = {
    # model
    "model": _str,
    "input_dim": int,
    "output_dim": int,
    "hidden_dim": int,
    "weight_decay": float,
    "noise_sigma": float,
    "condition": float,
    "separation": float,
    "spread": float,
    # run shape
    "strategy": _str,
    "gap_mode": _str,
    "N": int,
    "M": int,
    "B": int,
    "K": int,
    "epochs": float,
    "seed": int,
    "log_every": int,
    # optimizer
    "eta0": float,
    "eta_max": _opt_float,
    "gamma": float,
    "nesterov": _bool,
    "beta1": float,
    "beta2": float,
    "epsilon": float,
    "warmup_epochs": float,
    "decay_factor": float,
    "decay_milestones": _floats,
    "c_beta": float,
    "c_eps": float,
    "c_fixed": _opt_float,
    "schedule": _str,
    "allow_negative_gamma": _bool,
    # execution times
    "regime": _str,
    "mu_task": _opt_float,
    "v_task": float,
    "v_mach": _opt_float,
}

BASE = {
    "model": "logistic",
    "strategy": "GA",
    "gap_mode": "paramwise",
    "N": 1,
    "M": 1024,
    "seed": 0,
    "log_every": 10,
    "regime": "homogeneous",
    "v_task": 0.1,
}

# Single-worker hyperparameters of the two reference setups: SGD with
# momentum for image classification and Adam for language modelling.
MOMENTUM_PRESET = {
    "eta0": 0.1,
    "gamma": 0.9,
    "B": 128,
    "weight_decay": 5e-4,
    "decay_factor": 0.1,
    "decay_milestones": (80.0, 120.0),
    "epochs": 160.0,
    "warmup_epochs": 5.0,
}

ADAM_PRESET = {
    "eta0": 0.00025,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "B": 64,
    "weight_decay": 0.0,
    "decay_milestones": (),
    "epochs": 160.0,
    "warmup_epochs": 5.0,
}


def preset_for(strategy: str) -> dict:
    family = StrategyKind.parse(strategy).family
    return dict(ADAM_PRESET if family == "adam" else MOMENTUM_PRESET)


def coerce(key: str, value):
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}")
    try:
        return KEYS[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {value!r} ({exc})") from None


@dataclass
class ExperimentFile:
    run: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)  # key -> list of values

    @property
    def is_sweep(self) -> bool:
        return bool(self.sweep)

    def points(self) -> list[dict]:
        """Raw key/value dicts after Cartesian expansion (before defaults)."""
        if not self.sweep:
            return [dict(self.run)]
        keys = list(self.sweep)
        return [{**self.run, **dict(zip(keys, combo))} for combo in itertools.product(*(self.sweep[k] for k in keys))]

    def expand(self) -> list[RunConfig]:
        """Resolved configs, deduplicated by run id with a warning."""
        seen, out = set(), []
        for raw in self.points():
            cfg = resolve(raw)
            rid = run_id(cfg)
            if rid in seen:
                warnings.warn(f"duplicate configuration skipped: {describe(raw)}", stacklevel=2)
                continue
            seen.add(rid)
            out.append(cfg)
        return out


def describe(raw: dict) -> str:
    return ", ".join(f"{k}={raw[k]}" for k in sorted(raw))


def _parse_text(text: str) -> ExperimentFile:
    exp = ExperimentFile()
    section = "run"
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("run", "sweep"):
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        _store(exp, section, key, value)
    return exp


def _store(exp: ExperimentFile, section: str, key: str, value) -> None:
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}")
    if section == "run":
        exp.run[key] = coerce(key, value)
        return
    if isinstance(value, (list, tuple)):
        items = list(value)
    elif key == "decay_milestones":
        # one schedule per ';'-separated entry
        items = [v for v in str(value).split(";")]
    else:
        items = [v for v in str(value).split(",") if v.strip()]
    if not items:
        raise ConfigError(f"sweep key {key!r} has no values")
    exp.sweep[key] = [coerce(key, v) for v in items]


def _parse_json(text: str) -> ExperimentFile:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("top level must be an object")
    exp = ExperimentFile()
    if set(obj) <= {"run", "sweep"} and obj:
        for section in ("run", "sweep"):
            body = obj.get(section, {})
            if not isinstance(body, dict):
                raise ConfigError(f"section {section!r} must be an object")
            for k, v in body.items():
                _store(exp, section, k, v)
    else:
        for k, v in obj.items():
            _store(exp, "run", k, v)
    return exp


def parse_text(text: str, fmt: str = "auto") -> ExperimentFile:
    if fmt == "json" or (fmt == "auto" and text.lstrip().startswith("{")):
        exp = _parse_json(text)
    else:
        exp = _parse_text(text)
    for cfg_raw in exp.points()[:1]:
        resolve(cfg_raw)  # surface invalid values early
    return exp


def parse_config(path) -> ExperimentFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_text(text, "json" if path.suffix == ".json" else "auto")


def resolve(raw: dict) -> RunConfig:
    """Fill defaults and build a validated :class:`RunConfig`."""
    for k in raw:
        if k not in KEYS:
            raise ConfigError(f"unknown key {k!r}")
    strategy = raw.get("strategy", BASE["strategy"])
    try:
        preset = preset_for(strategy)
    except ValueError as exc:
        raise ConfigError(f"invalid value for 'strategy': {exc}") from None
    v = {**BASE, **preset, **raw}
    if "K" in raw and "epochs" in raw:
        raise ConfigError("give either 'K' or 'epochs', not both")
    if "K" not in v:
        v["K"] = max(1, math.ceil(v["epochs"] * v["M"] / v["B"]))
    try:
        model = ModelSpec(
            kind=v["model"],
            **{k: v[k] for k in ("input_dim", "output_dim", "hidden_dim", "weight_decay",
                                 "noise_sigma", "condition", "separation", "spread") if k in v},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model settings: {exc}") from None
    hyper_keys = ("eta0", "eta_max", "gamma", "nesterov", "beta1", "beta2", "epsilon", "warmup_epochs",
                  "decay_factor", "decay_milestones", "c_beta", "c_eps", "c_fixed", "schedule",
                  "allow_negative_gamma")
    try:
        hyper = Hyper(**{k: v[k] for k in hyper_keys if k in v})
    except ValueError as exc:
        raise ConfigError(f"invalid optimizer settings: {exc}") from None
    try:
        exec_model = ExecTimeModel(
            regime=v["regime"],
            mu_task=float(v.get("mu_task") or v["B"]),
            v_task=v["v_task"],
            v_mach=v.get("v_mach"),
        )
        return RunConfig(
            model=model, hyper=hyper, strategy=strategy, gap_mode=GapMode.parse(v["gap_mode"]),
            N=v["N"], M=v["M"], B=v["B"], K=v["K"], exec_model=exec_model, seed=v["seed"],
            log_every=v["log_every"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_id(cfg: RunConfig, mode: str = "async") -> str:
    blob = json.dumps({"config": cfg.to_dict(), "mode": mode, "version": __version__}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def echo(cfg: RunConfig, mode: str = "async") -> str:
    """Canonical, fully-resolved rendering written next to every run."""
    return json.dumps({"config": cfg.to_dict(), "mode": mode, "version": __version__},
                      sort_keys=True, indent=2) + "\n"


def grid_sweep_text(model: str = "mlp1", N: int = 32, strategy: str = "NAG_ASGD") -> str:
    """The 7 x 10 learning-rate/momentum grid used for tuned baselines."""
    return (
        "[run]\n"
        f"model = {model}\nstrategy = {strategy}\nN = {N}\nallow_negative_gamma = true\n"
        "[sweep]\n"
        "eta0 = 0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0\n"
        "gamma = -0.9, -0.5, 0.0, 0.3, 0.5, 0.7, 0.8, 0.9, 0.93, 0.95\n"
    )
