"""Simulated asynchronous SGD with staleness- and gap-aware master updates."""
__version__ = "0.1.0"

from .core import DimensionError, InvalidGapError, LayerLayout, RngStream
from .models import Dataset, ModelSpec
from .simkernel import ExecTimeModel, RunConfig, RunLog, run, run_async, run_sequential, run_ssgd
from .strategies import GapMode, Hyper, StrategyKind
