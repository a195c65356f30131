"""Causal effect estimation for recommendation exposure.

Estimates how much being recommended changes purchase probability, using a
pairwise user/item/treatment factorization trained on interaction logs, and
evaluates estimators against a regression-discontinuity reference built from
browsing positions, with a synthetic-log generator as ground-truth oracle.
"""

__version__ = "0.1.0"

from .data import (
    Dataset,
    DatasetSchema,
    InteractionRecord,
    load_dataset,
    save_dataset,
    split_by_time,
)
from .effects import EffectEstimate, aggregate
from .errors import (
    CausalRecError,
    MetricUndefinedError,
    ParseError,
    RddError,
    TrainingError,
    ValidationError,
)
from .synth import SyntheticWorld, WorldConfig, generate_world, simulate_log

__all__ = [
    "Dataset",
    "DatasetSchema",
    "InteractionRecord",
    "load_dataset",
    "save_dataset",
    "split_by_time",
    "EffectEstimate",
    "aggregate",
    "CausalRecError",
    "MetricUndefinedError",
    "ParseError",
    "RddError",
    "TrainingError",
    "ValidationError",
    "SyntheticWorld",
    "WorldConfig",
    "generate_world",
    "simulate_log",
]
