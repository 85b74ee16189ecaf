"""Random hyperparameter search: uniform draws on linear, log2, or log10
scales, deterministic per (seed, trial_index), with a persisted trial log."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError

SCALES = ("linear", "log2", "log10")


@dataclass(frozen=True)
class SearchEntry:
    name: str
    lower: float
    upper: float
    scale: str = "linear"
    integer: bool = False

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigError(f"{self.name}: scale must be one of {SCALES}, got {self.scale!r}")
        if not self.lower < self.upper:
            raise ConfigError(f"{self.name}: lower {self.lower} must be < upper {self.upper}")
        if self.scale != "linear" and self.lower <= 0:
            raise ConfigError(f"{self.name}: log scales need lower > 0, got {self.lower}")


@dataclass(frozen=True)
class SearchSpace:
    entries: tuple

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ConfigError("search space names must be unique")


def default_space() -> SearchSpace:
    """The standard CNN's search ranges."""
    return SearchSpace(entries=(
        SearchEntry("dropout", 0.0, 0.5, "linear", False),
        SearchEntry("batch_size", 4, 512, "log2", True),
        SearchEntry("kernel_size", 2, 5, "linear", True),
        SearchEntry("learning_rate", 0.001, 0.01, "log10", False),
        SearchEntry("num_conv_layers", 5, 10, "linear", True),
        SearchEntry("pool_size", 3, 4, "linear", True),
        SearchEntry("filters_per_layer", 6, 12, "linear", True),
    ))


def _from_scale(entry: SearchEntry, u: float) -> float:
    if entry.scale == "log2":
        return 2.0 ** u
    if entry.scale == "log10":
        return 10.0 ** u
    return u


def _to_scale(entry: SearchEntry, v: float) -> float:
    if entry.scale == "log2":
        return math.log2(v)
    if entry.scale == "log10":
        return math.log10(v)
    return v


def sample(space: SearchSpace, seed: int, trial_index: int) -> dict:
    """One configuration, uniform on each entry's declared scale.

    Integers round to nearest; batch_size snaps to the nearest power of
    two (nearest on the log2 scale), which also keeps it inside its range.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, trial_index]))
    config: dict = {}
    for entry in space.entries:
        u = rng.uniform(_to_scale(entry, entry.lower), _to_scale(entry, entry.upper))
        if entry.name == "batch_size" and entry.scale == "log2":
            config[entry.name] = int(2 ** round(u))
            continue
        value = _from_scale(entry, u)
        config[entry.name] = int(round(value)) if entry.integer else float(value)
    return config


@dataclass
class TrialResult:
    trial_index: int
    config: dict
    objective: Optional[float]
    status: str  # "ok" or "failed"
    error: Optional[str] = None


def search(space: SearchSpace, budget: int, objective: Callable[[dict], float],
           seed: int = 0, log_path=None) -> list[TrialResult]:
    """Run ``budget`` independent trials and rank them by objective value
    (validation AUROC), descending, ties broken by trial index. Objective
    failures are recorded and rank last; the search continues."""
    if budget < 1:
        raise ConfigError(f"search budget must be >= 1, got {budget}")
    trials = []
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        for index in range(budget):
            config = sample(space, seed, index)
            try:
                value = float(objective(config))
                trial = TrialResult(index, config, value, "ok")
            except Exception as exc:
                trial = TrialResult(index, config, None, "failed",
                                    f"{type(exc).__name__}: {exc}")
            trials.append(trial)
            if log_fh:
                log_fh.write(json.dumps({"trial_index": trial.trial_index,
                                         "config": trial.config,
                                         "objective": trial.objective,
                                         "status": trial.status,
                                         "error": trial.error}, sort_keys=True) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    return sorted(trials, key=lambda t: (-(t.objective if t.objective is not None else -np.inf),
                                         t.trial_index))


def read_trial_log(path) -> list[TrialResult]:
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            trials.append(TrialResult(trial_index=int(raw["trial_index"]), config=raw["config"],
                                      objective=raw["objective"], status=raw["status"],
                                      error=raw.get("error")))
    return trials


def standard_config_from(sampled: dict) -> tuple:
    """Split a sampled configuration into (StandardCnnConfig, TrainConfig)
    field dictionaries; unknown names raise."""
    arch_keys = {"num_conv_layers", "kernel_size", "pool_size", "filters_per_layer", "dropout"}
    train_keys = {"learning_rate", "batch_size"}
    arch = {}
    train = {}
    for key, value in sampled.items():
        if key in arch_keys:
            arch[key] = value
        elif key in train_keys:
            train[key] = value
        else:
            raise ConfigError(f"sampled name {key!r} is not a standard CNN hyperparameter")
    return arch, train
