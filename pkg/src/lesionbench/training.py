"""Adam training with early stopping and plateau learning-rate decay, plus
the multi-run orchestration used for run-averaged experiments."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .archive import WeightArchive, load_with_new_head, restore_into
from .autodiff import Tape, Tensor
from .data import AugmentationPolicy, Sample, augment
from .errors import ConfigError, MetricError, TrainingError
from .metrics import MetricsReport, auroc, evaluate_scores
from .models import Model, ModelSpec, build, forward, predict_proba

IMPROVEMENT_EPSILON = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.00977
    batch_size: int = 8
    max_epochs: int = 15
    early_stop_patience: int = 3
    lr_decay_factor: float = 0.4
    lr_patience: int = 1
    seed: int = 0
    monitor: str = "valid_loss"  # or "valid_auroc"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.early_stop_patience < 1 or self.lr_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.monitor not in ("valid_loss", "valid_auroc"):
            raise ConfigError(f"monitor must be valid_loss or valid_auroc, got {self.monitor!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    valid_auroc: float
    lr: float


@dataclass
class RunResult:
    best_weights: WeightArchive
    epoch_log: list
    stopped_epoch: int
    best_epoch: int


@dataclass
class MultiRunResult:
    runs: list        # RunResult or None per run index
    reports: list     # MetricsReport or None per run index
    failures: list    # (run_index, message)


class AdamState:
    """First/second gradient moments per parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}


def adam_step(params: Sequence[tuple[str, Tensor]], grads: dict,
              state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place on the parameter tensors."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, tensor in params:
        g = grads.get(name)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


class PlateauSchedule:
    """Early stopping and step LR decay driven by one monitored value
    (lower is better). Improvement means dropping below the best seen by
    at least IMPROVEMENT_EPSILON; the two patience counters are
    independent, and the decay counter restarts after each decay."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.lr = config.learning_rate
        self.best = np.inf
        self.best_epoch = 0
        self._stop_streak = 0
        self._lr_streak = 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop); self.lr reflects any decay."""
        if self.best - value >= IMPROVEMENT_EPSILON:
            self.best = value
            self.best_epoch = epoch
            self._stop_streak = 0
            self._lr_streak = 0
            return True, False
        self._stop_streak += 1
        self._lr_streak += 1
        if self._lr_streak >= self.config.lr_patience:
            self.lr *= self.config.lr_decay_factor
            self._lr_streak = 0
        return False, self._stop_streak >= self.config.early_stop_patience


def _mean_bce_eval(model: Model, samples: Sequence[Sample]) -> tuple[float, np.ndarray]:
    total = 0.0
    probs = np.empty(len(samples))
    for i, s in enumerate(samples):
        logit = forward(model, s.image, s.static, train_mode=False)
        z = float(logit.data[0])
        total += max(z, 0.0) - z * s.label + np.log1p(np.exp(-abs(z)))
        probs[i] = 1.0 / (1.0 + np.exp(-z))
    return total / len(samples), probs


def fit(model: Model, train_set: Sequence[Sample], valid_set: Sequence[Sample],
        config: TrainConfig, augmentation: Optional[AugmentationPolicy] = None) -> RunResult:
    """Train until the validation signal plateaus (or max_epochs).

    Returns the weights of the best epoch and restores them into the model.
    Batches are seeded shuffles; the final incomplete batch is kept.
    """
    if not train_set or not valid_set:
        raise ConfigError("training and validation sets must be non-empty")
    valid_labels = np.array([s.label for s in valid_set])
    if valid_labels.min() == valid_labels.max():
        raise MetricError("validation set must contain both classes")

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 17]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 29]))
    schedule = PlateauSchedule(config)
    adam = AdamState()
    params = model.parameters()
    log: list[EpochRecord] = []
    best_weights = WeightArchive.from_model(model)
    stopped = 0

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[int(i)] for i in order[start:start + config.batch_size]]
            with Tape() as tape:
                losses = []
                for s in batch:
                    image = augment(s, augmentation, epoch).image if augmentation else s.image
                    logit = forward(model, image, s.static, train_mode=True, rng=dropout_rng)
                    losses.append(ad.bce_with_logits(logit, float(s.label)))
                loss = ad.mean_of(losses)
                tape.backward(loss)
            loss_sum += float(loss.data) * len(batch)
            trainable = [(n, t) for n, t in params if t.requires_grad]
            grads = {n: t.grad for n, t in trainable if t.grad is not None}
            adam_step(trainable, grads, adam, schedule.lr)
            for _, t in params:
                t.zero_grad()

        train_loss = loss_sum / len(train_set)
        valid_loss, probs = _mean_bce_eval(model, valid_set)
        valid_auroc = auroc(probs, valid_labels)
        lr_before = schedule.lr
        monitored = valid_loss if config.monitor == "valid_loss" else -valid_auroc
        improved, should_stop = schedule.update(epoch, monitored)
        log.append(EpochRecord(epoch=epoch, train_loss=train_loss, valid_loss=valid_loss,
                               valid_auroc=valid_auroc, lr=lr_before))
        if improved:
            best_weights = WeightArchive.from_model(model)
        stopped = epoch
        if should_stop:
            break

    restore_into(model, best_weights)
    return RunResult(best_weights=best_weights, epoch_log=log,
                     stopped_epoch=stopped, best_epoch=schedule.best_epoch)


def _run_one(spec: ModelSpec, bundle, config: TrainConfig, run_index: int,
             transfer_archive: Optional[WeightArchive],
             augmentation: Optional[AugmentationPolicy],
             threshold: float) -> tuple[RunResult, MetricsReport]:
    train_set, valid_set, test_set = bundle
    seed = config.seed + run_index
    run_config = replace(config, seed=seed)
    if transfer_archive is not None:
        model = load_with_new_head(transfer_archive, spec, seed)
    else:
        model = build(spec, seed)
    policy = replace(augmentation, seed=seed) if augmentation else None
    result = fit(model, train_set, valid_set, run_config, policy)
    probs = predict_proba(model, test_set)
    labels = [s.label for s in test_set]
    report = evaluate_scores(probs, labels, threshold)
    return result, report


def multi_run(spec: ModelSpec, bundle, config: TrainConfig, n_runs: int = 10,
              transfer_archive: Optional[WeightArchive] = None,
              augmentation: Optional[AugmentationPolicy] = None,
              threshold: float = 0.5, processes: int = 1) -> MultiRunResult:
    """n_runs independent trainings; run i re-seeds everything with
    config.seed + i. Per-run errors are recorded and the remaining runs
    continue. bundle is (train_samples, valid_samples, test_samples)."""
    if n_runs < 1:
        raise ConfigError(f"n_runs must be >= 1, got {n_runs}")
    runs: list = [None] * n_runs
    reports: list = [None] * n_runs
    failures: list = []
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            futures = {i: pool.submit(_run_one, spec, bundle, config, i,
                                      transfer_archive, augmentation, threshold)
                       for i in range(n_runs)}
            for i, fut in futures.items():
                try:
                    runs[i], reports[i] = fut.result()
                except Exception as exc:
                    failures.append((i, f"{type(exc).__name__}: {exc}"))
    else:
        for i in range(n_runs):
            try:
                runs[i], reports[i] = _run_one(spec, bundle, config, i,
                                               transfer_archive, augmentation, threshold)
            except Exception as exc:
                failures.append((i, f"{type(exc).__name__}: {exc}"))
    return MultiRunResult(runs=runs, reports=reports, failures=failures)


# ---------------------------------------------------------------------------
# epoch log file format: one JSON object per line

def write_epoch_log(records: Sequence[EpochRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({"epoch": r.epoch, "train_loss": r.train_loss,
                                 "valid_loss": r.valid_loss, "valid_auroc": r.valid_auroc,
                                 "lr": r.lr}, sort_keys=True) + "\n")


def read_epoch_log(path) -> list[EpochRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            records.append(EpochRecord(epoch=int(raw["epoch"]), train_loss=float(raw["train_loss"]),
                                       valid_loss=float(raw["valid_loss"]),
                                       valid_auroc=float(raw["valid_auroc"]), lr=float(raw["lr"])))
    return records
