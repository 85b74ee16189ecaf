"""Classification metrics, run aggregation, and significance testing.

All functions are pure. Scores are probabilities (or any monotone score);
labels are 0/1. AUROC is the trapezoidal area over the exact threshold
sweep, which equals the Mann-Whitney statistic with ties counted half.
AUPRC is the average-precision step form (no linear interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import MetricError

METRIC_FIELDS = ("accuracy", "auroc", "auprc", "f1")


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    auroc: float
    auprc: float
    f1: float
    n_test: int
    threshold: float = 0.5


@dataclass(frozen=True)
class AggregateReport:
    means: dict
    half_widths: dict
    n_runs: int


@dataclass(frozen=True)
class SignificanceResult:
    t_statistic: float
    degrees_freedom: float
    p_one_tailed: float
    direction: str  # "a", "b", or "tie"


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) sweep over all distinct thresholds, descending; starts at
    (0,0) and ends at (1,1). Prediction rule at threshold t is score >= t."""
    s, y = _as_arrays(scores, labels)
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        raise MetricError("ROC needs both classes present")
    points = [(0.0, 0.0)]
    for t in np.unique(s)[::-1]:
        hit = s >= t
        tpr = float((hit & (y == 1)).sum()) / pos
        fpr = float((hit & (y == 0)).sum()) / neg
        points.append((fpr, tpr))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


def auroc(scores, labels) -> float:
    pts = roc_points(scores, labels)
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    return float(np.trapezoid(ys, xs))


def pr_points(scores, labels) -> list[tuple[float, float]]:
    """(recall, precision) sweep over descending thresholds, anchored at (0,1)."""
    s, y = _as_arrays(scores, labels)
    pos = int(y.sum())
    if pos == 0:
        raise MetricError("PR curve needs at least one positive label")
    points = [(0.0, 1.0)]
    for t in np.unique(s)[::-1]:
        hit = s >= t
        tp = float((hit & (y == 1)).sum())
        fp = float((hit & (y == 0)).sum())
        points.append((tp / pos, tp / (tp + fp)))
    return points


def auprc(scores, labels) -> float:
    pts = pr_points(scores, labels)
    area = 0.0
    prev_r = 0.0
    for r, p in pts[1:]:
        area += (r - prev_r) * p
        prev_r = r
    return float(area)


def accuracy_f1(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    s, y = _as_arrays(scores, labels)
    pred = (s >= threshold).astype(np.int64)
    acc = float((pred == y).mean())
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return acc, f1


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    acc, f1 = accuracy_f1(scores, labels, threshold)
    return MetricsReport(accuracy=acc, auroc=auroc(scores, labels),
                         auprc=auprc(scores, labels), f1=f1,
                         n_test=len(labels), threshold=threshold)


def aggregate(reports: Sequence[MetricsReport]) -> AggregateReport:
    """Mean and 95% t-interval half-width per metric across runs (n >= 2)."""
    n = len(reports)
    if n < 2:
        raise MetricError(f"aggregation needs at least 2 reports, got {n}")
    quantile = float(stats.t.ppf(0.975, n - 1))
    means = {}
    half_widths = {}
    for name in METRIC_FIELDS:
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        means[name] = float(values.mean())
        half_widths[name] = float(quantile * values.std(ddof=1) / np.sqrt(n))
    return AggregateReport(means=means, half_widths=half_widths, n_runs=n)


def one_tailed_t_test(a: Sequence[float], b: Sequence[float],
                      paired: bool = False) -> SignificanceResult:
    """Test H1: mean(b) > mean(a). Welch's unequal-variance form by default;
    paired=True runs the paired t-test on elementwise differences."""
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    if len(xa) < 2 or len(xb) < 2:
        raise MetricError("t-test needs at least 2 values per sample")
    if paired:
        if len(xa) != len(xb):
            raise MetricError("paired t-test needs equal-length samples")
        d = xb - xa
        sd = d.std(ddof=1)
        df = float(len(d) - 1)
        if sd == 0.0:
            t = 0.0 if d.mean() == 0.0 else np.inf * np.sign(d.mean())
        else:
            t = float(d.mean() / (sd / np.sqrt(len(d))))
    else:
        va = xa.var(ddof=1) / len(xa)
        vb = xb.var(ddof=1) / len(xb)
        diff = xb.mean() - xa.mean()
        if va + vb == 0.0:
            # degenerate: both samples constant; conventional df, p=0.5 on equality
            t = 0.0 if diff == 0.0 else np.inf * np.sign(diff)
            df = float(len(xa) + len(xb) - 2)
        else:
            t = float(diff / np.sqrt(va + vb))
            df = float((va + vb) ** 2 /
                       (va ** 2 / (len(xa) - 1) + vb ** 2 / (len(xb) - 1)))
    p = float(stats.t.sf(t, df))
    if xb.mean() > xa.mean():
        direction = "b"
    elif xb.mean() < xa.mean():
        direction = "a"
    else:
        direction = "tie"
    return SignificanceResult(t_statistic=float(t), degrees_freedom=df,
                              p_one_tailed=p, direction=direction)


# ---------------------------------------------------------------------------
# file formats: "key = value" reports and two-column CSV curves

def _write_kv(pairs, path) -> None:
    # float(v) normalizes numpy scalars so repr() emits a parseable literal
    lines = [f"{k} = {float(v)!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
             for k, v in pairs]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def _read_kv(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if " = " not in line:
                raise MetricError(f"malformed report line: {line!r}")
            key, value = line.split(" = ", 1)
            out[key] = value
    return out


def write_report(report: MetricsReport, path) -> None:
    _write_kv([("accuracy", report.accuracy), ("auroc", report.auroc),
               ("auprc", report.auprc), ("f1", report.f1),
               ("n_test", report.n_test), ("threshold", report.threshold)], path)


def read_report(path) -> MetricsReport:
    raw = _read_kv(path)
    try:
        return MetricsReport(accuracy=float(raw["accuracy"]), auroc=float(raw["auroc"]),
                             auprc=float(raw["auprc"]), f1=float(raw["f1"]),
                             n_test=int(raw["n_test"]), threshold=float(raw["threshold"]))
    except KeyError as exc:
        raise MetricError(f"report {path} is missing field {exc}") from exc


def write_aggregate(agg: AggregateReport, path) -> None:
    pairs = []
    for name in METRIC_FIELDS:
        pairs.append((f"{name}_mean", agg.means[name]))
        pairs.append((f"{name}_half_width_95", agg.half_widths[name]))
    pairs.append(("n_runs", agg.n_runs))
    _write_kv(pairs, path)


def read_aggregate(path) -> AggregateReport:
    raw = _read_kv(path)
    try:
        means = {name: float(raw[f"{name}_mean"]) for name in METRIC_FIELDS}
        half = {name: float(raw[f"{name}_half_width_95"]) for name in METRIC_FIELDS}
        return AggregateReport(means=means, half_widths=half, n_runs=int(raw["n_runs"]))
    except KeyError as exc:
        raise MetricError(f"aggregate {path} is missing field {exc}") from exc


def write_curve(points, path, header: tuple[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{header[0]},{header[1]}\n")
        for x, y in points:
            fh.write(f"{x!r},{y!r}\n")


def read_curve(path) -> list[tuple[float, float]]:
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            x, y = line.strip().split(",")
            points.append((float(x), float(y)))
    return points
