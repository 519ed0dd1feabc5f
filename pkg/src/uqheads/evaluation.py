"""Metrics, the variance-decile analysis, latency timing, and report emission.

Accuracies and the decile table are stored as fractions in [0, 1]; the
terminal renderer multiplies by 100 for display. Energy is summarized as a
closed-form multiply-accumulate count per prediction plus wall-clock seconds
rather than a metered power reading.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, fields

import numpy as np

from . import heads
from .heads import BNN, DNN, SNGP, HeadConfig, Params, UncertainPrediction
from .numerics import RngStream


@dataclass
class EvalReport:
    accuracy: float
    f1: float
    latency_ms_mean: float
    latency_ms_std: float
    k_samples_used: int
    top_decile_accuracy: float
    bottom_decile_accuracy: float
    mean_variance: float
    flop_proxy: int
    wall_seconds: float

    def __post_init__(self):
        for name in ("accuracy", "f1", "top_decile_accuracy", "bottom_decile_accuracy"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.latency_ms_mean < 0.0 or self.latency_ms_std < 0.0:
            raise ValueError("latency statistics must be >= 0")


def _check_pair(preds, labels):
    p = np.asarray(preds)
    y = np.asarray(labels)
    if p.size == 0:
        raise ValueError("need at least one prediction")
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: preds {p.shape}, labels {y.shape}")
    return p, y


def accuracy(preds, labels) -> float:
    """Fraction of predictions equal to their labels."""
    p, y = _check_pair(preds, labels)
    return float(np.mean(p == y))


def f1_binary(preds, labels) -> float:
    """F1 of the positive class; 0 by convention when precision+recall is 0."""
    p, y = _check_pair(preds, labels)
    tp = float(np.sum((p == 1) & (y == 1)))
    fp = float(np.sum((p == 1) & (y == 0)))
    fn = float(np.sum((p == 0) & (y == 1)))
    denom = 2.0 * tp + fp + fn
    if denom == 0.0:
        return 0.0
    return 2.0 * tp / denom


def variance_order(predictions: list[UncertainPrediction]) -> np.ndarray:
    """Indices sorted by ascending variance, original index as tie-break."""
    variances = np.array([p.variance for p in predictions])
    return np.argsort(variances, kind="stable")


def variance_decile_report(predictions: list[UncertainPrediction],
                           labels) -> tuple[float, float, float]:
    """Accuracy on the most- and least-uncertain 10% plus the mean variance.

    Returns (top_decile_accuracy, bottom_decile_accuracy, mean_variance)
    where "top" is the highest-variance decile. Decile size is ceil(n/10).
    """
    n = len(predictions)
    if n < 10:
        raise ValueError(f"need at least 10 predictions, got {n}")
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ValueError(f"labels shape {y.shape} does not match {n} predictions")
    order = variance_order(predictions)
    k = math.ceil(n / 10)
    hard = np.array([p.label for p in predictions])
    bottom = order[:k]
    top = order[-k:]
    return (
        accuracy(hard[top], y[top]),
        accuracy(hard[bottom], y[bottom]),
        float(np.mean([p.variance for p in predictions])),
    )


def timing_benchmark(head_kind: str, params: Params, x, cfg: HeadConfig,
                     repeats: int, rng: RngStream | None = None) -> tuple[float, float]:
    """Wall-clock per-batch prediction latency: mean and sample std in ms.

    One warmup run is excluded. The Bayesian head's time covers all K
    sampled passes, since that is what a prediction costs.
    """
    if repeats < 2:
        raise ValueError(f"timing_benchmark needs repeats >= 2, got {repeats}")
    if rng is None:
        rng = RngStream(0).substream(7)
    heads.predict_with_uncertainty(head_kind, params, x, cfg, rng)  # warmup
    samples = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter()
        heads.predict_with_uncertainty(head_kind, params, x, cfg, rng)
        samples[i] = (time.perf_counter() - t0) * 1e3
    return float(samples.mean()), float(samples.std(ddof=1))


def flop_proxy(head_kind: str, cfg: HeadConfig) -> int:
    """Closed-form multiply-accumulate count for a single prediction.

    Biases count one MAC per neuron: the two-layer dense forward costs
    H*(d+1) for the hidden layer plus H for the output dot product. The
    Bayesian head pays that K times plus one extra pass through the
    perturbation path; the GP head adds the feature map and the D^2
    variance quadratic form.
    """
    d, h, m, k = cfg.input_dim, cfg.hidden, cfg.rff_dim, cfg.k_samples
    dense = h * (d + 1) + h
    if head_kind == DNN:
        return dense
    if head_kind == BNN:
        return (k + 1) * dense
    if head_kind == SNGP:
        return h * (d + 1) + m * (h + 1) + m + m * m
    raise ValueError(f"unknown head kind {head_kind!r}")


def write_report(report: EvalReport, path) -> None:
    """Serialize the report as JSON with a fixed key order and full precision."""
    payload = {f.name: getattr(report, f.name) for f in fields(EvalReport)}
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing report {path}: {exc}") from exc


def read_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return EvalReport(**json.load(fh))


def render_decile_table(rows: list[tuple[str, EvalReport]]) -> str:
    """Terminal table of the decile analysis, accuracies scaled by 100."""
    lines = [f"{'head':<8} {'Top 10%':>10} {'Bot 10%':>10} {'Mean variance':>15}"]
    for name, report in rows:
        lines.append(
            f"{name:<8} {100.0 * report.top_decile_accuracy:>10.3f} "
            f"{100.0 * report.bottom_decile_accuracy:>10.3f} "
            f"{report.mean_variance:>15.3f}"
        )
    return "\n".join(lines)
