"""Recomposition error metrics and per-element frequency-series export."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np


@dataclass
class RunMetrics:
    """Across-seed summary of test RMSE for one model kind."""

    kind: str
    per_seed_rmse: List[float]
    mean_rmse: float
    std_rmse: float
    sample_count: Optional[int] = None

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "per_seed_rmse": self.per_seed_rmse,
            "mean_rmse": self.mean_rmse,
            "std_rmse": self.std_rmse,
            "sample_count": self.sample_count,
        }


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Root of the mean squared difference over every tensor entry."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def summarize(per_seed_rmse: Sequence[float], kind: str = "", sample_count: Optional[int] = None) -> RunMetrics:
    """Mean and population standard deviation across seeds (needs >= 2)."""
    values = [float(v) for v in per_seed_rmse]
    if len(values) < 2:
        raise ValueError(f"need at least 2 seeds to summarize, got {len(values)}")
    arr = np.asarray(values, dtype=np.float64)
    return RunMetrics(
        kind=kind,
        per_seed_rmse=values,
        mean_rmse=float(arr.mean()),
        std_rmse=float(arr.std()),  # population std
        sample_count=sample_count,
    )


def mean_baseline_rmse(train_targets: np.ndarray, test_targets: np.ndarray) -> float:
    """RMSE of predicting the per-coordinate training mean for every test sample."""
    train_targets = np.asarray(train_targets, dtype=np.float64)
    test_targets = np.asarray(test_targets, dtype=np.float64)
    mean = train_targets.mean(axis=0, keepdims=True)
    return rmse(np.broadcast_to(mean, test_targets.shape), test_targets)


def element_series(
    truth: np.ndarray, pred: np.ndarray, element_nm, n_tx: int
) -> np.ndarray:
    """Per-subcarrier (k, truth, prediction) rows for one CSI element.

    truth/pred are (K, F_h, 1) tensors in the normalized domain;
    element_nm is a 0-based (receive antenna, transmit antenna) pair that
    maps to the row-major flat element index n * M + m.
    """
    n, m = element_nm
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch: truth {truth.shape} vs pred {pred.shape}")
    f_h = truth.shape[1]
    if not (0 <= m < n_tx):
        raise ValueError(f"transmit index {m} out of range [0, {n_tx})")
    flat = n * n_tx + m
    if not (0 <= flat < f_h):
        raise ValueError(
            f"element ({n}, {m}) maps to flat index {flat}, outside [0, {f_h})"
        )
    k = truth.shape[0]
    rows = np.empty((k, 3))
    rows[:, 0] = np.arange(k)
    rows[:, 1] = truth[:, flat, 0]
    rows[:, 2] = pred[:, flat, 0]
    return rows


def write_element_series_csv(path, rows: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("k,truth,pred\n")
        for k, tr, pr in rows:
            f.write(f"{int(k)},{float(tr)!r},{float(pr)!r}\n")
