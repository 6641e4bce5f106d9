"""Model-ready feature construction.

Feedback matrices become a (K, F_b, 2) tensor of per-element amplitude and
argument channels; CSI becomes a (K, F_h, 1) amplitude target, min-max
normalized per (subcarrier, element) coordinate with statistics fitted on
the training split only. Images are area-average downsampled and scaled
from 8-bit to [0, 1]. Element flattening is row-major everywhere so the
feature axis lines up between inputs and targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .bfm_core import BfmSample
from .sim_scene import CsiSample


@dataclass
class PreprocessedRecord:
    """One model-ready training record."""

    bfm_features: np.ndarray  # (K, F_b, 2)
    image: np.ndarray         # (h, w, 3) in [0, 1]
    target: np.ndarray        # (K, F_h, 1) in [0, 1]


@dataclass
class NormStats:
    """Per-(subcarrier, element) min/max of CSI amplitude on the training split."""

    minimum: np.ndarray  # (K, F_h, 1)
    maximum: np.ndarray  # (K, F_h, 1)

    def __post_init__(self):
        if self.minimum.shape != self.maximum.shape:
            raise ValueError("min/max shapes differ")
        if np.any(self.maximum < self.minimum):
            raise ValueError("max < min in normalization statistics")

    @property
    def degenerate_mask(self) -> np.ndarray:
        return self.maximum == self.minimum

    def to_json_dict(self) -> dict:
        return {
            "shape": list(self.minimum.shape),
            "min": self.minimum.ravel().tolist(),
            "max": self.maximum.ravel().tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NormStats":
        shape = tuple(d["shape"])
        return cls(
            minimum=np.asarray(d["min"], dtype=np.float64).reshape(shape),
            maximum=np.asarray(d["max"], dtype=np.float64).reshape(shape),
        )


def _flatten_angles(values: np.ndarray) -> np.ndarray:
    ang = np.angle(values)
    ang[values == 0] = 0.0
    ang[ang <= -np.pi] = np.pi  # keep arguments in (-pi, pi]
    return ang


def flatten_bfm(bfm: BfmSample) -> np.ndarray:
    """(K, M, S_cols) complex -> (K, F_b, 2) with amplitude/argument channels."""
    v = np.asarray(bfm.bfm)
    k = v.shape[0]
    flat = v.reshape(k, -1)  # row-major over (row, column)
    return np.stack([np.abs(flat), _flatten_angles(flat)], axis=-1)


def flatten_csi_amplitude(csi: CsiSample) -> np.ndarray:
    """(K, N, M) complex -> (K, N*M, 1) amplitude tensor, row-major over (n, m)."""
    h = np.asarray(csi.csi)
    if not np.all(np.isfinite(h.view(float) if np.iscomplexobj(h) else h)):
        raise ValueError("CSI contains non-finite entries")
    k = h.shape[0]
    return np.abs(h).reshape(k, -1, 1)


def fit_norm_stats(targets: Sequence[np.ndarray]) -> NormStats:
    """Coordinate-wise min/max over a nonempty sequence of (K, F_h, 1) targets."""
    arr = np.asarray(targets, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape[0] == 0:
        raise ValueError("cannot fit normalization statistics on an empty split")
    return NormStats(minimum=arr.min(axis=0), maximum=arr.max(axis=0))


def normalize(target: np.ndarray, stats: NormStats) -> np.ndarray:
    """Min-max scale to [0, 1]; degenerate coordinates map to 0, outliers clip."""
    span = stats.maximum - stats.minimum
    safe_span = np.where(span > 0, span, 1.0)
    out = (target - stats.minimum) / safe_span
    out = np.where(span > 0, out, 0.0)
    return np.clip(out, 0.0, 1.0)


def _resample_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic box-filter weights for area averaging."""
    if n_out > n_in:
        raise ValueError(f"upsampling requested ({n_in} -> {n_out}); only downsampling is supported")
    weights = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                weights[i, j] = overlap
    weights /= weights.sum(axis=1, keepdims=True)
    return weights


def downsample_image(image: np.ndarray, out_hw: Tuple[int, int]) -> np.ndarray:
    """Area-average 8-bit H x W x 3 raster to (h, w), scaled to [0, 1] floats."""
    img = np.asarray(image, dtype=np.float64) / 255.0
    h_out, w_out = out_hw
    h_in, w_in = img.shape[0], img.shape[1]
    wy = _resample_weights(h_in, h_out)
    wx = _resample_weights(w_in, w_out)
    rows = np.tensordot(wy, img, axes=(1, 0))          # (h, W, c)
    return np.tensordot(wx, rows, axes=(1, 1)).transpose(1, 0, 2)


def preprocess_dataset(
    csi: np.ndarray,
    bfm: np.ndarray,
    images: np.ndarray,
    train_indices: np.ndarray,
    image_hw: Tuple[int, int] = (96, 96),
):
    """Turn raw dataset arrays into model-ready float32 tensors.

    csi: (n, K, N, M) complex; bfm: (n, K, M, S) complex;
    images: (n, H, W, 3) uint8. Normalization statistics come from
    train_indices only. Returns (bfm_features, images01, targets, stats).
    """
    n, k = csi.shape[0], csi.shape[1]
    flat_bfm = bfm.reshape(n, k, -1)
    feats = np.stack([np.abs(flat_bfm), _flatten_angles(flat_bfm)], axis=-1)

    targets_raw = np.abs(csi).reshape(n, k, -1, 1).astype(np.float64)
    stats = fit_norm_stats(targets_raw[np.asarray(train_indices)])
    targets = normalize(targets_raw, stats).astype(np.float32)

    if images is not None:
        if images.shape[1:3] == tuple(image_hw):
            images01 = (images.astype(np.float32) / 255.0)
        else:
            images01 = np.stack(
                [downsample_image(im, image_hw) for im in images]
            ).astype(np.float32)
    else:
        images01 = None

    return feats.astype(np.float32), images01, targets, stats
