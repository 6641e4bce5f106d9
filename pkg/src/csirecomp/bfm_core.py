"""Beamforming-feedback emulation by per-subcarrier SVD.

A feedback matrix is the right-singular matrix of the channel slice at
each subcarrier, kept in economy form (min(M, N) columns). Singular
vectors carry a per-column unit-phase ambiguity, so every column is
rotated to make its largest-magnitude entry real and non-negative; this
makes emulated feedback deterministic across linear-algebra backends and
invariant to positive rescaling of the channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .sim_scene import CsiSample

UNITARITY_TOL = 1e-9


@dataclass
class SvdFactors:
    """Full factorization of one subcarrier slice: H = U @ diag(S) @ V^H."""

    U: np.ndarray  # (N, N) complex
    S: np.ndarray  # (min(M, N),) real, nonincreasing
    V: np.ndarray  # (M, min(M, N)) complex

    def reconstruct(self) -> np.ndarray:
        k = len(self.S)
        return self.U[:, :k] @ np.diag(self.S) @ self.V.conj().T


@dataclass
class BfmSample:
    """Phase-canonicalized feedback tensor, shape (K, M, S_cols)."""

    t: int
    bfm: np.ndarray


def svd_per_subcarrier(csi: CsiSample) -> List[SvdFactors]:
    """Full SVD of every subcarrier slice, computed in complex128."""
    h = np.asarray(csi.csi, dtype=np.complex128)
    if h.ndim != 3:
        raise ValueError(f"CSI tensor must be (K, N, M), got shape {h.shape}")
    if not np.all(np.isfinite(h.view(float))):
        raise ValueError("CSI contains non-finite entries")
    u, s, vh = np.linalg.svd(h, full_matrices=True)
    k = min(h.shape[1], h.shape[2])
    return [
        SvdFactors(U=u[i], S=s[i], V=vh[i][:k].conj().T)
        for i in range(h.shape[0])
    ]


def canonicalize(v: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real non-negative.

    Magnitude ties break toward the lowest row index; all-zero columns pass
    through unchanged. Idempotent.
    """
    v = np.asarray(v, dtype=np.complex128)
    out = v.copy()
    mags = np.abs(v)
    lead = np.argmax(mags, axis=0)  # first occurrence wins ties
    for col in range(v.shape[1]):
        pivot = v[lead[col], col]
        mag = abs(pivot)
        if mag > 0:
            out[:, col] *= pivot.conjugate() / mag
    return out


def _canonicalize_stack(v: np.ndarray) -> np.ndarray:
    """canonicalize() over a stacked (K, M, S) tensor, vectorized."""
    mags = np.abs(v)
    lead = np.argmax(mags, axis=1)  # (K, S)
    pivots = np.take_along_axis(v, lead[:, None, :], axis=1)[:, 0, :]  # (K, S)
    mag = np.abs(pivots)
    phase = np.where(mag > 0, np.conj(pivots) / np.where(mag > 0, mag, 1.0), 1.0)
    return v * phase[:, None, :]


def emulate_bfm(csi: CsiSample) -> BfmSample:
    """Canonical economy-form right-singular tensor of a CSI sample."""
    h = np.asarray(csi.csi, dtype=np.complex128)
    if h.ndim != 3:
        raise ValueError(f"CSI tensor must be (K, N, M), got shape {h.shape}")
    if not np.all(np.isfinite(h.view(float))):
        raise ValueError("CSI contains non-finite entries")
    s_cols = min(h.shape[1], h.shape[2])
    _, _, vh = np.linalg.svd(h, full_matrices=False)
    v = np.conj(np.transpose(vh[:, :s_cols, :], (0, 2, 1)))  # (K, M, S_cols)
    return BfmSample(t=csi.t, bfm=_canonicalize_stack(v))


def emulate_bfm_batch(csi_batch: np.ndarray) -> np.ndarray:
    """emulate_bfm over a stacked (n, K, N, M) tensor -> (n, K, M, S_cols)."""
    h = np.asarray(csi_batch, dtype=np.complex128)
    if h.ndim != 4:
        raise ValueError(f"CSI batch must be (n, K, N, M), got shape {h.shape}")
    n, k, n_rx, n_tx = h.shape
    s_cols = min(n_rx, n_tx)
    flat = h.reshape(n * k, n_rx, n_tx)
    if not np.all(np.isfinite(flat.view(float))):
        raise ValueError("CSI contains non-finite entries")
    _, _, vh = np.linalg.svd(flat, full_matrices=False)
    v = np.conj(np.transpose(vh[:, :s_cols, :], (0, 2, 1)))
    return _canonicalize_stack(v).reshape(n, k, n_tx, s_cols)
