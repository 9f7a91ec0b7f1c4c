"""Deterministic source-to-target style transfer.

These stand in for a learned image translator: each method changes colour
statistics only and never touches labels. Externally generated translations
can be supplied through the ``precomputed`` method (PNG files matched by stem).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError, ShapeError
from .imageio import read_image

METHODS = ("identity", "histogram_match", "stats_transfer", "precomputed")


def _check_pair(src, ref):
    if src.ndim != 3 or ref.ndim != 3 or src.shape[-1] != ref.shape[-1]:
        raise ShapeError(f"style transfer: channel mismatch {src.shape} vs {ref.shape}")


def _match_channel(s: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Map each distinct value of ``s`` to the ``r`` quantile at its CDF level."""
    s_vals, inv, s_counts = np.unique(s, return_inverse=True, return_counts=True)
    r_vals, r_counts = np.unique(r, return_counts=True)
    s_cdf = np.cumsum(s_counts) / s.size
    r_cdf = np.cumsum(r_counts) / r.size
    return np.interp(s_cdf, r_cdf, r_vals)[inv.reshape(-1)]


def histogram_match(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-channel monotone remap of ``src`` so its empirical CDF follows ``ref``'s.

    For 8-bit images the distinct values are exactly the 256 histogram bins.
    Equal input values always map to equal outputs.
    """
    _check_pair(src, ref)
    out = np.empty(src.shape, dtype=np.float64)
    for c in range(src.shape[-1]):
        s = src[..., c].reshape(-1).astype(np.float64)
        r = ref[..., c].reshape(-1).astype(np.float64)
        out[..., c] = _match_channel(s, r).reshape(src.shape[:-1])
    return np.clip(out, 0.0, 1.0)


def stats_transfer_raw(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Mean/std matching per channel, before clamping."""
    _check_pair(src, ref)
    s = src.astype(np.float64)
    axes = tuple(range(s.ndim - 1))
    mu_s, sd_s = s.mean(axis=axes), s.std(axis=axes)
    mu_r, sd_r = ref.mean(axis=axes), ref.std(axis=axes)
    return (s - mu_s) * (sd_r / np.maximum(sd_s, 1e-6)) + mu_r


def stats_transfer(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return np.clip(stats_transfer_raw(src, ref), 0.0, 1.0)


def choose_reference(ref_pool, seed) -> int:
    if len(ref_pool) == 0:
        raise ConfigError("style transfer: reference pool is empty")
    return int(np.random.default_rng(seed).integers(len(ref_pool)))


def transfer(
    method: str,
    src: np.ndarray,
    ref_pool=(),
    seed=0,
    stem: str | None = None,
    precomputed_dir=None,
) -> np.ndarray:
    """Apply ``method`` to ``src``; the reference is a seeded draw from ``ref_pool``."""
    if method == "identity":
        return src
    if method == "precomputed":
        if precomputed_dir is None or stem is None:
            raise ConfigError("precomputed transfer needs a directory and a source stem")
        path = Path(precomputed_dir) / f"{stem}.png"
        if not path.is_file():
            raise IngestionError(f"{path}: no precomputed transfer for source stem {stem!r}")
        out = read_image(path)
        if out.shape != src.shape:
            raise ShapeError(f"{path}: shape {out.shape} does not match source {src.shape}")
        return out
    if method not in METHODS:
        raise ConfigError(f"unknown transfer method {method!r}; expected one of {METHODS}")
    ref = ref_pool[choose_reference(ref_pool, seed)]
    if method == "histogram_match":
        return histogram_match(src, ref)
    return stats_transfer(src, ref)
