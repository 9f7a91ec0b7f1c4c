"""Pixelwise raster math.

Rasters are plain numpy arrays with channels last:

* image      ``(H, W, C)`` float, nominal range [0, 1]
* prob map   ``(H, W, K)`` float, each pixel sums to 1
* label map  ``(H, W)`` integer class indices in ``[0, K)``
* weight map ``(H, W)`` non-negative float

Every function also accepts a leading batch axis, so ``(N, H, W, K)``
probability maps and ``(N, H, W)`` label maps work unchanged.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, ShapeError

PROB_FLOOR = 1e-12


def check_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ShapeError(f"{name}: expected (H, W, C) array, got shape {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        raise InvalidInputError(f"{name}: expected floating dtype, got {x.dtype}")
    _check_finite(x, name)
    return x


def _check_finite(x: np.ndarray, name: str) -> None:
    bad = ~np.isfinite(x)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InvalidInputError(f"{name}: non-finite value at index {idx}")


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max-subtraction."""
    logits = np.asarray(logits)
    if logits.shape[-1] < 1:
        raise ShapeError("softmax_channels: need at least one class")
    bad = ~np.isfinite(logits)
    if bad.any():
        pixel = tuple(int(i) for i in np.argwhere(bad)[0][:-1])
        raise InvalidInputError(f"softmax_channels: non-finite logit at pixel {pixel}")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_labels(p: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(p, axis=-1).astype(np.int64)


def weighted_cross_entropy(
    p: np.ndarray, y: np.ndarray, w: np.ndarray
) -> tuple[float, np.ndarray]:
    """Pixel-mean weighted cross-entropy and its gradient w.r.t. the logits.

    Args:
        p: softmax probabilities, ``(..., H, W, K)``.
        y: class indices, ``(..., H, W)``.
        w: per-pixel weights, same shape as ``y``.

    Returns:
        ``(loss, grad)`` where ``loss = mean(w * -log p[y])`` and ``grad`` has
        the shape of ``p`` and is ``w * (p - onehot(y)) / n_pixels``.
    """
    p = np.asarray(p)
    y = np.asarray(y)
    w = np.asarray(w)
    if p.shape[:-1] != y.shape or y.shape != w.shape:
        raise ShapeError(
            f"weighted_cross_entropy: prob {p.shape}, labels {y.shape}, weights {w.shape}"
        )
    k = p.shape[-1]
    if y.size and (y.min() < 0 or y.max() >= k):
        raise InvalidInputError(f"weighted_cross_entropy: label outside [0, {k})")
    n = y.size
    picked = np.take_along_axis(p, y[..., None], axis=-1)[..., 0]
    nll = -np.log(np.maximum(picked, PROB_FLOOR))
    loss = float(np.sum(w * nll) / n)
    grad = p.copy()
    np.put_along_axis(grad, y[..., None], picked[..., None] - 1.0, axis=-1)
    grad *= (w / n)[..., None].astype(p.dtype)
    return loss, grad


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"concat_channels: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=-1)


def pixel_entropy(p: np.ndarray) -> np.ndarray:
    """Per-pixel Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)
