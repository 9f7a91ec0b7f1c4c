"""Dual-domain fusion of a source image with its style-transferred copy.

Two variants:

* CNN fusion: concatenate ``(x_S, x_S->T)`` along channels and apply a
  trainable 3x3 convolution back to ``C`` channels.
* Efficient fusion: score ``k x k`` patches of the student's prediction on
  the transferred image (entropy or SND), threshold at a nearest-rank
  percentile, and paste the selected transferred patches over the source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import grid, layers
from .errors import ConfigError, InvalidInputError, ShapeError

METRICS = ("entropy", "snd")
DIRECTIONS = ("select_low", "select_high")


@dataclass(frozen=True)
class FusionParams:
    c: float = 50.0
    metric: str = "entropy"
    # None picks the metric's natural side: low entropy, high SND
    direction: str | None = None
    snd_temperature: float = 0.05
    patch_size: int = 8

    def __post_init__(self):
        if not 0.0 < self.c <= 100.0:
            raise ConfigError(f"fusion.c must lie in (0, 100], got {self.c}")
        if self.metric not in METRICS:
            raise ConfigError(f"fusion.metric must be one of {METRICS}, got {self.metric!r}")
        if self.direction is None:
            default = "select_low" if self.metric == "entropy" else "select_high"
            object.__setattr__(self, "direction", default)
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"fusion.direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.snd_temperature <= 0:
            raise ConfigError("fusion.snd_temperature must be > 0")
        if self.patch_size < 1:
            raise ConfigError("fusion.patch_size must be >= 1")


# --- CNN fusion ---------------------------------------------------------------


def init_fusion_conv(channels: int, dtype=np.float64) -> dict:
    """3x3 fusion kernel ``(C, 2C, 3, 3)`` initialised to a 50/50 blend."""
    w = np.zeros((channels, 2 * channels, 3, 3), dtype=dtype)
    for c in range(channels):
        w[c, c, 1, 1] = 0.5
        w[c, channels + c, 1, 1] = 0.5
    return {"fusion.w": w, "fusion.b": np.zeros(channels, dtype=dtype)}


def cnn_fuse(fc: dict, x_s: np.ndarray, x_st: np.ndarray):
    """Fused image and a cache for :func:`cnn_fuse_backward`.

    Accepts single images ``(H, W, C)`` or batches ``(N, H, W, C)``.
    """
    x_s = np.asarray(x_s)
    x_st = np.asarray(x_st)
    w, b = fc["fusion.w"], fc["fusion.b"]
    if x_s.shape != x_st.shape:
        raise ShapeError(f"cnn_fuse: {x_s.shape} vs {x_st.shape}")
    if w.shape != (x_s.shape[-1], 2 * x_s.shape[-1], 3, 3):
        raise ShapeError(f"cnn_fuse: kernel {w.shape} does not fit {x_s.shape[-1]} channels")
    single = x_s.ndim == 3
    x_cat = grid.concat_channels(x_s, x_st).astype(w.dtype, copy=False)
    if single:
        x_cat = x_cat[None]
    out, cols = layers.conv2d_forward(x_cat, w, b)
    cache = (x_cat.shape, cols, single)
    return (out[0] if single else out), cache


def cnn_fuse_backward(fc: dict, cache, grad_out):
    """Returns ``(grads, d_x_s, d_x_st)``."""
    x_shape, cols, single = cache
    g = grad_out[None] if single else grad_out
    dx, dw, db = layers.conv2d_backward(g, x_shape, fc["fusion.w"], cols)
    c = x_shape[-1] // 2
    d_s, d_st = dx[..., :c], dx[..., c:]
    if single:
        d_s, d_st = d_s[0], d_st[0]
    return {"fusion.w": dw, "fusion.b": db}, d_s, d_st


def fusion_grad_check(seed: int = 0, size: int = 8) -> float:
    """Worst relative gradient error of the segmentation loss through ``cnn_fuse``.

    Covers the fusion kernel, its bias and both input images, with the
    loss taken through the tiny network in double precision.
    """
    from .model import NetConfig, SegNet, _relative_error, init_params, numeric_grad

    cfg = NetConfig(input_channels=3, classes=3, base_width=4)
    rng = np.random.default_rng(seed)
    net = SegNet(cfg)
    params = init_params(cfg, seed, dtype=np.float64)
    fc = init_fusion_conv(3)
    fc["fusion.w"] = fc["fusion.w"] + rng.normal(0, 0.1, size=fc["fusion.w"].shape)
    fc["fusion.b"] = rng.uniform(-0.1, 0.1, size=3)
    x_s = rng.uniform(0, 1, size=(size, size, 3))
    x_st = rng.uniform(0, 1, size=(size, size, 3))
    y = rng.integers(0, 3, size=(size, size))
    w = rng.uniform(0.5, 1.5, size=(size, size))

    def loss_fn():
        logits, _ = net.forward(params, cnn_fuse(fc, x_s, x_st)[0])
        return grid.weighted_cross_entropy(grid.softmax_channels(logits), y, w)[0]

    x_mix, fcache = cnn_fuse(fc, x_s, x_st)
    logits, cache = net.forward(params, x_mix)
    _, g = grid.weighted_cross_entropy(grid.softmax_channels(logits), y, w)
    _, g_mix = net.backward(params, cache, g)
    grads, d_s, d_st = cnn_fuse_backward(fc, fcache, g_mix)
    pairs = [(grads[k], fc[k]) for k in fc] + [(d_s, x_s), (d_st, x_st)]
    return max(_relative_error(a, numeric_grad(loss_fn, arr, 1e-6)) for a, arr in pairs)


# --- Efficient fusion ---------------------------------------------------------


def patch_bounds(h: int, w: int, k: int):
    """Row/column patch edges; the last patch on each axis may be ragged."""
    ys = list(range(0, h, k)) + [h]
    xs = list(range(0, w, k)) + [w]
    return ys, xs


def snd_score(patch_probs: np.ndarray, tau: float) -> float:
    """Mean row entropy of the temperature-softmaxed self-similarity matrix.

    ``patch_probs`` is ``(n, K)``; the diagonal (self-similarity) is excluded.
    """
    n = patch_probs.shape[0]
    if n < 2:
        return 0.0
    sim = patch_probs @ patch_probs.T / tau
    sim[np.diag_indices(n)] = -np.inf
    sim -= sim.max(axis=1, keepdims=True)
    e = np.exp(sim)
    q = e / e.sum(axis=1, keepdims=True)
    return float(np.mean(grid.pixel_entropy(q)))


def patch_scores(p: np.ndarray, k: int, metric: str = "entropy", tau: float = 0.05) -> np.ndarray:
    """Score every ``k x k`` patch of a probability map ``(H, W, K)``.

    Returns a ``(patches_y, patches_x)`` array.
    """
    h, w, _ = p.shape
    if k < 1 or k > h or k > w:
        raise ConfigError(f"patch size {k} does not fit a {h}x{w} image")
    if metric not in METRICS:
        raise ConfigError(f"unknown patch metric {metric!r}")
    if metric == "entropy":
        ent = grid.pixel_entropy(p)
        if h % k == 0 and w % k == 0:
            return ent.reshape(h // k, k, w // k, k).sum(axis=(1, 3))
        ys, xs = patch_bounds(h, w, k)
        rows = np.add.reduceat(ent, ys[:-1], axis=0)
        return np.add.reduceat(rows, xs[:-1], axis=1)
    ys, xs = patch_bounds(h, w, k)
    out = np.empty((len(ys) - 1, len(xs) - 1))
    for i in range(len(ys) - 1):
        for j in range(len(xs) - 1):
            block = p[ys[i] : ys[i + 1], xs[j] : xs[j + 1]].reshape(-1, p.shape[-1])
            out[i, j] = snd_score(block.astype(np.float64), tau)
    return out


def percentile_threshold(scores: np.ndarray, c: float) -> float:
    """Nearest-rank percentile: the ``ceil(c/100 * N)``-th smallest score."""
    flat = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1))
    if flat.size == 0:
        raise InvalidInputError("percentile_threshold: empty score grid")
    if not 0.0 < c <= 100.0:
        raise ConfigError(f"percentile c must lie in (0, 100], got {c}")
    # c * N first: exact for integer c, so whole ranks never round up
    rank = math.ceil(c * flat.size / 100.0)
    return float(flat[max(rank, 1) - 1])


def build_patch_mask(scores: np.ndarray, t: float, direction: str = "select_low") -> np.ndarray:
    """Boolean patch mask; True takes the transferred patch. Comparisons are strict."""
    if direction == "select_low":
        return np.asarray(scores) < t
    if direction == "select_high":
        return np.asarray(scores) > t
    raise ConfigError(f"unknown selection direction {direction!r}")


def expand_mask(m: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    return np.repeat(np.repeat(m, k, axis=0), k, axis=1)[:h, :w]


def compose_fusion(x_s: np.ndarray, x_st: np.ndarray, m: np.ndarray, k: int) -> np.ndarray:
    if x_s.shape != x_st.shape:
        raise ShapeError(f"compose_fusion: {x_s.shape} vs {x_st.shape}")
    h, w = x_s.shape[:2]
    expected = (-(-h // k), -(-w // k))
    if m.shape != expected:
        raise ShapeError(f"compose_fusion: mask grid {m.shape}, expected {expected} for k={k}")
    pix = expand_mask(m, k, h, w)
    return np.where(pix[..., None], x_st, x_s)


def efficient_fuse(net, params, x_s: np.ndarray, x_st: np.ndarray, fp: FusionParams):
    """Entropy/SND patch fusion of one image pair.

    Returns ``(x_mix, mask)``. No gradient bookkeeping is involved.
    """
    probs = net.predict_proba(params, x_st)
    scores = patch_scores(probs, fp.patch_size, fp.metric, fp.snd_temperature)
    t = percentile_threshold(scores, fp.c)
    mask = build_patch_mask(scores, t, fp.direction)
    return compose_fusion(x_s, x_st, mask, fp.patch_size), mask
