"""Small encoder-decoder segmentation network, AdamW and the LR schedule.

Layer stack (width ``w`` throughout, NHWC)::

    enc1  conv3x3 C->w  + ReLU
    enc2  conv3x3 w->w  + ReLU
    enc3  conv3x3 w->w, stride 2 + ReLU
    enc4  conv3x3 w->w  + ReLU
    enc5  conv3x3 w->w  + ReLU
    dec1  nearest 2x upsample, conv3x3 w->w + ReLU
    head  conv1x1 w->K

Parameters live in an insertion-ordered ``dict`` mapping names such as
``"enc1.w"`` to arrays; the order is fixed and shared by the EMA teacher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid, layers
from .errors import ConfigError, ContractError, NumericError, ShapeError

ParamSet = dict  # name -> np.ndarray, fixed order


@dataclass(frozen=True)
class NetConfig:
    input_channels: int = 3
    classes: int = 4
    base_width: int = 16
    activation: str = "relu"  # "relu" or "none" (linear network for checks)

    def __post_init__(self):
        if self.input_channels < 1:
            raise ConfigError("net.input_channels must be >= 1")
        if self.classes < 2:
            raise ConfigError("net.classes must be >= 2")
        if self.base_width < 4:
            raise ConfigError("net.base_width must be >= 4")
        if self.activation not in ("relu", "none"):
            raise ConfigError(f"net.activation must be 'relu' or 'none', got {self.activation!r}")


@dataclass(frozen=True)
class _Layer:
    name: str
    kind: str  # "conv" | "upconv" | "head"
    cin: int
    cout: int
    ksize: int
    stride: int
    relu: bool


def layer_specs(cfg: NetConfig) -> list[_Layer]:
    w = cfg.base_width
    act = cfg.activation == "relu"
    return [
        _Layer("enc1", "conv", cfg.input_channels, w, 3, 1, act),
        _Layer("enc2", "conv", w, w, 3, 1, act),
        _Layer("enc3", "conv", w, w, 3, 2, act),
        _Layer("enc4", "conv", w, w, 3, 1, act),
        _Layer("enc5", "conv", w, w, 3, 1, act),
        _Layer("dec1", "upconv", w, w, 3, 1, act),
        _Layer("head", "head", w, cfg.classes, 1, 1, False),
    ]


def is_encoder_param(name: str) -> bool:
    return name.startswith("enc")


def init_params(cfg: NetConfig, seed: int = 0, dtype=np.float32) -> ParamSet:
    """Uniform fan-in initialisation, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for spec in layer_specs(cfg):
        fan_in = spec.cin * spec.ksize * spec.ksize
        bound = math.sqrt(6.0 / fan_in)
        shape = (spec.cout, spec.cin, spec.ksize, spec.ksize)
        params[f"{spec.name}.w"] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[f"{spec.name}.b"] = np.zeros(spec.cout, dtype=dtype)
    return params


def zeros_like_params(params: ParamSet) -> ParamSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: ParamSet) -> ParamSet:
    return {k: v.copy() for k, v in params.items()}


def check_param_shapes(a: ParamSet, b: ParamSet) -> None:
    if list(a) != list(b):
        raise ShapeError(f"parameter names differ: {list(a)} vs {list(b)}")
    for k in a:
        if a[k].shape != b[k].shape:
            raise ShapeError(f"parameter {k!r}: shape {a[k].shape} vs {b[k].shape}")


@dataclass
class ForwardCache:
    params: ParamSet
    tensors: tuple  # the exact arrays used, for staleness checks
    input_shape: tuple
    entries: list = field(default_factory=list)


class SegNet:
    """Stateless forward/backward for a given :class:`NetConfig`."""

    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.specs = layer_specs(cfg)

    def init_params(self, seed: int = 0, dtype=np.float32) -> ParamSet:
        return init_params(self.cfg, seed, dtype)

    def forward(self, params: ParamSet, x: np.ndarray):
        """Logits for an image ``(H, W, C)`` or a batch ``(N, H, W, C)``.

        Returns ``(logits, cache)``; logits keep the input's spatial size.
        """
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[-1] != self.cfg.input_channels:
            raise ShapeError(
                f"forward: expected {self.cfg.input_channels} input channels, got shape {x.shape}"
            )
        x = x.astype(params["enc1.w"].dtype, copy=False)
        cache = ForwardCache(params, tuple(params.values()), x.shape)
        h = x
        full_hw = x.shape[1:3]
        for spec in self.specs:
            w, b = params[f"{spec.name}.w"], params[f"{spec.name}.b"]
            inp_shape = h.shape
            pre_shape = None
            if spec.kind == "upconv":
                pre_shape = h.shape
                h = layers.upsample2x_forward(h, full_hw)
                inp_shape = h.shape
            out, cols = layers.conv2d_forward(h, w, b, spec.stride)
            if spec.relu:
                out = layers.relu_forward(out)
            cache.entries.append((inp_shape, pre_shape, cols, out))
            h = out
        if single:
            h = h[0]
        return h, cache

    def backward(self, params: ParamSet, cache: ForwardCache, grad_logits, input_grad: bool = True):
        """Backpropagate ``grad_logits`` through the cached forward pass.

        Returns ``(grads, grad_input)``; ``grad_input`` is None unless requested.
        """
        if cache.params is not params or any(
            a is not b for a, b in zip(cache.tensors, params.values())
        ):
            raise ContractError("backward: cache was produced with different parameters")
        if len(cache.entries) != len(self.specs):
            raise ContractError("backward: cache layer count does not match network")
        g = grad_logits
        if g.ndim == 3:
            g = g[None]
        out_last = cache.entries[-1][3]
        if g.shape != out_last.shape:
            raise ContractError(f"backward: grad shape {g.shape} vs logits {out_last.shape}")
        g = g.astype(out_last.dtype, copy=False)
        grads = {}
        for idx in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[idx]
            inp_shape, pre_shape, cols, out = cache.entries[idx]
            w = params[f"{spec.name}.w"]
            if spec.relu:
                g = layers.relu_backward(g, out)
            need_dx = idx > 0 or input_grad
            dx, dw, db = layers.conv2d_backward(g, inp_shape, w, cols, spec.stride, need_dx)
            grads[f"{spec.name}.w"] = dw
            grads[f"{spec.name}.b"] = db
            if spec.kind == "upconv":
                dx = layers.upsample2x_backward(dx, pre_shape)
            g = dx
        ordered = {k: grads[k] for k in params}
        if input_grad and grad_logits.ndim == 3:
            g = g[0]
        return ordered, (g if input_grad else None)

    def predict_proba(self, params: ParamSet, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(params, x)
        return grid.softmax_channels(logits)


def learning_rate(t: int, lr_max: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to ``lr_max`` over ``warmup_steps``, then linear decay to 0."""
    if warmup_steps > 0 and t <= warmup_steps:
        return lr_max * t / warmup_steps
    if total_steps <= warmup_steps:
        return lr_max if t <= warmup_steps else 0.0
    frac = (total_steps - t) / (total_steps - warmup_steps)
    return lr_max * min(max(frac, 0.0), 1.0)


@dataclass
class OptimState:
    """AdamW state with separate encoder/decoder learning rates."""

    lr_encoder: float = 6e-5
    lr_decoder: float = 6e-4
    weight_decay: float = 0.01
    warmup_steps: int = 100
    total_steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    # names outside the default encoder prefix that should use lr_encoder
    encoder_names: frozenset = frozenset()

    def lr_for(self, name: str, t: int | None = None) -> float:
        t = self.step if t is None else t
        base = self.lr_encoder if (is_encoder_param(name) or name in self.encoder_names) else self.lr_decoder
        return learning_rate(t, base, self.warmup_steps, self.total_steps)


def optimizer_step(opt: OptimState, params: ParamSet, grads: ParamSet) -> ParamSet:
    """One decoupled-weight-decay Adam step; returns new parameter arrays."""
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"optimizer_step: unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"optimizer_step: gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"optimizer_step: non-finite gradient for parameter {name!r}")
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    new = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new[name] = p
            continue
        m = opt.m.get(name)
        v = opt.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * (g * g)
        opt.m[name] = m.astype(p.dtype, copy=False)
        opt.v[name] = v.astype(p.dtype, copy=False)
        lr = opt.lr_for(name, t)
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        new[name] = (p * (1.0 - lr * opt.weight_decay) - lr * update).astype(p.dtype, copy=False)
    return new


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, arr: np.ndarray, eps: float) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``arr`` (mutated in place)."""
    out = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return out


def grad_check(cfg: NetConfig | None = None, seed: int = 0, size: int = 8, eps: float | None = None) -> float:
    """Worst relative error between analytic and numeric parameter gradients.

    Uses a random double-precision instance and the weighted cross-entropy
    loss on random labels and weights. Relative error is measured per
    parameter tensor as ``|a - n| / max(|a|, |n|)`` in the 2-norm.
    """
    if cfg is None:
        cfg = NetConfig(input_channels=3, classes=3, base_width=4)
    if eps is None:
        # smooth everywhere, so a larger step trades roundoff for O(eps^2) error
        eps = 1e-5 if cfg.activation == "none" else 1e-6
    rng = np.random.default_rng(seed)
    net = SegNet(cfg)
    params = init_params(cfg, seed, dtype=np.float64)
    for k in params:
        if k.endswith(".b"):
            params[k] = rng.uniform(-0.1, 0.1, size=params[k].shape)
    x = rng.uniform(0, 1, size=(size, size, cfg.input_channels))
    y = rng.integers(0, cfg.classes, size=(size, size))
    w = rng.uniform(0.5, 1.5, size=(size, size))

    def loss_fn():
        logits, _ = net.forward(params, x)
        return grid.weighted_cross_entropy(grid.softmax_channels(logits), y, w)[0]

    logits, cache = net.forward(params, x)
    _, g = grid.weighted_cross_entropy(grid.softmax_channels(logits), y, w)
    grads, _ = net.backward(params, cache, g, input_grad=False)
    worst = 0.0
    for name in params:
        num = numeric_grad(loss_fn, params[name], eps)
        worst = max(worst, _relative_error(grads[name], num))
    return worst


def param_count(params: ParamSet) -> int:
    return int(sum(v.size for v in params.values()))
