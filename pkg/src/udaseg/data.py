"""Synthetic two-domain scenes, augmentation and the on-disk dataset layout.

Layout of a dataset root::

    source/images/*.png       8-bit RGB
    source/labels/*.png       8-bit class indices, stem-matched
    target/images/*.png       unlabeled training split
    target/eval_images/*.png  held-out evaluation split
    target/labels_eval/*.png  labels of the evaluation split only
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imageio
from .errors import ConfigError, IngestionError

SHAPES = ("rect", "disk", "triangle", "ring", "cross")

# sensor-style shift applied to every target image
TARGET_MIX = np.array([[0.80, 0.15, 0.05], [0.10, 0.80, 0.10], [0.05, 0.15, 0.80]])
TARGET_GAMMA = np.array([1.4, 1.1, 0.8])


@dataclass
class DomainDataset:
    images: list
    labels: list | None = None
    stems: list = field(default_factory=list)

    def __post_init__(self):
        if not self.stems:
            self.stems = [f"img{i:04d}" for i in range(len(self.images))]
        if self.labels is not None:
            if len(self.labels) != len(self.images):
                raise ConfigError("dataset: label count does not match image count")
            for i, (x, y) in enumerate(zip(self.images, self.labels)):
                if x.shape[:2] != y.shape:
                    raise ConfigError(f"dataset: image {self.stems[i]} and its label differ in size")

    def __len__(self):
        return len(self.images)


def palette_a(k: int) -> np.ndarray:
    """Source colours: class 0 a muted grey-green, shapes on evenly spaced hues."""
    cols = [(0.45, 0.5, 0.42)]
    for c in range(1, k):
        cols.append(colorsys.hsv_to_rgb((c - 1) / (k - 1), 0.65, 0.8))
    return np.array(cols)


def palette_b(k: int) -> np.ndarray:
    """Target colours: palette A with a per-class hue drift."""
    cols = [(0.5, 0.42, 0.4)]
    for c in range(1, k):
        cols.append(colorsys.hsv_to_rgb(((c - 1) / (k - 1) + 0.04) % 1.0, 0.55, 0.75))
    return np.array(cols)


def _shape_mask(kind: str, h: int, w: int, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    r = rng.uniform(0.08, 0.2) * min(h, w)
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    if kind == "rect":
        ry, rx = r * rng.uniform(0.6, 1.4), r * rng.uniform(0.6, 1.4)
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    if kind == "disk":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    if kind == "triangle":
        # upright isosceles triangle with apex at the top
        top, base = cy - r, cy + r
        half = (yy - top) / (2 * r) * r * 1.2
        return (yy >= top) & (yy <= base) & (np.abs(xx - cx) <= half)
    if kind == "ring":
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    arm = max(1.5, r * 0.35)
    return ((np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= r)) | (
        (np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= r)
    )


def render_scene(k: int, size: int, rng) -> np.ndarray:
    """Label map of background plus randomly placed class shapes."""
    lab = np.zeros((size, size), dtype=np.int64)
    items = [c for c in range(1, k) for _ in range(int(rng.integers(1, 4)))]
    rng.shuffle(items)
    for c in items:
        lab[_shape_mask(SHAPES[(c - 1) % len(SHAPES)], size, size, rng)] = c
    return lab


def _texture(k: int, size: int, rng) -> np.ndarray:
    """Per-class low-amplitude stripe texture, ``(K, H, W)``."""
    yy, xx = np.mgrid[0:size, 0:size]
    tex = np.empty((k, size, size))
    for c in range(k):
        ang = np.pi * c / k
        freq = 0.25 + 0.15 * c
        phase = rng.uniform(0, 2 * np.pi)
        tex[c] = np.sin(freq * (np.cos(ang) * xx + np.sin(ang) * yy) + phase)
    return tex


def paint(lab: np.ndarray, palette: np.ndarray, rng, noise: float = 0.03) -> np.ndarray:
    k = palette.shape[0]
    size = lab.shape[0]
    jitter = rng.uniform(-0.04, 0.04, size=palette.shape)
    base = (palette + jitter)[lab]
    tex = _texture(k, size, rng)
    t = np.take_along_axis(tex, lab[None], axis=0)[0]
    img = base * (1.0 + 0.12 * t[..., None])
    img += rng.normal(0, noise, size=img.shape)
    return img


def to_target_style(img: np.ndarray) -> np.ndarray:
    mixed = np.clip(img @ TARGET_MIX.T, 0.0, 1.0)
    return mixed**TARGET_GAMMA


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def generate_synthetic_pair(seed: int = 0, k: int = 4, n_images: int = 200, size: int = 64, n_eval: int = 50):
    """Returns ``(source, target, target_eval)``.

    ``target`` carries no labels; its labels exist only for ``target_eval``,
    a held-out set of target scenes. Pixels are quantised to 8 bits so that
    the PNG round-trip is lossless.
    """
    if k < 3:
        raise ConfigError("synthetic data needs at least 3 classes")
    if size < 32:
        raise ConfigError("synthetic image size must be >= 32")
    root = np.random.SeedSequence(seed)
    s_rng, t_rng, e_rng = (np.random.default_rng(s) for s in root.spawn(3))
    pa, pb = palette_a(k), palette_b(k)

    def make(rng, n, target):
        imgs, labs = [], []
        for _ in range(n):
            lab = render_scene(k, size, rng)
            img = paint(lab, pb if target else pa, rng)
            if target:
                img = to_target_style(np.clip(img, 0, 1))
            imgs.append(_quantize(img))
            labs.append(lab)
        return imgs, labs

    s_imgs, s_labs = make(s_rng, n_images, False)
    t_imgs, _ = make(t_rng, n_images, True)
    e_imgs, e_labs = make(e_rng, n_eval, True)
    source = DomainDataset(s_imgs, s_labs, [f"src{i:04d}" for i in range(n_images)])
    target = DomainDataset(t_imgs, None, [f"tgt{i:04d}" for i in range(n_images)])
    target_eval = DomainDataset(e_imgs, e_labs, [f"evl{i:04d}" for i in range(n_eval)])
    return source, target, target_eval


def augment(
    x: np.ndarray,
    seed,
    jitter: float = 0.25,
    blur_prob: float = 0.5,
    sigma_range: tuple = (0.15, 1.15),
) -> np.ndarray:
    """Colour jitter (brightness, contrast, saturation) and optional Gaussian blur."""
    rng = np.random.default_rng(seed)
    out = np.asarray(x, dtype=np.float64)
    if jitter > 0:
        b, c, s = rng.uniform(1 - jitter, 1 + jitter, size=3)
        out = np.clip(out * b, 0, 1)
        gray = out.mean(axis=-1, keepdims=True)
        out = np.clip((out - gray.mean()) * c + gray.mean(), 0, 1)
        gray = out.mean(axis=-1, keepdims=True)
        out = np.clip((out - gray) * s + gray, 0, 1)
    if blur_prob > 0 and rng.uniform() < blur_prob:
        sigma = rng.uniform(*sigma_range)
        out = ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0), mode="reflect")
        out = np.clip(out, 0, 1)
    return out


# --- disk layout --------------------------------------------------------------


def save_pair(root, source: DomainDataset, target: DomainDataset, target_eval: DomainDataset) -> None:
    root = Path(root)
    for x, y, stem in zip(source.images, source.labels, source.stems):
        imageio.write_image(root / "source" / "images" / f"{stem}.png", x)
        imageio.write_labels(root / "source" / "labels" / f"{stem}.png", y)
    for x, stem in zip(target.images, target.stems):
        imageio.write_image(root / "target" / "images" / f"{stem}.png", x)
    for x, y, stem in zip(target_eval.images, target_eval.labels, target_eval.stems):
        imageio.write_image(root / "target" / "eval_images" / f"{stem}.png", x)
        imageio.write_labels(root / "target" / "labels_eval" / f"{stem}.png", y)


def load_images(directory) -> DomainDataset:
    paths = imageio.list_pngs(directory)
    if not paths:
        raise IngestionError(f"{directory}: no PNG images")
    return DomainDataset([imageio.read_image(p) for p in paths], None, [p.stem for p in paths])


def load_labelled(image_dir, label_dir) -> DomainDataset:
    ds = load_images(image_dir)
    labels = []
    for stem in ds.stems:
        path = Path(label_dir) / f"{stem}.png"
        if not path.is_file():
            raise IngestionError(f"{path}: missing label for image {stem!r}")
        labels.append(imageio.read_labels(path))
    ds.labels = labels
    ds.__post_init__()
    return ds


def load_source(root) -> DomainDataset:
    root = Path(root)
    return load_labelled(root / "source" / "images", root / "source" / "labels")


def load_target_train(root) -> DomainDataset:
    """Target training images only; no label directory is touched."""
    return load_images(Path(root) / "target" / "images")


def load_target_eval(root) -> DomainDataset:
    root = Path(root)
    return load_labelled(root / "target" / "eval_images", root / "target" / "labels_eval")
