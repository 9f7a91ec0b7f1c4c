"""PNG reading and writing with fixed encoder settings."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import IngestionError

_PNG_OPTS = {"compress_level": 6, "optimize": False}


def _open(path) -> PILImage.Image:
    path = Path(path)
    try:
        img = PILImage.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: cannot read image ({exc})") from exc
    return img


def read_image(path) -> np.ndarray:
    """8-bit PNG -> float64 ``(H, W, C)`` in [0, 1]."""
    img = _open(path)
    if img.mode not in ("L", "RGB", "RGBA"):
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def write_image(path, x: np.ndarray) -> None:
    x = np.asarray(x)
    q = np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8)
    if q.ndim == 3 and q.shape[-1] == 1:
        q = q[..., 0]
    _save(PILImage.fromarray(q), path)


def read_labels(path) -> np.ndarray:
    img = _open(path)
    if img.mode not in ("L", "P", "I;16", "I"):
        raise IngestionError(f"{path}: label PNG must be single-channel, got mode {img.mode}")
    return np.asarray(img).astype(np.int64)


def write_labels(path, y: np.ndarray) -> None:
    y = np.asarray(y)
    if y.min(initial=0) < 0 or y.max(initial=0) > 255:
        raise ValueError(f"{path}: class indices must fit in 8 bits")
    _save(PILImage.fromarray(y.astype(np.uint8), mode="L"), path)


def write_mask(path, m: np.ndarray) -> None:
    """Boolean raster as a 1-bit PNG."""
    img = PILImage.fromarray((np.asarray(m, dtype=bool) * 255).astype(np.uint8), mode="L").convert("1")
    _save(img, path)


def read_mask(path) -> np.ndarray:
    return np.asarray(_open(path).convert("L")) > 127


def write_uint16(path, ids: np.ndarray) -> None:
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or ids.max(initial=0) > 65535:
        raise ValueError(f"{path}: ids must fit in 16 bits")
    _save(PILImage.fromarray(ids.astype(np.uint16)), path)


def _save(img: PILImage.Image, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        img.save(path, format="PNG", **_PNG_OPTS)
    except OSError as exc:
        raise IngestionError(f"{path}: cannot write image ({exc})") from exc


def list_pngs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError(f"{directory}: directory not found")
    return sorted(directory.glob("*.png"))
