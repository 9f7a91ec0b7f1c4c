"""Superpixel boundaries and boundary-boosted pseudo-label weights.

SLIC runs on raw channel values scaled to 0-100 so that the default
compactness of 10 balances colour against position the way it does for
CIELAB input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError

COLOR_SCALE = 100.0
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class PrwParams:
    n_superpixels: int = 0  # 0: (H*W)/256
    compactness: float = 10.0
    iterations: int = 10
    boundary_width: int = 3
    beta: float = 0.5

    def __post_init__(self):
        if self.n_superpixels < 0:
            raise ConfigError("prw.n_superpixels must be >= 0")
        if self.compactness <= 0:
            raise ConfigError("prw.compactness must be > 0")
        if self.iterations < 0:
            raise ConfigError("prw.iterations must be >= 0")
        if self.boundary_width < 1:
            raise ConfigError("prw.boundary_width must be >= 1")
        check_beta(self.beta)

    def target_count(self, h: int, w: int) -> int:
        return self.n_superpixels or max(1, (h * w) // 256)


def check_beta(beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"prw.beta must lie strictly inside (0, 1), got {beta}")


def _grid_shape(n: int, h: int, w: int) -> tuple[int, int]:
    nx = max(1, min(w, math.ceil(math.sqrt(n * w / h) - 1e-9)))
    ny = max(1, min(h, round(n / nx)))
    return ny, nx


def _gradient(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dy = p[2:, 1:-1] - p[:-2, 1:-1]
    dx = p[1:-1, 2:] - p[1:-1, :-2]
    return (dy**2).sum(-1) + (dx**2).sum(-1)


def _seed_centers(img: np.ndarray, ny: int, nx: int) -> np.ndarray:
    """Grid centres moved to the lowest-gradient pixel of their 3x3 neighbourhood.

    A centre stays at its (possibly fractional) grid position unless a
    neighbour has strictly lower gradient.
    """
    h, w, _ = img.shape
    grad = _gradient(img)
    centers = []
    for i in range(ny):
        for j in range(nx):
            cy = (i + 0.5) * h / ny - 0.5
            cx = (j + 0.5) * w / nx - 0.5
            py, px = int(round(cy)), int(round(cx))
            best = grad[py, px]
            by, bx = cy, cx
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = py + dy, px + dx
                    if 0 <= yy < h and 0 <= xx < w and grad[yy, xx] < best:
                        best = grad[yy, xx]
                        by, bx = float(yy), float(xx)
            centers.append((by, bx, *img[int(round(by)), int(round(bx))]))
    return np.array(centers, dtype=np.float64)


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Keep each id's largest 4-connected component; merge the rest.

    Each orphan region joins the adjacent superpixel with the most pixels.
    Ids are then renumbered in raster order of first appearance.
    """
    out = labels.copy()
    for lab in np.unique(labels):
        comp, n = ndimage.label(labels == lab, structure=_FOUR)
        if n <= 1:
            continue
        sizes = np.bincount(comp.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1
        out[(comp > 0) & (comp != keep)] = -1
    if (out < 0).any():
        sizes = np.bincount(out[out >= 0].ravel(), minlength=labels.max() + 1)
        orphans, n = ndimage.label(out < 0, structure=_FOUR)
        for r in range(1, n + 1):
            region = orphans == r
            ring = ndimage.binary_dilation(region, structure=_FOUR) & ~region
            neigh = np.unique(out[ring])
            neigh = neigh[neigh >= 0]
            # ties go to the lowest id
            target = int(neigh[np.argmax(sizes[neigh])])
            out[region] = target
            sizes[target] += int(region.sum())
    _, first = np.unique(out.ravel(), return_index=True)
    order = np.argsort(first)
    remap = np.empty(out.max() + 1, dtype=np.int64)
    remap[np.unique(out.ravel())[order]] = np.arange(order.size)
    return remap[out]


def slic_superpixels(x: np.ndarray, p: PrwParams = PrwParams(), seed: int = 0) -> np.ndarray:
    """SLIC superpixel ids ``(H, W)``, contiguous from 0 and 4-connected.

    The algorithm is deterministic; ``seed`` is accepted for interface
    symmetry with the other pipeline stages.
    """
    h, w, _ = x.shape
    n = p.target_count(h, w)
    if n > h * w:
        raise ConfigError(f"prw.n_superpixels={n} exceeds the {h * w} pixels of the image")
    img = np.asarray(x, dtype=np.float64) * COLOR_SCALE
    ny, nx = _grid_shape(n, h, w)
    s = math.sqrt(h * w / n)
    reach = max(s, h / ny, w / nx)
    centers = _seed_centers(img, ny, nx)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(max(p.iterations, 1)):
        dist = np.full((h, w), np.inf)
        for ci, c in enumerate(centers):
            if np.isnan(c[0]):
                continue
            y0, y1 = max(0, int(math.floor(c[0] - reach))), min(h, int(math.ceil(c[0] + reach)) + 1)
            x0, x1 = max(0, int(math.floor(c[1] - reach))), min(w, int(math.ceil(c[1] + reach)) + 1)
            win = img[y0:y1, x0:x1]
            dc = np.sqrt(((win - c[2:]) ** 2).sum(-1))
            ds = np.hypot(yy[y0:y1, x0:x1] - c[0], xx[y0:y1, x0:x1] - c[1])
            d = dc + p.compactness * ds / s
            sub = dist[y0:y1, x0:x1]
            better = d < sub
            sub[better] = d[better]
            labels[y0:y1, x0:x1][better] = ci
        uncovered = ~np.isfinite(dist)
        if uncovered.any():
            live = np.flatnonzero(~np.isnan(centers[:, 0]))
            d2 = (yy[uncovered][:, None] - centers[live, 0]) ** 2 + (xx[uncovered][:, None] - centers[live, 1]) ** 2
            labels[uncovered] = live[np.argmin(d2, axis=1)]
        if p.iterations == 0:
            break
        counts = np.bincount(labels.ravel(), minlength=len(centers)).astype(np.float64)
        feats = np.concatenate([yy[..., None], xx[..., None], img], axis=-1).reshape(-1, 2 + img.shape[-1])
        sums = np.zeros_like(centers)
        np.add.at(sums, labels.ravel(), feats)
        alive = counts > 0
        centers[alive] = sums[alive] / counts[alive, None]
        centers[~alive] = np.nan
    return _enforce_connectivity(labels)


def boundary_mask(sp: np.ndarray, width: int = 3) -> np.ndarray:
    """Pixels with a differently-labelled pixel within Chebyshev radius ``width // 2``.

    Width 1 uses the 4-neighbourhood. Pixels outside the image are ignored.
    """
    h, w = sp.shape
    r = width // 2
    if r == 0:
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy or dx]
    out = np.zeros((h, w), dtype=bool)
    for dy, dx in offsets:
        ys = slice(max(0, -dy), min(h, h - dy))
        xs = slice(max(0, -dx), min(w, w - dx))
        ys2 = slice(max(0, dy), min(h, h + dy))
        xs2 = slice(max(0, dx), min(w, w + dx))
        out[ys, xs] |= sp[ys, xs] != sp[ys2, xs2]
    return out


def regional_weight_map(w_base: float, mb: np.ndarray, beta: float) -> np.ndarray:
    """``w_base`` everywhere, ``w_base + beta`` on boundary pixels."""
    check_beta(beta)
    return np.where(mb, w_base + beta, w_base).astype(np.float64)


def prw_boundary(x_t: np.ndarray, p: PrwParams, seed: int = 0) -> np.ndarray:
    """Boundary mask of a target image, the cacheable part of PRW."""
    return boundary_mask(slic_superpixels(x_t, p, seed), p.boundary_width)
