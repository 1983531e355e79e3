"""Disparity level estimation by shifting the central view.

For every disparity level the central luma view is displaced towards each
valid view by ``dp * (angular offset)`` and compared with it; the absolute
differences are averaged over views and a box window.  The per-pixel winner
is pooled into one level per coding patch.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .lf_core import LightField, PatchGrid

CONF_DELTA = 1e-6


@dataclass
class CostVolume:
    costs: np.ndarray  # (n_levels, H, W)
    levels: np.ndarray

    @property
    def n_levels(self) -> int:
        return self.costs.shape[0]


@dataclass
class DisparityMap:
    """Per-patch disparity level indices on a :class:`PatchGrid` lattice."""

    levels: np.ndarray  # (grid rows, grid cols) int
    confidence: np.ndarray  # same shape, [0, 1]
    grid_levels: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)
        if self.confidence is None:
            self.confidence = np.zeros(self.levels.shape)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        self.grid_levels = np.asarray(self.grid_levels, dtype=np.float64)
        if self.levels.size and (self.levels.min() < 0 or self.levels.max() >= len(self.grid_levels)):
            raise ValueError("disparity level index out of range")

    def values(self) -> np.ndarray:
        return self.grid_levels[self.levels]


def shift_image(img: np.ndarray, dx: float, dy: float) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear sample ``img(x + dx, y + dy)``; second output marks in-bounds pixels."""
    h, w = img.shape
    fx, fy = math.floor(dx), math.floor(dy)
    ax, ay = dx - fx, dy - fy
    xs = np.arange(w) + fx
    ys = np.arange(h) + fy
    x1_needed = ax > 0
    y1_needed = ay > 0
    vx = (xs >= 0) & (xs + (1 if x1_needed else 0) <= w - 1)
    vy = (ys >= 0) & (ys + (1 if y1_needed else 0) <= h - 1)
    xc0 = np.clip(xs, 0, w - 1)
    xc1 = np.clip(xs + 1, 0, w - 1)
    yc0 = np.clip(ys, 0, h - 1)
    yc1 = np.clip(ys + 1, 0, h - 1)
    top = (1.0 - ax) * img[np.ix_(yc0, xc0)] + ax * img[np.ix_(yc0, xc1)]
    bot = (1.0 - ax) * img[np.ix_(yc1, xc0)] + ax * img[np.ix_(yc1, xc1)]
    out = (1.0 - ay) * top + ay * bot
    return out, vy[:, None] & vx[None, :]


def _central_view(rows: int, cols: int) -> tuple[int, int]:
    if rows % 2 == 0 or cols % 2 == 0:
        raise ValueError("disparity estimation needs a grid with a central view (odd dimensions)")
    return rows // 2, cols // 2


def _level_cost(views: np.ndarray, mask: np.ndarray, center: tuple[int, int], dp: float,
                window: int) -> np.ndarray:
    rows, cols, h, w = views.shape
    sc, tc = center
    ref = views[sc, tc]
    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for s in range(rows):
        for t in range(cols):
            if not mask[s, t] or (s, t) == center:
                continue
            shifted, valid = shift_image(ref, dp * (s - sc), dp * (t - tc))
            total += np.where(valid, np.abs(views[s, t] - shifted), 0.0)
            count += valid
    if window > 0:
        size = 2 * window + 1
        total = ndimage.uniform_filter(total, size, mode="constant")
        count = ndimage.uniform_filter(count, size, mode="constant")
    return np.where(count > 1e-9, total / np.maximum(count, 1e-9), 0.0)


def build_cost_volume(lf, levels, window: int = 2, mask: np.ndarray | None = None,
                      threads: int = 1) -> CostVolume:
    """Cost volume over the light field's luma (or a ``(rows, cols, H, W)`` array).

    Each level is independent, so levels may be computed on worker threads;
    results are written back by level index and do not depend on ``threads``.
    """
    if isinstance(lf, LightField):
        views, mask = lf.y, lf.valid_mask if mask is None else mask
    else:
        views = lf
        mask = np.ones(views.shape[:2], dtype=bool) if mask is None else mask
    views = np.asarray(views, dtype=np.float64)
    center = _central_view(*views.shape[:2])
    levels = np.asarray(levels, dtype=np.float64)

    def run(dp):
        return _level_cost(views, mask, center, float(dp), window)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            slices = list(ex.map(run, levels))
    else:
        slices = [run(dp) for dp in levels]
    return CostVolume(np.stack(slices), levels)


def winner_take_all(cv: CostVolume | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel argmin level (ties to the smaller index) and confidence.

    Confidence is ``(c2 - c_min) / (c2 + delta)`` where ``c2`` is the best cost
    among levels at least two steps from the winner, so a flat cost curve
    scores 0 and a sharp, isolated minimum scores close to 1.
    """
    costs = cv.costs if isinstance(cv, CostVolume) else np.asarray(cv, dtype=np.float64)
    n = costs.shape[0]
    best = np.argmin(costs, axis=0)
    cmin = np.take_along_axis(costs, best[None], axis=0)[0]
    idx = np.arange(n).reshape((n,) + (1,) * (costs.ndim - 1))
    far = np.abs(idx - best[None]) >= 2
    c2 = np.where(far, costs, np.inf).min(axis=0)
    c2 = np.where(np.isfinite(c2), c2, cmin)
    conf = np.clip((c2 - cmin) / (c2 + CONF_DELTA), 0.0, 1.0)
    return best.astype(np.int64), conf


def to_patch_map(levels: np.ndarray, confidence: np.ndarray, grid: PatchGrid,
                 grid_levels) -> DisparityMap:
    """Confidence-weighted mode of pixel levels inside each patch."""
    n = len(grid_levels)
    p = grid.patch_size
    rows, cols = grid.shape
    out = np.zeros((rows, cols), dtype=np.int64)
    conf = np.zeros((rows, cols))
    for i, y in enumerate(grid.ys):
        for j, x in enumerate(grid.xs):
            lv = levels[y:y + p, x:x + p].ravel()
            cf = confidence[y:y + p, x:x + p].ravel()
            hist = np.bincount(lv, weights=cf, minlength=n)
            if not hist.any():
                hist = np.bincount(lv, minlength=n)
            out[i, j] = int(np.argmax(hist))
            conf[i, j] = cf.mean()
    return DisparityMap(out, conf, np.asarray(grid_levels, dtype=np.float64))


def median_filter_levels(dmap: DisparityMap, radius: int = 1) -> DisparityMap:
    size = 2 * radius + 1
    filtered = ndimage.median_filter(dmap.levels, size=size, mode="nearest")
    return DisparityMap(filtered, dmap.confidence.copy(), dmap.grid_levels)


def estimate_disparity(lf: LightField, grid_levels, grid: PatchGrid, window: int = 2,
                       median: bool = True, threads: int = 1) -> DisparityMap:
    """Full estimation pipeline on the luma of all valid views."""
    cv = build_cost_volume(lf, grid_levels, window, threads=threads)
    lv, conf = winner_take_all(cv)
    dmap = to_patch_map(lv, conf, grid, grid_levels)
    return median_filter_levels(dmap) if median else dmap


def write_pgm(path: str, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(path, format="PPM")


def dump_disparity(dmap: DisparityMap, prefix: str) -> tuple[str, str]:
    """Write ``<prefix>_levels.pgm`` (raw indices) and ``<prefix>_confidence.pgm``."""
    lv_path, cf_path = f"{prefix}_levels.pgm", f"{prefix}_confidence.pgm"
    write_pgm(lv_path, dmap.levels)
    write_pgm(cf_path, np.clip(np.floor(dmap.confidence * 255 + 0.5), 0, 255))
    return lv_path, cf_path
