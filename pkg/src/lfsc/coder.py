"""Coding regions, key views and disparity-guided sparse approximation.

The 15x15 view grid is covered by four 8x8 coding regions sharing the middle
row and column.  Five key views (the centre plus four on the shared row and
column) are the only measurements: for each patch, OMP fits the key-view
pixels with the dictionary segment selected by the patch's disparity level,
and the fitted coefficients synthesise the patch in all 64 views of the
region.  Encoder and decoder run exactly this code on identical inputs, so
coefficients never need to be transmitted.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .dictionary import REGION_DIM, LfDictionary
from .disparity import DisparityMap
from .lf_core import PatchGrid, assemble_overlap_average, round_half_up

GRID_DIM = 15
DEFAULT_EPS = 5.0
DEFAULT_MAX_COEFFS = 30
MID_GRAY = 128.0
# squared pivot below which a new column is treated as linearly dependent
CHOL_TOL = 1e-10


class CoderError(ValueError):
    pass


@dataclass(frozen=True)
class CodingRegion:
    """An 8x8 window of the view grid; ``rows``/``cols`` are 0-based half-open."""

    id: int
    rows: tuple
    cols: tuple
    skv_ids: tuple = ()

    def contains(self, view: tuple[int, int]) -> bool:
        s, t = view
        return self.rows[0] <= s < self.rows[1] and self.cols[0] <= t < self.cols[1]

    def local(self, view: tuple[int, int]) -> tuple[int, int]:
        return view[0] - self.rows[0], view[1] - self.cols[0]

    def slot(self, view: tuple[int, int]) -> int:
        i, j = self.local(view)
        return i * REGION_DIM + j

    @property
    def views(self) -> list[tuple[int, int]]:
        return [(s, t) for s in range(*self.rows) for t in range(*self.cols)]


@dataclass(frozen=True)
class SkvLayout:
    """Key view coordinates (0-based): centre first, then the four cross views."""

    views: tuple = ((7, 7), (1, 7), (7, 1), (7, 13), (13, 7))

    @property
    def center(self) -> tuple[int, int]:
        return self.views[0]


def segment_regions(rows: int = GRID_DIM, cols: int = GRID_DIM,
                    layout: SkvLayout | None = None) -> list[CodingRegion]:
    if (rows, cols) != (GRID_DIM, GRID_DIM):
        raise CoderError(f"coding regions are defined for a {GRID_DIM}x{GRID_DIM} grid, got {rows}x{cols}")
    lo = (0, REGION_DIM)
    hi = (GRID_DIM - REGION_DIM, GRID_DIM)
    windows = [(lo, lo), (lo, hi), (hi, lo), (hi, hi)]
    layout = layout or SkvLayout()
    regions = []
    for i, (r, c) in enumerate(windows):
        base = CodingRegion(i, r, c)
        skvs = tuple(v for v in layout.views if base.contains(v))
        regions.append(CodingRegion(i, r, c, skvs))
    validate_layout(regions, layout)
    return regions


def validate_layout(regions: list[CodingRegion], layout: SkvLayout) -> None:
    if len(set(layout.views)) != len(layout.views):
        raise CoderError("duplicate key views")
    for reg in regions:
        if len(reg.skv_ids) != 3:
            raise CoderError(f"region {reg.id} sees {len(reg.skv_ids)} key views, expected 3")
    for v in layout.views:
        if v[0] in (0, GRID_DIM - 1) or v[1] in (0, GRID_DIM - 1):
            raise CoderError(f"key view {v} lies on the vignetted outer ring")


def skv_extractor(region: CodingRegion, layout: SkvLayout | None = None) -> tuple[int, ...]:
    """Region-local view slots of the region's key views, ascending."""
    skvs = region.skv_ids
    if layout is not None:
        skvs = tuple(v for v in layout.views if region.contains(v))
    return tuple(sorted(region.slot(v) for v in skvs))


def slot_rows(slots, patch_size: int = 8) -> np.ndarray:
    p2 = patch_size * patch_size
    return np.concatenate([np.arange(s * p2, (s + 1) * p2) for s in slots])


def apply_phi(vector: np.ndarray, slots, patch_size: int = 8) -> np.ndarray:
    """Key-view measurement ``k = Phi l`` of a full region vector."""
    return np.asarray(vector)[slot_rows(slots, patch_size)]


def embed_phi(measurement: np.ndarray, slots, n_views: int = 64, patch_size: int = 8) -> np.ndarray:
    out = np.zeros(n_views * patch_size * patch_size)
    out[slot_rows(slots, patch_size)] = measurement
    return out


# ---------------------------------------------------------------------------
# OMP
# ---------------------------------------------------------------------------


@dataclass
class PatchPlan:
    """Sparse code of one patch (internal, never serialised)."""

    level: int
    atoms: tuple
    coeffs: np.ndarray
    residual_norm: float
    history: list = field(default_factory=list)


def omp_segment(k: np.ndarray, Dn: np.ndarray, eps: float = DEFAULT_EPS,
                max_coeffs: int = DEFAULT_MAX_COEFFS, level: int = -1) -> PatchPlan:
    """Orthogonal matching pursuit over one normalised segment.

    Stops once ``||r|| <= eps * sqrt(len(k))`` or ``max_coeffs`` atoms are in
    use.  Ties in correlation go to the lowest column index.  The least
    squares refit uses an incrementally grown Cholesky factor of the support
    Gram matrix; a column whose pivot collapses is dropped and pursuit ends.
    """
    k = np.asarray(k, dtype=np.float64)
    knorm = float(np.sqrt(k @ k))
    thresh = eps * math.sqrt(k.shape[0])
    if knorm == 0.0:
        return PatchPlan(level, (), np.zeros(0), 0.0, [0.0])
    support: list[int] = []
    L = np.zeros((max_coeffs, max_coeffs))
    b = np.zeros(max_coeffs)
    coef = np.zeros(0)
    r = k
    rnorm = knorm
    history = [rnorm]
    while rnorm > thresh and len(support) < max_coeffs:
        corr = Dn.T @ r
        if support:
            corr[support] = 0.0
        j = int(np.argmax(np.abs(corr)))
        if abs(corr[j]) <= 1e-12 * knorm:
            break
        t = len(support)
        dj = Dn[:, j]
        if t:
            w = solve_triangular(L[:t, :t], Dn[:, support].T @ dj, lower=True, check_finite=False)
            piv = 1.0 - float(w @ w)
        else:
            w = np.zeros(0)
            piv = float(dj @ dj)
        if piv <= CHOL_TOL:
            break
        L[t, :t] = w
        L[t, t] = math.sqrt(piv)
        b[t] = dj @ k
        support.append(j)
        n = t + 1
        z = solve_triangular(L[:n, :n], b[:n], lower=True, check_finite=False)
        coef = solve_triangular(L[:n, :n].T, z, lower=False, check_finite=False)
        r = k - Dn[:, support] @ coef
        rnorm = float(np.sqrt(r @ r))
        history.append(rnorm)
    return PatchPlan(level, tuple(support), coef, rnorm, history)


# ---------------------------------------------------------------------------
# region approximation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoderParams:
    patch_size: int = 8
    stride: int = 4
    eps: float = DEFAULT_EPS
    max_coeffs: int = DEFAULT_MAX_COEFFS
    layout: SkvLayout = SkvLayout()

    def __post_init__(self):
        # header stores eps as float32; keep both ends on the same value
        object.__setattr__(self, "eps", float(np.float32(self.eps)))
        if not 1 <= self.max_coeffs <= 255:
            raise CoderError("max_coeffs must be in 1..255")


def chroma_patch_levels(levels: np.ndarray, luma_grid: PatchGrid, chroma_grid: PatchGrid) -> np.ndarray:
    """Level for each chroma patch: the luma patch whose centre is nearest to
    the chroma patch centre mapped to luma coordinates (ties to lower index)."""
    half = luma_grid.patch_size / 2.0
    lx = np.array(luma_grid.xs) + half
    ly = np.array(luma_grid.ys) + half
    ch = chroma_grid.patch_size / 2.0
    out = np.zeros(chroma_grid.shape, dtype=np.int64)
    for i, y in enumerate(chroma_grid.ys):
        li = int(np.argmin(np.abs(ly - 2.0 * (y + ch))))
        for j, x in enumerate(chroma_grid.xs):
            lj = int(np.argmin(np.abs(lx - 2.0 * (x + ch))))
            out[i, j] = levels[li, lj]
    return out


def _code_patch(args):
    k, dn, scale, seg, eps, max_coeffs, level = args
    plan = omp_segment(k, dn, eps, max_coeffs, level)
    if plan.atoms:
        atoms = list(plan.atoms)
        vec = (plan.coeffs / scale[atoms]) @ seg[atoms]
    else:
        vec = np.zeros(seg.shape[1])
    return plan, vec + MID_GRAY


def approximate_region(views: np.ndarray, region: CodingRegion, dictionary: LfDictionary,
                       patch_levels: np.ndarray, grid: PatchGrid, eps: float = DEFAULT_EPS,
                       max_coeffs: int = DEFAULT_MAX_COEFFS, disparity_scale: float = 1.0,
                       threads: int = 1, return_plans: bool = False):
    """Reconstruct all 64 views of ``region`` from its key views.

    ``views`` holds one channel of the view grid ``(rows, cols, H, W)``; only
    the key-view entries are read.  ``patch_levels`` gives the disparity
    level index of every patch of ``grid``.  Returns float images of shape
    ``(64, H, W)`` (and the per-patch plans when ``return_plans``).
    """
    slots = skv_extractor(region)
    p = grid.patch_size
    if p != dictionary.patch_size:
        raise CoderError("patch size does not match the dictionary")
    keys = [region.views[s] for s in slots]
    skv = np.stack([np.asarray(views[s, t], dtype=np.float64) for s, t in keys])
    flat_levels = np.asarray(patch_levels, dtype=np.int64).ravel()
    if flat_levels.size != len(grid):
        raise CoderError("one disparity level per patch is required")

    jobs = []
    for idx, (x, y) in enumerate(grid.origins):
        level = int(flat_levels[idx])
        dp = disparity_scale * dictionary.levels[level]
        dn, scale = dictionary.restricted(dp, slots)
        seg = dictionary.segment_rows(dp)
        k = skv[:, y:y + p, x:x + p].reshape(-1) - MID_GRAY
        jobs.append((k, dn, scale, seg, eps, max_coeffs, level))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(_code_patch, jobs, chunksize=16))
    else:
        results = [_code_patch(j) for j in jobs]

    n_views = REGION_DIM * REGION_DIM
    images = assemble_overlap_average(
        ((origin, vec) for origin, (_, vec) in zip(grid.origins, results)), grid, n_views)
    if return_plans:
        return images, [plan for plan, _ in results]
    return images


def region_to_uint8(images: np.ndarray) -> np.ndarray:
    """Round half up and clamp a float region reconstruction to 8 bits."""
    return np.clip(round_half_up(images), 0, 255).astype(np.int64)


def stitch_regions(regions: list[CodingRegion], recons: list[np.ndarray],
                   rows: int = GRID_DIM, cols: int = GRID_DIM) -> np.ndarray:
    """Concatenate integer region reconstructions ``(64, H, W)`` into the full
    grid; views covered by several regions get the rounded-half-up mean."""
    h, w = recons[0].shape[-2:]
    total = np.zeros((rows, cols, h, w), dtype=np.int64)
    count = np.zeros((rows, cols), dtype=np.int64)
    for reg, rec in zip(regions, recons):
        rec = np.asarray(rec, dtype=np.int64).reshape(REGION_DIM, REGION_DIM, h, w)
        total[reg.rows[0]:reg.rows[1], reg.cols[0]:reg.cols[1]] += rec
        count[reg.rows[0]:reg.rows[1], reg.cols[0]:reg.cols[1]] += 1
    if (count == 0).any():
        raise CoderError("regions do not cover the view grid")
    c = count[:, :, None, None]
    return ((total + c // 2) // c).astype(np.uint8)


def approximate_channel(views: np.ndarray, dictionary: LfDictionary, patch_levels: np.ndarray,
                        grid: PatchGrid, params: CoderParams, disparity_scale: float = 1.0,
                        threads: int = 1) -> np.ndarray:
    regions = segment_regions(views.shape[0], views.shape[1], params.layout)
    recons = [
        region_to_uint8(approximate_region(views, reg, dictionary, patch_levels, grid, params.eps,
                                           params.max_coeffs, disparity_scale, threads))
        for reg in regions
    ]
    return stitch_regions(regions, recons, views.shape[0], views.shape[1])


def approximate_lf(channels, dictionary: LfDictionary, dmap: DisparityMap,
                   params: CoderParams, threads: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sparse approximation of all three channels of the view grid.

    ``channels`` is ``(y, u, v)``, each ``(15, 15, H, W)``; only key views are
    read.  Luma uses the disparity map directly; chroma uses the nearest luma
    patch's level at half the disparity.
    """
    y, u, v = channels
    luma_grid = PatchGrid(y.shape[2], y.shape[3], params.patch_size, params.stride)
    chroma_grid = PatchGrid(u.shape[2], u.shape[3], params.patch_size, params.stride)
    if dmap.levels.shape != luma_grid.shape:
        raise CoderError("disparity map does not match the luma patch grid")
    if not np.array_equal(dmap.grid_levels, dictionary.levels):
        raise CoderError("disparity map uses a different level grid than the dictionary")
    c_levels = chroma_patch_levels(dmap.levels, luma_grid, chroma_grid)
    out_y = approximate_channel(y, dictionary, dmap.levels, luma_grid, params, 1.0, threads)
    out_u = approximate_channel(u, dictionary, c_levels, chroma_grid, params, 0.5, threads)
    out_v = approximate_channel(v, dictionary, c_levels, chroma_grid, params, 0.5, threads)
    return out_y, out_u, out_v
