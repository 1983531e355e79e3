"""Quality metrics, Bjontegaard deltas and rate-distortion sweeps."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .lf_core import LightField

PEAK = 255.0
YUV_WEIGHTS = (6.0, 1.0, 1.0)


def mse_to_psnr(mse: float) -> float:
    return math.inf if mse == 0 else 10.0 * math.log10(PEAK * PEAK / mse)


def psnr_plane_set(orig: np.ndarray, recon: np.ndarray, mask: np.ndarray | None = None) -> float:
    """PSNR of one channel with the squared error pooled over all masked views.

    Arrays are ``(rows, cols, H, W)``; identical inputs give ``math.inf``.
    """
    a = np.asarray(orig, dtype=np.float64)
    b = np.asarray(recon, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if mask is not None:
        a, b = a[mask], b[mask]
    if a.size == 0:
        raise ValueError("no views selected")
    return mse_to_psnr(float(np.mean((a - b) ** 2)))


def psnr_yuv(py: float, pu: float, pv: float) -> float:
    wy, wu, wv = YUV_WEIGHTS
    return (wy * py + wu * pu + wv * pv) / (wy + wu + wv)


def psnr_lf(orig: LightField, recon: LightField, mask: np.ndarray | None = None) -> dict:
    mask = orig.valid_mask if mask is None else mask
    py, pu, pv = (psnr_plane_set(a, b, mask) for a, b in zip(orig.channels, recon.channels))
    return {"y": py, "u": pu, "v": pv, "yuv": psnr_yuv(py, pu, pv)}


# ---------------------------------------------------------------------------
# RD points and curves
# ---------------------------------------------------------------------------


@dataclass
class RdPoint:
    bpp: float
    psnr_y: float
    psnr_u: float
    psnr_v: float
    psnr_yuv: float
    q: int = 0
    header_bytes: int = 0
    skv_bytes: int = 0
    disparity_bytes: int = 0
    residual_bytes: int = 0

    def __post_init__(self):
        if not self.bpp > 0:
            raise ValueError("bpp must be positive")


_INT_FIELDS = {"q", "header_bytes", "skv_bytes", "disparity_bytes", "residual_bytes"}


def write_csv(points: list[RdPoint], path: str | None = None) -> str:
    buf = io.StringIO()
    names = [f.name for f in fields(RdPoint)]
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for p in points:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(p).items()})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as f:
            f.write(text)
    return text


def read_csv(source: str) -> list[RdPoint]:
    """Parse CSV text, or a path to a CSV file."""
    text = source
    if "\n" not in source:
        with open(source, newline="") as f:
            text = f.read()
    rows = csv.DictReader(io.StringIO(text))
    return [RdPoint(**{k: int(v) if k in _INT_FIELDS else float(v) for k, v in r.items()})
            for r in rows]


def write_dat(points: list[RdPoint], path: str) -> None:
    """Whitespace-separated columns for gnuplot."""
    with open(path, "w") as f:
        f.write("# bpp psnr_y psnr_u psnr_v psnr_yuv q\n")
        for p in points:
            f.write(f"{p.bpp:.6f} {p.psnr_y:.4f} {p.psnr_u:.4f} {p.psnr_v:.4f} "
                    f"{p.psnr_yuv:.4f} {p.q}\n")


def monotone_clean(points: list[RdPoint]) -> list[RdPoint]:
    """Sort by rate and drop points that do not improve PSNR_YUV."""
    out: list[RdPoint] = []
    for p in sorted(points, key=lambda p: (p.bpp, -p.psnr_yuv)):
        if not out or p.psnr_yuv > out[-1].psnr_yuv:
            if out and p.bpp == out[-1].bpp:
                out[-1] = p
            else:
                out.append(p)
    return out


# ---------------------------------------------------------------------------
# Bjontegaard metrics
# ---------------------------------------------------------------------------


@dataclass
class BdResult:
    bd_psnr: float
    bd_rate: float  # percent
    linear_fallback: bool = False


def _fit_integral(x: np.ndarray, y: np.ndarray, lo: float, hi: float) -> tuple[float, bool]:
    """Integral of y(x) over [lo, hi] from a cubic fit, or piecewise-linear
    interpolation when the cubic is ill-conditioned or non-monotone."""
    order = np.argsort(x)
    x, y = x[order], y[order]
    if len(np.unique(x)) >= 4:
        xc = (x - x.mean()) / max(np.ptp(x), 1e-12)
        van = np.vander(xc, 4)
        if np.linalg.cond(van) < 1e8:
            coef = np.polyfit(x, y, 3)
            deriv = np.polyder(coef)
            probe = np.linspace(lo, hi, 64)
            d = np.polyval(deriv, probe)
            if np.all(d >= 0) or np.all(d <= 0):
                integ = np.polyint(coef)
                return float(np.polyval(integ, hi) - np.polyval(integ, lo)), False
    grid = np.linspace(lo, hi, 2049)
    return float(np.trapezoid(np.interp(grid, x, y), grid)), True


def bd_metrics(curve_a: list[RdPoint], curve_b: list[RdPoint]) -> BdResult:
    """BD-PSNR (dB) and BD-rate (%) of ``curve_b`` relative to ``curve_a``.

    Positive BD-PSNR / negative BD-rate mean ``b`` is better.
    """
    if len(curve_a) < 4 or len(curve_b) < 4:
        raise ValueError("BD metrics need at least 4 points per curve")
    ra = np.log10([p.bpp for p in curve_a])
    rb = np.log10([p.bpp for p in curve_b])
    qa = np.array([p.psnr_yuv for p in curve_a])
    qb = np.array([p.psnr_yuv for p in curve_b])
    if not (np.all(np.isfinite(qa)) and np.all(np.isfinite(qb))):
        raise ValueError("BD metrics need finite PSNR values")

    lo, hi = max(ra.min(), rb.min()), min(ra.max(), rb.max())
    if hi <= lo:
        raise ValueError("curves have no overlapping rate interval")
    ia, fa = _fit_integral(ra, qa, lo, hi)
    ib, fb = _fit_integral(rb, qb, lo, hi)
    bd_psnr = (ib - ia) / (hi - lo)

    plo, phi = max(qa.min(), qb.min()), min(qa.max(), qb.max())
    if phi <= plo:
        raise ValueError("curves have no overlapping quality interval")
    ja, ga = _fit_integral(qa, ra, plo, phi)
    jb, gb = _fit_integral(qb, rb, plo, phi)
    bd_rate = (10.0 ** ((jb - ja) / (phi - plo)) - 1.0) * 100.0
    return BdResult(bd_psnr, bd_rate, fa or fb or ga or gb)


def interp_psnr_at(curve: list[RdPoint], bpp: float) -> float:
    """PSNR_YUV at ``bpp`` by linear interpolation in log rate."""
    pts = sorted(curve, key=lambda p: p.bpp)
    x = np.log10([p.bpp for p in pts])
    y = np.array([p.psnr_yuv for p in pts])
    lx = math.log10(bpp)
    if lx < x[0] - 1e-12 or lx > x[-1] + 1e-12:
        raise ValueError("rate outside the curve")
    return float(np.interp(lx, x, y))


def matched_rate_gaps(full: list[RdPoint], base: list[RdPoint]) -> tuple[float, float, float, float]:
    """PSNR_YUV advantage of ``full`` over ``base`` at both ends of their
    common rate interval: ``(low_bpp, gap_low, high_bpp, gap_high)``."""
    lo = max(min(p.bpp for p in full), min(p.bpp for p in base))
    hi = min(max(p.bpp for p in full), max(p.bpp for p in base))
    if hi < lo:
        raise ValueError("curves have no overlapping rate interval")
    return (lo, interp_psnr_at(full, lo) - interp_psnr_at(base, lo),
            hi, interp_psnr_at(full, hi) - interp_psnr_at(base, hi))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def rd_sweep(lf: LightField, dictionary=None, q_list=(22,), mode: str = "full", config=None,
             threads: int = 1, csv_path: str | None = None, clean: bool = True) -> list[RdPoint]:
    """Encode at each q and collect RD points.

    ``full`` sweeps ``q_res`` with ``q_skv`` fixed by ``config``; the
    disparity map and approximation are computed once.  ``baseline`` intra
    codes every valid view at each q.
    """
    from dataclasses import replace

    from .codec import EncoderConfig, encode_baseline, encode_lf

    points = []
    if mode == "full":
        if dictionary is None:
            raise ValueError("full mode needs a dictionary")
        config = config or EncoderConfig()
        cache: dict = {}
        for q in q_list:
            res = encode_lf(lf, dictionary, replace(config, q_res=int(q)), threads, cache)
            b = res.accounting["bytes"]
            ps = res.psnr
            points.append(RdPoint(res.accounting["bpp"], ps["y"], ps["u"], ps["v"], ps["yuv"], int(q),
                                  b["header"], b.get("skv", 0), b.get("disparity", 0),
                                  b.get("residual", 0)))
    elif mode == "baseline":
        for q in q_list:
            res = encode_baseline(lf, int(q))
            ps = res.psnr
            points.append(RdPoint(res.bpp, ps["y"], ps["u"], ps["v"], ps["yuv"], int(q),
                                  residual_bytes=len(res.payload)))
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    if clean:
        points = monotone_clean(points)
    if csv_path is not None:
        write_csv(points, csv_path)
    return points
