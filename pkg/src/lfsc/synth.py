"""Synthetic light field scenes with known disparity.

Each plane carries a band-limited random texture (a sum of sinusoids, so it
can be sampled analytically at any sub-pixel position).  View ``(s, t)``
samples plane textures at ``(x + dp * a, y + dp * b)`` where ``(a, b)`` is the
view's angular offset from the grid centre; planes later in the list occlude
earlier ones.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .lf_core import LightField, rgb_views_to_lf


@dataclass
class PlaneSpec:
    disparity: float
    texture_seed: int = 0
    # (x0, y0, x1, y1) in texture coordinates, half-open; None covers everything
    rect: Optional[tuple] = None
    contrast: float = 45.0
    max_frequency: float = 0.18


@dataclass
class SynthSceneSpec:
    planes: list = field(default_factory=lambda: [PlaneSpec(0.0)])
    width: int = 64
    height: int = 64
    angular_rows: int = 15
    angular_cols: int = 15
    noise_sigma: float = 0.0
    noise_seed: int = 0
    max_disparity: float = 3.0

    def __post_init__(self):
        self.planes = [p if isinstance(p, PlaneSpec) else PlaneSpec(**p) for p in self.planes]
        for p in self.planes:
            if abs(p.disparity) > self.max_disparity + 1e-9:
                raise ValueError(f"plane disparity {p.disparity} outside the dictionary range")
            if p.rect is not None:
                p.rect = tuple(float(v) for v in p.rect)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SynthSceneSpec":
        return cls(**json.loads(text))


class Texture:
    """RGB texture as a sum of random sinusoids."""

    def __init__(self, seed: int, contrast: float = 45.0, max_frequency: float = 0.18,
                 n_waves: int = 24):
        rng = np.random.default_rng(seed)
        freq = rng.uniform(0.015, max_frequency, n_waves) * 2 * np.pi
        theta = rng.uniform(0, np.pi, n_waves)
        self.kx = freq * np.cos(theta)
        self.ky = freq * np.sin(theta)
        self.phase = rng.uniform(0, 2 * np.pi, n_waves)
        amp = 1.0 / np.sqrt(1.0 + (freq / (2 * np.pi * 0.05)) ** 2)
        self.amp = amp / np.sqrt(0.5 * np.sum(amp ** 2)) * contrast
        self.base = rng.uniform(70, 180, 3)
        # weak per-channel tint waves
        self.tint = rng.normal(0, 0.25, (3, n_waves))

    def sample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        arg = x[..., None] * self.kx + y[..., None] * self.ky + self.phase
        waves = np.cos(arg) * self.amp
        lum = waves.sum(-1)
        rgb = np.stack([self.base[c] + lum + (waves * self.tint[c]).sum(-1) for c in range(3)], -1)
        return rgb


def angular_offsets(rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets of each view from the grid centre (half-integers for even grids)."""
    return np.arange(rows) - (rows - 1) / 2.0, np.arange(cols) - (cols - 1) / 2.0


def render_scene(spec: SynthSceneSpec) -> tuple[LightField, np.ndarray]:
    """Render the scene.  Returns the light field and the per-pixel disparity
    of the front-most surface as seen from the grid centre."""
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    oa, ob = angular_offsets(spec.angular_rows, spec.angular_cols)
    textures = [Texture(p.texture_seed, p.contrast, p.max_frequency) for p in spec.planes]
    rng = np.random.default_rng(spec.noise_seed)
    rgb = np.empty((spec.angular_rows, spec.angular_cols, h, w, 3))
    for s in range(spec.angular_rows):
        for t in range(spec.angular_cols):
            img = np.zeros((h, w, 3))
            for plane, tex in zip(spec.planes, textures):
                tx = xs + plane.disparity * oa[s]
                ty = ys + plane.disparity * ob[t]
                if plane.rect is None:
                    img[:] = tex.sample(tx, ty)
                    continue
                x0, y0, x1, y1 = plane.rect
                inside = (tx >= x0) & (tx < x1) & (ty >= y0) & (ty < y1)
                if inside.any():
                    img[inside] = tex.sample(tx[inside], ty[inside])
            if spec.noise_sigma > 0:
                img += rng.normal(0, spec.noise_sigma, img.shape)
            rgb[s, t] = img
    rgb = np.clip(np.floor(rgb + 0.5), 0, 255)
    lf = rgb_views_to_lf(rgb)
    return lf, ground_truth_disparity(spec)


def label_map(spec: SynthSceneSpec) -> np.ndarray:
    """Index of the front-most plane at each pixel of the central view (-1 for none)."""
    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    labels = np.full((spec.height, spec.width), -1, dtype=np.int64)
    for i, plane in enumerate(spec.planes):
        if plane.rect is None:
            labels[:] = i
            continue
        x0, y0, x1, y1 = plane.rect
        # centre-of-grid viewpoint: zero angular offset
        labels[(xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)] = i
    return labels


def ground_truth_disparity(spec: SynthSceneSpec) -> np.ndarray:
    labels = label_map(spec)
    disp = np.array([p.disparity for p in spec.planes] + [np.nan])
    return disp[labels]


def plane_scene(disparity: float, seed: int = 0, size: int = 64, angular: int = 15,
                **kw) -> SynthSceneSpec:
    return SynthSceneSpec([PlaneSpec(disparity, seed)], size, size, angular, angular, **kw)


def two_plane_scene(background: float = 0.0, foreground: float = 2.1, seed: int = 0,
                    size: int = 64, angular: int = 15, **kw) -> SynthSceneSpec:
    lo, hi = size * 0.3, size * 0.72
    return SynthSceneSpec(
        [PlaneSpec(background, seed), PlaneSpec(foreground, seed + 1000, (lo, lo, hi, hi))],
        size, size, angular, angular, **kw)


def standard_suite(size: int = 64) -> dict:
    """Scenes used for the rate-distortion comparisons."""
    return {
        "plane": plane_scene(0.6, seed=11, size=size),
        "two_plane": two_plane_scene(-0.3, 0.9, seed=12, size=size),
        "three_plane": SynthSceneSpec(
            [PlaneSpec(-0.6, 13),
             PlaneSpec(0.3, 1013, (size * 0.1, size * 0.15, size * 0.55, size * 0.6)),
             PlaneSpec(1.2, 2013, (size * 0.45, size * 0.4, size * 0.9, size * 0.85))],
            size, size),
    }
