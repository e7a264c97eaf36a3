"""Deterministic synthetic road tiles for two domains with controllable shift.

Randomness comes from numpy's PCG64 bit generator. Tile ``i`` of a domain is
drawn from ``SeedSequence(seed, spawn_key=(i,))``, so tiles are independent
of each other and of how many are generated.
"""

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .exceptions import UsageError
from .raster import GridDims
from .skeleton import skeletonize

BACKGROUND_LEVEL = 0.35
BACKGROUND_TEXTURE = 0.05
ROAD_LEVEL = 0.75


@dataclass(frozen=True)
class DomainParams:
    seed: int = 0
    tile_size: GridDims = GridDims(96, 96)
    road_width_px: float = 7.0
    width_jitter: float = 1.0
    n_roads: int = 3
    curvature: float = 0.05
    blur_sigma: float = 0.0
    brightness: float = 0.0
    clutter_density: float = 0.0
    noise_sigma: float = 0.03
    road_contrast: float = ROAD_LEVEL - BACKGROUND_LEVEL
    contrast_jitter: float = 0.0

    def __post_init__(self):
        h, w = self.tile_size
        if h < 64 or w < 64:
            raise UsageError(f"tile_size must be at least 64x64, got {h}x{w}")
        if self.road_width_px < 1:
            raise UsageError("road_width_px must be >= 1")
        if self.n_roads < 1:
            raise UsageError("n_roads must be >= 1")
        for name in ("width_jitter", "curvature", "blur_sigma", "clutter_density", "noise_sigma"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")
        if not 0 <= self.contrast_jitter <= 1:
            raise UsageError("contrast_jitter must lie in [0, 1]")
        if self.seed < 0:
            raise UsageError("seed must be a non-negative integer")

    def as_dict(self):
        d = asdict(self)
        d["tile_size"] = list(self.tile_size)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "tile_size" in d:
            d["tile_size"] = GridDims(*d["tile_size"])
        return cls(**d)


PRESETS = {
    # wide, sharp roads on a plain but grainy background
    "src": DomainParams(seed=1, road_width_px=7.0, width_jitter=1.0, n_roads=2, noise_sigma=0.2),
    # narrow, slightly blurred, low-contrast roads with faded stretches on a
    # brighter, cluttered background
    "tgt": DomainParams(
        seed=2,
        road_width_px=3.0,
        width_jitter=0.5,
        blur_sigma=0.5,
        brightness=0.1,
        clutter_density=1.0,
        noise_sigma=0.02,
        road_contrast=0.2,
        contrast_jitter=0.4,
    ),
}


def preset(name, **overrides):
    try:
        params = PRESETS[name]
    except KeyError:
        raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if "tile_size" in overrides:
        overrides["tile_size"] = GridDims(*overrides["tile_size"])
    return replace(params, **overrides)


@dataclass
class Tile:
    image: np.ndarray
    gt_mask: np.ndarray
    gt_skeleton: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.gt_skeleton is None:
            self.gt_skeleton = skeletonize(self.gt_mask)


def _road_centerline(rng, h, w, curvature):
    """Random walk polyline entering at one border and leaving the tile."""
    side = rng.integers(4)
    t = rng.uniform(0.1, 0.9)
    start, heading = {
        0: ((0.0, t * w), math.pi / 2),  # top, heading down
        1: ((h - 1.0, t * w), -math.pi / 2),
        2: ((t * h, 0.0), 0.0),  # left, heading right
        3: ((t * h, w - 1.0), math.pi),
    }[int(side)]
    heading += rng.uniform(-0.6, 0.6)
    r, c = start
    pts = [(r, c)]
    step = 2.0
    turn = 0.0
    for _ in range(4 * (h + w)):
        turn = 0.8 * turn + rng.normal(0.0, curvature)
        heading += turn
        # direction: heading 0 = +col, pi/2 = +row
        r += step * math.sin(heading)
        c += step * math.cos(heading)
        pts.append((r, c))
        if not (-4 <= r <= h + 3 and -4 <= c <= w + 3):
            break
    return np.array(pts)


def _distance_to_polyline(pts, h, w):
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    best = np.full((h, w), np.inf)
    for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
        dr, dc = r1 - r0, c1 - c0
        seg2 = dr * dr + dc * dc
        t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / seg2, 0.0, 1.0)
        d = np.hypot(rr - (r0 + t * dr), cc - (c0 + t * dc))
        np.minimum(best, d, out=best)
    return best


def _clutter(rng, h, w, density):
    """Bright blobs; ``density`` is the expected count per 1000 pixels."""
    layer = np.zeros((h, w))
    count = rng.poisson(density * h * w / 1000.0)
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(count):
        r0, c0 = rng.uniform(0, h), rng.uniform(0, w)
        a, b = rng.uniform(1.5, 4.0), rng.uniform(1.5, 4.0)
        theta = rng.uniform(0, math.pi)
        ct, st = math.cos(theta), math.sin(theta)
        u = ((rr - r0) * ct + (cc - c0) * st) / a
        v = (-(rr - r0) * st + (cc - c0) * ct) / b
        level = rng.uniform(0.4, 0.9)
        layer = np.maximum(layer, level * (u * u + v * v <= 1.0))
    return layer


def generate_tile(params, index):
    h, w = params.tile_size
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(params.seed, spawn_key=(index,))))
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(params.n_roads):
        pts = _road_centerline(rng, h, w, params.curvature)
        width = max(1.0, params.road_width_px + rng.uniform(-1.0, 1.0) * params.width_jitter)
        mask |= _distance_to_polyline(pts, h, w) < width / 2.0

    texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (h, w)), 3.0)
    texture *= BACKGROUND_TEXTURE / max(texture.std(), 1e-12)
    image = BACKGROUND_LEVEL + texture
    clutter = _clutter(rng, h, w, params.clutter_density)
    image = np.where(clutter > 0, BACKGROUND_LEVEL + clutter * params.road_contrast, image)
    fade = np.ones((h, w))
    if params.contrast_jitter > 0:
        # smooth field in [1 - jitter, 1]: faded stretches along the roads
        field_ = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (h, w)), 8.0)
        field_ = (field_ - field_.min()) / max(field_.max() - field_.min(), 1e-12)
        fade = 1.0 - params.contrast_jitter * (1.0 - field_)
    image = np.where(mask, BACKGROUND_LEVEL + params.road_contrast * fade, image)
    image = image + rng.normal(0.0, params.noise_sigma, (h, w)) if params.noise_sigma else image
    if params.blur_sigma > 0:
        image = ndimage.gaussian_filter(image, params.blur_sigma)
    image = np.clip(image + params.brightness, 0.0, 1.0)
    gt = mask.astype(np.uint8)
    return Tile(image=image, gt_mask=gt, gt_skeleton=skeletonize(gt))


def generate_domain(params, n_tiles):
    """Generate ``n_tiles`` tiles; identical output for identical arguments."""
    if n_tiles < 1:
        raise UsageError("n_tiles must be positive")
    return [generate_tile(params, i) for i in range(n_tiles)]


def stroke_threshold(params):
    """Intensity separating road strokes from background in a clean tile."""
    bg_max = BACKGROUND_LEVEL + 6 * BACKGROUND_TEXTURE
    return params.brightness + 0.5 * (bg_max + BACKGROUND_LEVEL + params.road_contrast)
