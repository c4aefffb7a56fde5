"""Synthetic before/after SAR, optical and terrain scenes with known landslides."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .raster import Grid, write_grid
from .sampling import LANDSLIDE, NON_LANDSLIDE, AnnotationPolygon, rasterize_polygon, write_polygons

MAX_TRIES = 500
LAND_COVERS = ("wooded", "agricultural", "urban")
# static intensity multiplier and RGB tone per non-landslide land cover
COVER_BACKSCATTER = {"wooded": 1.0, "agricultural": 0.6, "urban": 4.0}
# intensity gain between acquisitions unrelated to landslides (harvest, tillage)
COVER_CHANGE = {"wooded": 1.0, "agricultural": 1.5, "urban": 1.0}
COVER_RGB = {
    "wooded": (0.18, 0.40, 0.14),
    "agricultural": (0.36, 0.47, 0.22),
    "urban": (0.45, 0.44, 0.43),
}
LANDSLIDE_RGB = (0.55, 0.42, 0.28)


class SynthError(RuntimeError):
    pass


@dataclass
class SynthConfig:
    height: int = 384
    width: int = 384
    landslide_count: int = 20
    background_count: int | None = None  # non-landslide polygons; defaults to landslide_count
    radius_range: tuple = (13.0, 20.0)  # landslide semi-axes, pixels
    background_size: tuple = (29, 37)  # side of square non-landslide polygons, pixels
    backscatter_mean: float = 0.25  # mean VV intensity before the event
    vh_ratio: float = 0.25
    looks: float = 4.0
    contrast: float = 2.0  # VV amplitude factor inside landslides, after image
    contrast_vh: float = 1.7
    texture: float = 0.25  # log-std of the static reflectivity field
    hurst: float = 0.8  # DEM roughness; higher is smoother
    relief: float = 300.0  # meters
    pixel_size: float = 10.0  # meters
    gap: int = 6  # minimum pixel gap between polygon bounding boxes
    seed: int = 0

    def __post_init__(self):
        if self.contrast <= 0 or self.contrast_vh <= 0:
            raise ValueError("contrast must be > 0")
        if min(self.height, self.width) < 64:
            raise ValueError("scene dims must be >= 64")
        if self.landslide_count < 0:
            raise ValueError("landslide_count must be >= 0")
        self.radius_range = tuple(self.radius_range)
        self.background_size = tuple(self.background_size)

    @property
    def n_background(self) -> int:
        return self.landslide_count if self.background_count is None else self.background_count


@dataclass
class SynthScene:
    vv_before: Grid
    vv_after: Grid
    vh_before: Grid
    vh_after: Grid
    dem: Grid
    slope: Grid
    rgb: Grid
    truth_mask: np.ndarray
    truth_polygons: list
    background_polygons: list = field(default_factory=list)
    background_covers: list = field(default_factory=list)
    config: SynthConfig | None = None

    def sources(self) -> dict[str, Grid]:
        """Single-band grids keyed by composite source band name."""
        out = {
            "VV_before": self.vv_before, "VV_after": self.vv_after,
            "VH_before": self.vh_before, "VH_after": self.vh_after,
            "DEM": self.dem, "Slope": self.slope,
        }
        for i, name in enumerate(("Red", "Green", "Blue")):
            out[name] = self.rgb.band(i)
        return out

    @property
    def polygons(self) -> list:
        return list(self.truth_polygons) + list(self.background_polygons)


def slope_from_dem(dem: Grid) -> Grid:
    """Slope angle in degrees from central differences (one-sided at borders)."""
    if dem.bands != 1:
        raise ValueError("DEM must be single-band")
    if dem.height < 3 or dem.width < 3:
        raise ValueError(f"DEM must be at least 3x3, got {dem.height}x{dem.width}")
    pixel_w, pixel_h = dem.geotransform[1], -dem.geotransform[5]
    gy, gx = np.gradient(dem.data[0].astype(np.float64), pixel_h, pixel_w)
    slope = np.degrees(np.arctan(np.hypot(gx, gy)))
    return Grid(slope.astype(np.float32), dem.geotransform, None, ["Slope"])


def fractal_surface(shape, hurst: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean unit-range fBm-like surface by power-law spectral filtering."""
    h, w = shape
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.rfftfreq(w)[None, :]
    k = np.hypot(kx, ky)
    k[0, 0] = np.inf
    amp = k ** (-(hurst + 1.0))
    noise = rng.standard_normal((h, w))
    surf = np.fft.irfft2(np.fft.rfft2(noise) * amp, s=(h, w))
    return (surf - surf.min()) / (surf.max() - surf.min())


def _smooth_field(shape, sigma: float, rng: np.random.Generator) -> np.ndarray:
    z = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return z / z.std()


def _landslide_outline(cx, cy, a, b, angle, harmonics, n=40) -> list:
    phi = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    r = np.ones(n)
    for k, (amp, phase) in enumerate(harmonics, start=2):
        r += amp * np.cos(k * phi + phase)
    x, y = a * r * np.cos(phi), b * r * np.sin(phi)
    ca, sa = math.cos(angle), math.sin(angle)
    return list(zip(cx + ca * x - sa * y, cy + sa * x + ca * y))


def _bbox(verts):
    xs, ys = zip(*verts)
    return min(xs), min(ys), max(xs), max(ys)


def _fits(box, taken, gap, shape) -> bool:
    x0, y0, x1, y1 = box
    rows, cols = shape
    if x0 < 1 or y0 < 1 or x1 > cols - 1 or y1 > rows - 1:
        return False
    return all(x1 + gap <= t[0] or t[2] + gap <= x0 or y1 + gap <= t[1] or t[3] + gap <= y0 for t in taken)


def _place_polygons(cfg: SynthConfig, rng: np.random.Generator):
    shape = (cfg.height, cfg.width)
    taken, slides, backgrounds, covers = [], [], [], []
    lo, hi = cfg.radius_range
    for i in range(cfg.landslide_count):
        for _ in range(MAX_TRIES):
            a, b = rng.uniform(lo, hi, 2)
            harm = [(rng.uniform(0.0, 0.08), rng.uniform(0, 2 * np.pi)) for _ in range(3)]
            cx, cy = rng.uniform(0, cfg.width), rng.uniform(0, cfg.height)
            verts = _landslide_outline(cx, cy, a, b, rng.uniform(0, np.pi), harm)
            box = _bbox(verts)
            if box[2] - box[0] >= 26 and box[3] - box[1] >= 26 and _fits(box, taken, cfg.gap, shape):
                break
        else:
            raise SynthError(f"could not place landslide {i + 1} of {cfg.landslide_count} "
                             f"after {MAX_TRIES} tries; enlarge the scene or reduce the count")
        taken.append(box)
        slides.append(AnnotationPolygon(verts, LANDSLIDE, f"ls{i:03d}"))
    for i in range(cfg.n_background):
        for _ in range(MAX_TRIES):
            side = rng.integers(cfg.background_size[0], cfg.background_size[1] + 1)
            x0 = int(rng.integers(1, cfg.width - side))
            y0 = int(rng.integers(1, cfg.height - side))
            box = (x0, y0, x0 + side, y0 + side)
            if _fits(box, taken, cfg.gap, shape):
                break
        else:
            raise SynthError(f"could not place background polygon {i + 1} after {MAX_TRIES} tries")
        taken.append(box)
        verts = [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)]
        backgrounds.append(AnnotationPolygon(verts, NON_LANDSLIDE, f"bg{i:03d}"))
        covers.append(LAND_COVERS[i % len(LAND_COVERS)])
    return slides, backgrounds, covers


def _speckled_amplitude(intensity, looks, rng):
    """Amplitude of a multi-looked intensity: sqrt(I * n), n ~ Gamma(L, 1/L)."""
    return np.sqrt(intensity * rng.gamma(looks, 1.0 / looks, intensity.shape))


def generate(cfg: SynthConfig) -> SynthScene:
    rng = np.random.default_rng(cfg.seed)
    shape = (cfg.height, cfg.width)
    gt = (500000.0, cfg.pixel_size, 0.0, 4700000.0 + cfg.height * cfg.pixel_size, 0.0, -cfg.pixel_size)

    dem = Grid((cfg.relief * fractal_surface(shape, cfg.hurst, rng)).astype(np.float32), gt, None, ["DEM"])
    slope = slope_from_dem(dem)

    slides, backgrounds, covers = _place_polygons(cfg, rng)
    mask = np.zeros(shape, dtype=bool)
    for p in slides:
        mask |= rasterize_polygon(p, shape)
    cover_gain = np.ones(shape)
    cover_change = np.ones(shape)
    base = np.broadcast_to(np.array(COVER_RGB["wooded"]), (*shape, 3)).copy()
    for p, cover in zip(backgrounds, covers):
        x0, y0, x1, y1 = (int(v) for v in p.bounds())
        cover_gain[y0:y1, x0:x1] = COVER_BACKSCATTER[cover]
        cover_change[y0:y1, x0:x1] = COVER_CHANGE[cover]
        base[y0:y1, x0:x1] = COVER_RGB[cover]
    base[mask] = LANDSLIDE_RGB

    s = cfg.texture
    refl_vv = cover_gain * cfg.backscatter_mean * np.exp(s * _smooth_field(shape, 4.0, rng) - s * s / 2)
    refl_vh = cfg.vh_ratio * refl_vv * np.exp(0.5 * s * _smooth_field(shape, 4.0, rng) - s * s / 8)
    vv_b = _speckled_amplitude(refl_vv, cfg.looks, rng)
    vv_a = _speckled_amplitude(refl_vv * cover_change, cfg.looks, rng)
    vh_b = _speckled_amplitude(refl_vh, cfg.looks, rng)
    vh_a = _speckled_amplitude(refl_vh * cover_change, cfg.looks, rng)
    vv_a[mask] *= cfg.contrast
    vh_a[mask] *= cfg.contrast_vh

    tex = 0.05 * _smooth_field(shape, 3.0, rng)[..., None]
    rgb = np.clip(base + tex + 0.03 * rng.standard_normal((*shape, 3)), 0.0, 1.0)

    def g(a, name):
        return Grid(a.astype(np.float32), gt, None, [name])

    return SynthScene(
        vv_before=g(vv_b, "VV_before"), vv_after=g(vv_a, "VV_after"),
        vh_before=g(vh_b, "VH_before"), vh_after=g(vh_a, "VH_after"),
        dem=dem, slope=slope,
        rgb=Grid(rgb.transpose(2, 0, 1).astype(np.float32), gt, None, ["Red", "Green", "Blue"]),
        truth_mask=mask, truth_polygons=slides, background_polygons=backgrounds,
        background_covers=covers, config=cfg,
    )


def write_scene(scene: SynthScene, directory) -> None:
    """One grid per source band, the truth mask, polygons.geojson and manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for name, grid in scene.sources().items():
        write_grid(grid, d / f"{name}.grid")
        files.append(f"{name}.grid")
    ref = scene.vv_before
    write_grid(Grid(scene.truth_mask.astype(np.float32), ref.geotransform, None, ["truth_mask"]),
               d / "truth_mask.grid")
    write_polygons(scene.polygons, d / "polygons.geojson")
    manifest = {
        "config": asdict(scene.config) if scene.config else None,
        "seed": scene.config.seed if scene.config else None,
        "bands": files,
        "truth_mask": "truth_mask.grid",
        "polygons": "polygons.geojson",
        "landslides": len(scene.truth_polygons),
        "non_landslides": len(scene.background_polygons),
        "land_covers": dict(zip((p.id for p in scene.background_polygons), scene.background_covers)),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
