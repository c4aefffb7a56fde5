"""Georeferenced float grids, the bespoke grid file format, and 3-band composites."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

SOURCE_BANDS = (
    "VV_before", "VV_after", "VH_before", "VH_after",
    "DEM", "Slope", "Red", "Green", "Blue",
)


class GridFormatError(ValueError):
    """Raised for malformed grid headers or payloads."""


@dataclass
class Grid:
    """Band-sequential float32 raster.

    ``data`` has shape (bands, height, width). The geotransform follows the
    GDAL convention ``(origin_x, pixel_w, 0, origin_y, 0, -pixel_h)``.
    """

    data: np.ndarray
    geotransform: tuple = (0.0, 1.0, 0.0, 0.0, 0.0, -1.0)
    nodata: float | None = None
    band_names: list = field(default_factory=list)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise GridFormatError(f"grid data must be (bands, height, width), got shape {data.shape}")
        if data.dtype != np.float32:
            data = data.astype(np.float32)
        self.data = data
        if min(data.shape) < 1:
            raise GridFormatError(f"grid needs >=1 band, row and column, got {data.shape}")
        gt = tuple(float(v) for v in self.geotransform)
        if len(gt) != 6:
            raise GridFormatError("geotransform must have 6 numbers")
        if not (gt[1] > 0 and gt[5] < 0):
            raise GridFormatError(f"pixel sizes must be positive (pixel_w={gt[1]}, pixel_h={-gt[5]})")
        self.geotransform = gt
        if self.nodata is not None:
            self.nodata = float(self.nodata)
            if not np.isfinite(self.nodata):
                raise GridFormatError("nodata sentinel must be finite")
        if not self.band_names:
            self.band_names = [f"band{i + 1}" for i in range(data.shape[0])]
        self.band_names = [str(n) for n in self.band_names]
        if len(self.band_names) != data.shape[0]:
            raise GridFormatError(f"{len(self.band_names)} band names for {data.shape[0]} bands")
        bad = ~np.isfinite(data)
        if bad.any():
            raise GridFormatError(f"{int(bad.sum())} non-finite values outside nodata")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def valid_mask(self) -> np.ndarray:
        """True where a pixel holds data (not the nodata sentinel)."""
        if self.nodata is None:
            return np.ones(self.data.shape, dtype=bool)
        return self.data != np.float32(self.nodata)

    def band(self, index_or_name) -> "Grid":
        i = self.band_names.index(index_or_name) if isinstance(index_or_name, str) else index_or_name
        return Grid(self.data[i:i + 1].copy(), self.geotransform, self.nodata, [self.band_names[i]])

    def pixel_to_geo(self, col: float, row: float) -> tuple[float, float]:
        g = self.geotransform
        return g[0] + col * g[1] + row * g[2], g[3] + col * g[4] + row * g[5]

    def same_frame(self, other: "Grid") -> bool:
        return self.shape == other.shape and self.geotransform == other.geotransform

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (self.geotransform == other.geotransform
                and self.nodata == other.nodata
                and self.band_names == other.band_names
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".grid", ".bin"):
        p = p.with_suffix("")
    return p.with_suffix(".grid"), p.with_suffix(".bin")


def write_grid(grid: Grid, path) -> None:
    """Write ``<stem>.grid`` (JSON header) and ``<stem>.bin`` (little-endian float32)."""
    header_path, payload_path = _paths(path)
    header = {
        "width": grid.width,
        "height": grid.height,
        "bands": grid.bands,
        "dtype": "f32le",
        "geotransform": list(grid.geotransform),
        "nodata": grid.nodata,
        "band_names": list(grid.band_names),
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(grid.data.astype("<f4").tobytes())
    header_path.write_text(json.dumps(header, indent=1) + "\n")


def read_grid(path) -> Grid:
    header_path, payload_path = _paths(path)
    try:
        header = json.loads(header_path.read_text())
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise GridFormatError(f"{header_path}: header is not valid JSON ({e})") from e
    if not isinstance(header, dict):
        raise GridFormatError(f"{header_path}: header must be a JSON object")
    missing = {"width", "height", "bands", "dtype", "geotransform"} - header.keys()
    if missing:
        raise GridFormatError(f"{header_path}: missing header fields {sorted(missing)}")
    if header["dtype"] != "f32le":
        raise GridFormatError(f"{header_path}: unsupported dtype {header['dtype']!r}")
    try:
        w, h, b = (int(header[k]) for k in ("width", "height", "bands"))
    except (TypeError, ValueError) as e:
        raise GridFormatError(f"{header_path}: dimensions must be integers") from e
    if w < 1 or h < 1 or b < 1:
        raise GridFormatError(f"{header_path}: dimensions must be >=1, got {w}x{h}x{b}")
    raw = payload_path.read_bytes()
    expected = w * h * b * 4
    if len(raw) != expected:
        raise GridFormatError(
            f"{payload_path}: payload holds {len(raw)} bytes, header implies {expected} ({w}x{h}x{b} f32)")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(b, h, w)
    nodata = header.get("nodata")
    if nodata is not None:
        finite = np.isfinite(data) | (data == np.float32(nodata))
        if not finite.all():
            raise GridFormatError(f"{payload_path}: non-finite values outside nodata")
    return Grid(data, tuple(header["geotransform"]), nodata, header.get("band_names") or [])


def band_difference(a: Grid, b: Grid) -> Grid:
    """Pixelwise ``a - b`` of two single-band grids; nodata in either input propagates."""
    if a.bands != 1 or b.bands != 1:
        raise ValueError("band_difference expects single-band grids")
    if not a.same_frame(b):
        raise ValueError(f"grid frames differ: {a.shape} {a.geotransform} vs {b.shape} {b.geotransform}")
    out = a.data - b.data
    nodata = a.nodata if a.nodata is not None else b.nodata
    if nodata is not None:
        invalid = ~(a.valid_mask() & b.valid_mask())
        out[invalid] = np.float32(nodata)
    return Grid(out, a.geotransform, nodata, [f"{a.band_names[0]}-{b.band_names[0]}"])


@dataclass(frozen=True)
class CompositeRecipe:
    """A named 3-band stack. A band is a source name or a ``(minuend, subtrahend)`` pair."""

    name: str
    bands: tuple

    def sources(self) -> list[str]:
        names = []
        for expr in self.bands:
            for n in (expr if isinstance(expr, tuple) else (expr,)):
                if n not in names:
                    names.append(n)
        return names


RECIPES = {
    r.name: r for r in (
        CompositeRecipe("RGB", ("Red", "Green", "Blue")),
        CompositeRecipe("SSD", ("VV_after", "VH_after", "DEM")),
        CompositeRecipe("SSS", ("VV_after", "VH_after", "Slope")),
        CompositeRecipe("BAD", ("VV_before", "VV_after", "DEM")),
        CompositeRecipe("BAS", ("VV_before", "VV_after", "Slope")),
        CompositeRecipe("HHH", ("VH_before", "VH_after", "VH_after")),
        CompositeRecipe("BAA", ("VV_before", "VV_after", "VV_after")),
        CompositeRecipe("BAC", ("VV_before", "VV_after", ("VV_after", "VV_before"))),
        CompositeRecipe("BAH", ("VV_before", "VV_after", "VH_after")),
    )
}


def get_recipe(name: str) -> CompositeRecipe:
    try:
        return RECIPES[name]
    except KeyError:
        raise ValueError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}") from None


def compose(recipe: CompositeRecipe | str, sources: Mapping[str, Grid]) -> Grid:
    """Evaluate a recipe pixelwise over named single-band source grids."""
    if isinstance(recipe, str):
        recipe = get_recipe(recipe)
    needed = recipe.sources()
    missing = [n for n in needed if n not in sources]
    if missing:
        raise KeyError(f"recipe {recipe.name} needs missing source band(s): {', '.join(missing)}")
    ref = sources[needed[0]]
    for n in needed:
        g = sources[n]
        if g.bands != 1:
            raise ValueError(f"source {n} must be single-band, has {g.bands} bands")
        if not g.same_frame(ref):
            raise ValueError(f"source {n} frame {g.shape} differs from {needed[0]} {ref.shape}")

    nodata = next((sources[n].nodata for n in needed if sources[n].nodata is not None), None)
    bands, names = [], []
    for expr in recipe.bands:
        if isinstance(expr, tuple):
            g = band_difference(sources[expr[0]], sources[expr[1]])
            names.append(f"{expr[0]}-{expr[1]}")
        else:
            g = sources[expr]
            names.append(expr)
        band = g.data[0].copy()
        if nodata is not None and g.nodata is not None and g.nodata != nodata:
            band[~g.valid_mask()[0]] = np.float32(nodata)
        bands.append(band)
    data = np.stack(bands)
    if nodata is not None:
        invalid = np.zeros(ref.shape, dtype=bool)
        for n in needed:
            invalid |= ~sources[n].valid_mask()[0]
        data[:, invalid] = np.float32(nodata)
    return Grid(data, ref.geotransform, nodata, names)


@dataclass
class NormalizationSpec:
    """Per-band min-max scaling. ``mode`` is "minmax" (compute) or "fixed" (replay ``lo``/``hi``)."""

    mode: str = "minmax"
    lo: list | None = None
    hi: list | None = None

    def to_dict(self) -> dict:
        return {"mode": self.mode, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormalizationSpec":
        return cls(d.get("mode", "fixed"), d.get("lo"), d.get("hi"))


def normalize(grid: Grid, spec: NormalizationSpec | None = None) -> tuple[Grid, NormalizationSpec]:
    """Scale each band to [0, 1]; nodata pixels are left untouched.

    Returns the scaled grid and a fixed-mode spec holding the statistics used,
    so the same transform can be replayed on another scene. Replayed values
    falling outside the original range are clipped.
    """
    spec = spec or NormalizationSpec()
    valid = grid.valid_mask()
    if spec.mode == "minmax":
        lo, hi = [], []
        for k in range(grid.bands):
            v = grid.data[k][valid[k]]
            lo.append(float(v.min()) if v.size else 0.0)
            hi.append(float(v.max()) if v.size else 0.0)
    elif spec.mode == "fixed":
        if spec.lo is None or spec.hi is None or len(spec.lo) != grid.bands or len(spec.hi) != grid.bands:
            raise ValueError(f"fixed normalization needs {grid.bands} lo/hi values")
        lo, hi = [float(v) for v in spec.lo], [float(v) for v in spec.hi]
    else:
        raise ValueError(f"unknown normalization mode {spec.mode!r}")

    out = grid.data.copy()
    for k in range(grid.bands):
        band = grid.data[k].astype(np.float64)
        if hi[k] > lo[k]:
            scaled = np.clip((band - lo[k]) / (hi[k] - lo[k]), 0.0, 1.0)
        else:
            scaled = np.zeros_like(band)
        out[k] = np.where(valid[k], scaled, grid.data[k]).astype(np.float32)
    return replace(grid, data=out, band_names=list(grid.band_names)), NormalizationSpec("fixed", lo, hi)


def read_sources(directory, names: Sequence[str] | None = None) -> dict[str, Grid]:
    """Load ``<directory>/<band>.grid`` for every known source band present."""
    directory = Path(directory)
    out = {}
    for n in names or SOURCE_BANDS:
        if os.path.exists(directory / f"{n}.grid"):
            out[n] = read_grid(directory / f"{n}.grid")
    return out
