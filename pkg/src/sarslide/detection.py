"""Sliding-window scene mapping with the trained classifier."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import Grid, write_grid
from .sampling import LANDSLIDE, PATCH

NET_INPUT = 32
RASTER_NODATA = -1.0


def _lerp_axis(x, axis, size):
    """Corner-aligned linear resize of ``x`` along ``axis`` to ``size`` samples."""
    n = x.shape[axis]
    if n == size:
        return x
    pos = np.arange(size) * ((n - 1) / (size - 1)) if size > 1 else np.zeros(1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    shape = [1] * x.ndim
    shape[axis] = size
    w = (pos - i0).astype(x.dtype).reshape(shape)
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    out = a + w * (b - a)
    # keep rounding from stepping outside the bracketing samples
    return np.clip(out, np.minimum(a, b), np.maximum(a, b))


def resample_patch(patch, size: int = NET_INPUT):
    """Bilinear resize of (..., h, w, c) patches to (..., size, size, c), corners aligned."""
    x = np.asarray(patch)
    return _lerp_axis(_lerp_axis(x, x.ndim - 3, size), x.ndim - 2, size)


def window_positions(height: int, width: int, window: int = PATCH, step: int = 2) -> list[tuple[int, int]]:
    """Top-left corners of every in-bounds window, row-major."""
    if height < window or width < window:
        raise ValueError(f"scene {height}x{width} is smaller than the {window}x{window} window")
    if step < 1:
        raise ValueError("step must be >= 1")
    return [(r, c) for r in range(0, height - window + 1, step) for c in range(0, width - window + 1, step)]


@dataclass
class DetectionSet:
    centers: np.ndarray  # (k, 2) row, col of every classified window center
    probabilities: np.ndarray  # (k,) landslide probability per center
    height: int
    width: int
    geotransform: tuple
    window: int = PATCH
    step: int = 2
    threshold: float = 0.5

    @property
    def detections(self) -> list[tuple[int, int, float]]:
        hit = self.probabilities > self.threshold
        return [(int(r), int(c), _f32(p)) for (r, c), p in zip(self.centers[hit], self.probabilities[hit])]

    @property
    def probability_raster(self) -> Grid:
        data = np.full((self.height, self.width), RASTER_NODATA, dtype=np.float32)
        if len(self.centers):
            data[self.centers[:, 0], self.centers[:, 1]] = self.probabilities
        return Grid(data, self.geotransform, RASTER_NODATA, ["landslide_probability"])


def _f32(p) -> float:
    """Shortest decimal that round-trips the float32 value."""
    return float(str(np.float32(p)))


def classify_windows(model, windows: np.ndarray) -> np.ndarray:
    """Landslide probability for a stack of (n, 25, 25, 3) windows."""
    return model.forward(resample_patch(windows.astype(np.float32)), training=False)[:, LANDSLIDE]


def slide(scene: Grid, model, step: int = 2, batch: int = 64, threshold: float = 0.5,
          threads: int = 1, window: int = PATCH) -> DetectionSet:
    """Classify every in-bounds window at ``step`` px spacing.

    Windows containing nodata are not classified. Output order is row-major
    by window center regardless of ``batch`` or ``threads``.
    """
    if scene.bands != 3:
        raise ValueError(f"scene must have 3 bands, has {scene.bands}")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    positions = window_positions(scene.height, scene.width, window, step)
    img = scene.data.transpose(1, 2, 0)
    valid = scene.valid_mask().all(axis=0)
    positions = [(r, c) for r, c in positions if valid[r:r + window, c:c + window].all()]
    chunks = [positions[i:i + batch] for i in range(0, len(positions), batch)]

    def run(chunk):
        wins = np.stack([img[r:r + window, c:c + window] for r, c in chunk])
        return classify_windows(model, wins)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(ch) for ch in chunks]
    probs = np.concatenate(results).astype(np.float32) if results else np.zeros(0, np.float32)
    half = window // 2
    centers = np.array([(r + half, c + half) for r, c in positions], dtype=np.int64).reshape(-1, 2)
    return DetectionSet(centers, probs, scene.height, scene.width, scene.geotransform, window, step, threshold)


def detections_geojson(ds: DetectionSet) -> dict:
    g = ds.geotransform
    feats = []
    for row, col, p in ds.detections:
        x = g[0] + (col + 0.5) * g[1] + (row + 0.5) * g[2]
        y = g[3] + (col + 0.5) * g[4] + (row + 0.5) * g[5]
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [x, y]},
            "properties": {"row": row, "col": col, "probability": p},
        })
    return {"type": "FeatureCollection", "features": feats}


def export_detections(ds: DetectionSet, directory, stem: str = "detections") -> dict:
    """Write ``<stem>.geojson``, ``<stem>.csv`` and ``probability.grid``; returns the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"geojson": d / f"{stem}.geojson", "csv": d / f"{stem}.csv", "raster": d / "probability.grid"}
    paths["geojson"].write_text(json.dumps(detections_geojson(ds)) + "\n")
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "probability"])
        for row, col, p in ds.detections:
            w.writerow([row, col, repr(p)])
    write_grid(ds.probability_raster, paths["raster"])
    return paths
