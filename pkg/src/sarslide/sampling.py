"""Annotation polygons to labeled 25x25 patches: rasterize, tile, split and augment."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from shapely.geometry import LinearRing

from .raster import Grid

NON_LANDSLIDE = 0
LANDSLIDE = 1
LABEL_NAMES = {LANDSLIDE: "landslide", NON_LANDSLIDE: "non_landslide"}
PATCH = 25


class SamplingWarning(UserWarning):
    pass


@dataclass
class AnnotationPolygon:
    """Closed ring in pixel coordinates (x = column, y = row) with a class label."""

    vertices: list
    label: int
    id: str = ""

    def __post_init__(self):
        verts = [(float(x), float(y)) for x, y in self.vertices]
        if len(verts) > 1 and verts[0] == verts[-1]:
            verts = verts[:-1]
        if len(verts) < 3:
            raise ValueError(f"polygon {self.id!r} needs at least 3 distinct vertices")
        if self.label not in LABEL_NAMES:
            raise ValueError(f"polygon {self.id!r}: label must be 0 or 1, got {self.label!r}")
        self.vertices = verts

    @property
    def area(self) -> float:
        x, y = np.array(self.vertices).T
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def bounds(self) -> tuple[float, float, float, float]:
        xs, ys = zip(*self.vertices)
        return min(xs), min(ys), max(xs), max(ys)

    def validate(self, grid_shape: tuple[int, int] | None = None) -> None:
        if self.area == 0.0:
            raise ValueError(f"polygon {self.id!r} has zero area")
        if not LinearRing(self.vertices).is_simple:
            raise ValueError(f"polygon {self.id!r} ring self-intersects")
        if grid_shape is not None:
            x0, y0, x1, y1 = self.bounds()
            rows, cols = grid_shape
            if x0 < 0 or y0 < 0 or x1 > cols or y1 > rows:
                raise ValueError(f"polygon {self.id!r} extends outside the {rows}x{cols} grid")


def rasterize_polygon(poly: AnnotationPolygon, grid_shape: tuple[int, int]) -> np.ndarray:
    """Boolean mask of pixels whose centers lie inside the ring (even-odd rule)."""
    poly.validate(grid_shape)
    rows, cols = grid_shape
    yc = np.arange(rows) + 0.5
    xc = np.arange(cols) + 0.5
    inside = np.zeros((rows, cols), dtype=bool)
    v = np.array(poly.vertices)
    for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, axis=0)):
        if y1 == y2:
            continue
        # half-open rule on y so a vertex shared by two edges is crossed once
        spans = (yc >= min(y1, y2)) & (yc < max(y1, y2))
        if not spans.any():
            continue
        xcross = x1 + (yc[spans] - y1) * (x2 - x1) / (y2 - y1)
        inside[spans] ^= xc[None, :] < xcross[:, None]
    return inside


@dataclass
class Patch:
    pixels: np.ndarray  # (25, 25, 3) channel-last
    label: int
    origin: tuple  # (row, col) of the top-left corner
    source_polygon: str = ""


def window_origins(extent: int, size: int, stride: int, start: int = 0) -> list[int]:
    if extent < size:
        return []
    return [start + k * stride for k in range((extent - size) // stride + 1)]


def extract_patches(grid: Grid, polygons: Sequence[AnnotationPolygon], patch: int = PATCH,
                    stride: int = 13, min_overlap: float = 0.5) -> list[Patch]:
    """Tile ``patch``-sized windows over each polygon's bounding box.

    A window is kept when at least ``min_overlap`` of its pixels fall inside
    the polygon mask and it holds no nodata. Polygons whose bounding box is
    smaller than the window are skipped with a :class:`SamplingWarning`.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if grid.bands != 3:
        raise ValueError(f"expected a 3-band composite, got {grid.bands} bands")
    valid = grid.valid_mask().all(axis=0)
    values = grid.data[:, valid]
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ValueError("grid must be normalized to [0, 1] before patch extraction")

    out = []
    for poly in polygons:
        mask = rasterize_polygon(poly, grid.shape)
        x0, y0, x1, y1 = poly.bounds()
        r0, c0 = max(0, math.floor(y0)), max(0, math.floor(x0))
        r1, c1 = min(grid.height, math.ceil(y1)), min(grid.width, math.ceil(x1))
        rows = window_origins(r1 - r0, patch, stride, r0)
        cols = window_origins(c1 - c0, patch, stride, c0)
        if not rows or not cols:
            warnings.warn(f"polygon {poly.id!r}: bounding box {r1 - r0}x{c1 - c0} smaller than "
                          f"{patch}x{patch}, skipped", SamplingWarning, stacklevel=2)
            continue
        for r in rows:
            for c in cols:
                if mask[r:r + patch, c:c + patch].mean() < min_overlap:
                    continue
                if not valid[r:r + patch, c:c + patch].all():
                    continue
                pixels = grid.data[:, r:r + patch, c:c + patch].transpose(1, 2, 0).copy()
                out.append(Patch(pixels, poly.label, (r, c), poly.id))
    return out


@dataclass
class PatchSet:
    train: list
    test: list
    seed: int = 0
    assignment: dict = field(default_factory=dict)  # polygon id -> "train" | "test"
    normalization: dict | None = None

    @property
    def class_counts(self) -> dict:
        return {
            name: {LABEL_NAMES[k]: sum(p.label == k for p in patches) for k in LABEL_NAMES}
            for name, patches in (("train", self.train), ("test", self.test))
        }


def _choose_test_polygons(sizes: dict, order: Sequence, target: float) -> list:
    """Greedy pass over polygons in random order, adding each one that moves
    the test count closer to ``target``; keeps at least one polygon per side."""
    chosen, total = [], 0
    for pid in order:
        if len(chosen) == len(order) - 1:
            break
        if not chosen or abs(total + sizes[pid] - target) < abs(total - target):
            chosen.append(pid)
            total += sizes[pid]
    return chosen


def split(patches: Sequence[Patch], test_fraction: float = 0.2, seed: int = 0) -> PatchSet:
    """Assign whole polygons to train or test so no polygon feeds both splits."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    assignment = {}
    for label in sorted(LABEL_NAMES):
        sizes = {}
        for p in patches:
            if p.label == label:
                sizes[p.source_polygon] = sizes.get(p.source_polygon, 0) + 1
        if len(sizes) < 2:
            raise ValueError(f"label {LABEL_NAMES[label]!r} has {len(sizes)} polygon(s) with patches; "
                             "a polygon-disjoint split needs at least 2")
        ids = sorted(sizes)
        order = [ids[i] for i in rng.permutation(len(ids))]
        test_ids = set(_choose_test_polygons(sizes, order, test_fraction * sum(sizes.values())))
        for pid in ids:
            if pid in assignment:
                raise ValueError(f"polygon id {pid!r} carries patches of both labels")
            assignment[pid] = "test" if pid in test_ids else "train"
    train = [p for p in patches if assignment[p.source_polygon] == "train"]
    test = [p for p in patches if assignment[p.source_polygon] == "test"]
    return PatchSet(train, test, seed, assignment)


@dataclass
class AugmentationConfig:
    flip_horizontal: bool = True
    flip_vertical: bool = True
    max_rotation: float = 36.0  # degrees
    max_zoom: float = 0.1
    max_translation: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.max_rotation <= 180.0:
            raise ValueError("max_rotation must be in [0, 180] degrees")
        if not 0.0 <= self.max_zoom <= 0.5:
            raise ValueError("max_zoom must be in [0, 0.5]")
        if not 0.0 <= self.max_translation <= 0.5:
            raise ValueError("max_translation must be in [0, 0.5]")

    @classmethod
    def off(cls, seed: int = 0) -> "AugmentationConfig":
        return cls(False, False, 0.0, 0.0, 0.0, seed)

    @property
    def enabled(self) -> bool:
        return (self.flip_horizontal or self.flip_vertical or self.max_rotation > 0
                or self.max_zoom > 0 or self.max_translation > 0)


def draw_augmentation(cfg: AugmentationConfig, rng: np.random.Generator, size: int = PATCH) -> dict:
    """Draw one set of transform parameters; always consumes six uniforms."""
    u = rng.random(6)
    return {
        "flip_h": cfg.flip_horizontal and u[0] < 0.5,
        "flip_v": cfg.flip_vertical and u[1] < 0.5,
        "angle": (2 * u[2] - 1) * cfg.max_rotation,
        "zoom": 1.0 + (2 * u[3] - 1) * cfg.max_zoom,
        "dx": (2 * u[4] - 1) * cfg.max_translation * size,
        "dy": (2 * u[5] - 1) * cfg.max_translation * size,
    }


def apply_augmentation(pixels: np.ndarray, angle: float = 0.0, zoom: float = 1.0, dx: float = 0.0,
                       dy: float = 0.0, flip_h: bool = False, flip_v: bool = False) -> np.ndarray:
    """Flip, then rotate/zoom about the center and translate, with bilinear
    sampling and edge replication. ``pixels`` is (h, w, c)."""
    out = pixels
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1]
    if angle == 0.0 and zoom == 1.0 and dx == 0.0 and dy == 0.0:
        return np.clip(out, 0.0, 1.0).astype(pixels.dtype)

    h, w = out.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(angle)
    cos, sin = math.cos(t), math.sin(t)
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: output (x, y) -> source point, undoing translate, zoom, rotate
    x = (cc - cx - dx) / zoom
    y = (rr - cy - dy) / zoom
    src_x = cos * x + sin * y + cx
    src_y = -sin * x + cos * y + cy
    res = np.empty(out.shape, dtype=np.float64)
    for k in range(out.shape[2]):
        res[..., k] = ndimage.map_coordinates(out[..., k].astype(np.float64), [src_y, src_x],
                                              order=1, mode="nearest")
    return np.clip(res, 0.0, 1.0).astype(pixels.dtype)


def augment(patch: Patch, cfg: AugmentationConfig, rng: np.random.Generator) -> Patch:
    params = draw_augmentation(cfg, rng, patch.pixels.shape[0])
    return Patch(apply_augmentation(patch.pixels, **params), patch.label, patch.origin,
                 patch.source_polygon)


# --- persistence -----------------------------------------------------------

def read_polygons(path) -> list[AnnotationPolygon]:
    """Read a GeoJSON FeatureCollection of pixel-space polygons."""
    doc = json.loads(Path(path).read_text())
    if doc.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: expected a GeoJSON FeatureCollection")
    names = {v: k for k, v in LABEL_NAMES.items()}
    polys = []
    for i, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        if geom.get("type") != "Polygon":
            raise ValueError(f"{path}: feature {i} is not a Polygon")
        label = props.get("label")
        if label not in names:
            raise ValueError(f"{path}: feature {i} label must be 'landslide' or 'non_landslide'")
        pid = str(props.get("id", feat.get("id", i)))
        polys.append(AnnotationPolygon(geom["coordinates"][0], names[label], pid))
    return polys


def polygons_to_geojson(polygons: Iterable[AnnotationPolygon]) -> dict:
    feats = []
    for p in polygons:
        ring = [list(v) for v in p.vertices] + [list(p.vertices[0])]
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {"id": p.id, "label": LABEL_NAMES[p.label]},
        })
    return {"type": "FeatureCollection", "features": feats}


def write_polygons(polygons: Iterable[AnnotationPolygon], path) -> None:
    Path(path).write_text(json.dumps(polygons_to_geojson(polygons)) + "\n")


def save_patchset(ps: PatchSet, directory) -> None:
    """Manifest JSON plus ``<split>.bin`` (N x 25 x 25 x 3 float32 LE) and ``<split>_labels.bin``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "patch": PATCH,
        "channels": 3,
        "seed": ps.seed,
        "class_counts": ps.class_counts,
        "assignment": ps.assignment,
        "normalization": ps.normalization,
    }
    for name, patches in (("train", ps.train), ("test", ps.test)):
        arr = np.stack([p.pixels for p in patches]) if patches else np.zeros((0, PATCH, PATCH, 3))
        (d / f"{name}.bin").write_bytes(arr.astype("<f4").tobytes())
        (d / f"{name}_labels.bin").write_bytes(bytes(int(p.label) for p in patches))
        manifest[name] = {
            "count": len(patches),
            "origins": [list(p.origin) for p in patches],
            "polygons": [p.source_polygon for p in patches],
        }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_patchset(directory) -> PatchSet:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    size = manifest.get("patch", PATCH)
    splits = {}
    for name in ("train", "test"):
        meta = manifest[name]
        n = meta["count"]
        raw = (d / f"{name}.bin").read_bytes()
        if len(raw) != n * size * size * 3 * 4:
            raise ValueError(f"{d / name}.bin: size does not match {n} patches")
        labels = (d / f"{name}_labels.bin").read_bytes()
        if len(labels) != n:
            raise ValueError(f"{d / name}_labels.bin: expected {n} labels, found {len(labels)}")
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(n, size, size, 3)
        splits[name] = [Patch(arr[i].copy(), labels[i], tuple(meta["origins"][i]), meta["polygons"][i])
                        for i in range(n)]
    return PatchSet(splits["train"], splits["test"], manifest.get("seed", 0),
                    manifest.get("assignment", {}), manifest.get("normalization"))
