import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarslide.raster import (
    RECIPES, Grid, GridFormatError, NormalizationSpec, band_difference, compose, normalize,
    read_grid, write_grid,
)

GT = (1000.0, 10.0, 0.0, 5000.0, 0.0, -10.0)


def single(values, name="b", nodata=None, gt=GT):
    return Grid(np.asarray(values, dtype=np.float32)[None], gt, nodata, [name])


class TestGridFile:
    def test_zero_grid_round_trip(self, tmp_path):
        g = Grid(np.zeros((1, 3, 4), np.float32), GT)
        write_grid(g, tmp_path / "z.grid")
        back = read_grid(tmp_path / "z.grid")
        assert back == g and back.width == 4 and back.height == 3

    def test_header_contents(self, tmp_path):
        g = Grid(np.ones((2, 2, 3), np.float32), GT, -9999.0, ["VV_before", "VV_after"])
        write_grid(g, tmp_path / "h.grid")
        header = json.loads((tmp_path / "h.grid").read_text())
        assert header == {"width": 3, "height": 2, "bands": 2, "dtype": "f32le", "geotransform": list(GT),
                          "nodata": -9999.0, "band_names": ["VV_before", "VV_after"]}

    def test_payload_bytes(self, tmp_path):
        write_grid(Grid(np.full((1, 1, 1), 3.25, np.float32), GT), tmp_path / "one.grid")
        raw = (tmp_path / "one.bin").read_bytes()
        assert raw == struct.pack("<f", 3.25) == bytes.fromhex("00005040")

    def test_band_sequential_layout(self, tmp_path):
        data = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
        write_grid(Grid(data, GT), tmp_path / "l.grid")
        np.testing.assert_array_equal(np.frombuffer((tmp_path / "l.bin").read_bytes(), "<f4"), np.arange(12))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_random_round_trip_bitwise(self, tmp_path_factory, b, h, w, seed):
        d = tmp_path_factory.mktemp("rt")
        data = np.random.default_rng(seed).standard_normal((b, h, w)).astype(np.float32)
        g = Grid(data, GT, None if seed % 2 else -1.5, [f"x{i}" for i in range(b)])
        write_grid(g, d / "g.grid")
        back = read_grid(d / "g.bin")
        assert back == g

    def test_size_mismatch(self, tmp_path):
        write_grid(Grid(np.zeros((1, 2, 2), np.float32), GT), tmp_path / "m.grid")
        header = json.loads((tmp_path / "m.grid").read_text())
        header["bands"] = 2
        (tmp_path / "m.grid").write_text(json.dumps(header))
        with pytest.raises(GridFormatError, match="payload"):
            read_grid(tmp_path / "m.grid")

    def test_malformed_header(self, tmp_path):
        (tmp_path / "bad.grid").write_text("{not json")
        (tmp_path / "bad.bin").write_bytes(b"")
        with pytest.raises(GridFormatError):
            read_grid(tmp_path / "bad.grid")
        (tmp_path / "bad.grid").write_text(json.dumps({"width": 1}))
        with pytest.raises(GridFormatError, match="missing"):
            read_grid(tmp_path / "bad.grid")

    def test_non_finite_rejected(self, tmp_path):
        write_grid(Grid(np.zeros((1, 1, 2), np.float32), GT), tmp_path / "n.grid")
        (tmp_path / "n.bin").write_bytes(struct.pack("<2f", 1.0, float("nan")))
        with pytest.raises(GridFormatError, match="non-finite"):
            read_grid(tmp_path / "n.grid")

    def test_nodata_preserved_and_excluded(self, tmp_path):
        # hand-written reference file: 3x1 grid with one sentinel pixel
        (tmp_path / "nd.grid").write_text(json.dumps({
            "width": 3, "height": 1, "bands": 1, "dtype": "f32le",
            "geotransform": [0, 1, 0, 0, 0, -1], "nodata": -9999, "band_names": ["v"]}))
        (tmp_path / "nd.bin").write_bytes(struct.pack("<3f", 2.0, -9999.0, 6.0))
        g = read_grid(tmp_path / "nd.grid")
        assert g.nodata == -9999.0 and g.data[0, 0, 1] == -9999.0
        out, spec = normalize(g)
        assert spec.lo == [2.0] and spec.hi == [6.0]
        np.testing.assert_array_equal(out.data[0, 0], [0.0, -9999.0, 1.0])

    def test_invalid_grids(self):
        with pytest.raises(GridFormatError):
            Grid(np.zeros((0, 2, 2), np.float32), GT)
        with pytest.raises(GridFormatError):
            Grid(np.zeros((1, 2, 2), np.float32), (0, -1, 0, 0, 0, -1))
        with pytest.raises(GridFormatError):
            Grid(np.array([[[np.inf]]], np.float32), GT)

    def test_unwritable_path(self, tmp_path):
        (tmp_path / "file").write_text("x")
        with pytest.raises(OSError):
            write_grid(Grid(np.zeros((1, 1, 1), np.float32), GT), tmp_path / "file" / "g.grid")


class TestBandDifference:
    def test_equal_inputs(self):
        a = single([[1.5, 2.0], [3.0, 4.0]])
        assert not band_difference(a, a).data.any()

    def test_definition(self):
        np.testing.assert_array_equal(band_difference(single([[5, 2]]), single([[1, 3]])).data[0, 0], [4, -1])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            band_difference(single(np.zeros((3, 3))), single(np.zeros((3, 4))))

    def test_geotransform_mismatch(self):
        other = (0.0, 10.0, 0.0, 5000.0, 0.0, -10.0)
        with pytest.raises(ValueError):
            band_difference(single([[1]]), single([[1]], gt=other))

    def test_nodata_propagates(self):
        d = band_difference(single([[5, -1, 3]], nodata=-1), single([[1, 1, 2]]))
        np.testing.assert_array_equal(d.data[0, 0], [4, -1, 1])
        assert d.nodata == -1


def random_sources(seed, shape=(6, 7)):
    rng = np.random.default_rng(seed)
    names = ["VV_before", "VV_after", "VH_before", "VH_after", "DEM", "Slope", "Red", "Green", "Blue"]
    return {n: single(rng.standard_normal(shape) * 10, n) for n in names}


class TestCompose:
    def test_baa(self):
        src = random_sources(0)
        g = compose("BAA", {k: src[k] for k in ("VV_before", "VV_after")})
        assert g.band_names == ["VV_before", "VV_after", "VV_after"]
        for k, name in enumerate(g.band_names):
            assert g.data[k].tobytes() == src[name].data[0].tobytes()

    def test_ssd(self):
        g = compose("SSD", random_sources(1))
        assert g.band_names == ["VV_after", "VH_after", "DEM"]

    def test_bac_difference(self):
        g = compose("BAC", {"VV_before": single([[1, 4]]), "VV_after": single([[3, 2]])})
        np.testing.assert_array_equal(g.data[2, 0], [2, -2])
        assert g.band_names[2] == "VV_after-VV_before"

    def test_table_mapping(self):
        table = {
            "RGB": ("Red", "Green", "Blue"),
            "SSD": ("VV_after", "VH_after", "DEM"),
            "SSS": ("VV_after", "VH_after", "Slope"),
            "BAD": ("VV_before", "VV_after", "DEM"),
            "BAS": ("VV_before", "VV_after", "Slope"),
            "HHH": ("VH_before", "VH_after", "VH_after"),
            "BAA": ("VV_before", "VV_after", "VV_after"),
            "BAC": ("VV_before", "VV_after", ("VV_after", "VV_before")),
            "BAH": ("VV_before", "VV_after", "VH_after"),
        }
        assert {k: v.bands for k, v in RECIPES.items()} == table

    def test_missing_source(self):
        with pytest.raises(KeyError, match="DEM"):
            compose("SSD", {"VV_after": single([[1]]), "VH_after": single([[1]])})

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compose("BAA", {"VV_before": single(np.zeros((2, 2))), "VV_after": single(np.zeros((2, 3)))})

    def test_unknown_recipe(self):
        with pytest.raises(ValueError):
            compose("XYZ", random_sources(0))

    def test_pixel_permutation(self):
        src = random_sources(2)
        perm = np.random.default_rng(0).permutation(42)
        shuffled = {k: single(g.data[0].ravel()[perm].reshape(6, 7), k) for k, g in src.items()}
        for name in RECIPES:
            a = compose(name, src).data.reshape(3, -1)[:, perm]
            b = compose(name, shuffled).data.reshape(3, -1)
            assert a.tobytes() == b.tobytes()


class TestNormalize:
    def test_endpoints(self):
        out, spec = normalize(single([[2, 4, 6]]))
        np.testing.assert_array_equal(out.data[0, 0], [0, 0.5, 1])
        assert (spec.mode, spec.lo, spec.hi) == ("fixed", [2.0], [6.0])

    def test_constant_band(self):
        out, _ = normalize(single([[7, 7, 7]]))
        np.testing.assert_array_equal(out.data[0, 0], [0, 0, 0])

    def test_replay(self):
        out, _ = normalize(single([[5]]), NormalizationSpec("fixed", [0.0], [10.0]))
        assert out.data[0, 0, 0] == 0.5

    def test_replay_is_consistent_and_repeat_is_idempotent(self):
        g = Grid(np.random.default_rng(0).standard_normal((3, 8, 8)).astype(np.float32) * 50, GT)
        once, spec = normalize(g)
        replayed, _ = normalize(g, spec)
        np.testing.assert_allclose(replayed.data, once.data, atol=1e-6)
        twice, _ = normalize(once)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-6)

    def test_unit_interval(self):
        g = Grid(np.random.default_rng(1).standard_normal((2, 5, 5)).astype(np.float32), GT)
        out, _ = normalize(g)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_fixed_needs_stats(self):
        with pytest.raises(ValueError):
            normalize(single([[1]]), NormalizationSpec("fixed"))
