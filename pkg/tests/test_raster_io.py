import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from autolabel.raster_io import (
    HeightRaster,
    RasterFormatError,
    RgbRaster,
    load_dsm,
    load_vis,
    resample,
    save_dsm,
    save_vis,
    validate_alignment,
)


def rgb(h, w, seed=0):
    return RgbRaster(np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8))


# -- PPM ----------------------------------------------------------------------


def test_load_tiny_black_ppm(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    r = load_vis(p)
    assert r.dims == (2, 2)
    assert not r.pixels.any()


def test_ppm_round_trip_is_byte_identical(tmp_path):
    r = rgb(100, 100, seed=3)
    p = tmp_path / "r.ppm"
    save_vis(r, p)
    assert p.read_bytes() == b"P6\n100 100\n255\n" + r.pixels.tobytes()
    assert load_vis(p) == r


def test_ppm_header_comments_are_skipped(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([1, 2, 3]))
    assert load_vis(p).pixels[0, 0].tolist() == [1, 2, 3]


def test_p5_is_rejected(tmp_path):
    p = tmp_path / "g.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    with pytest.raises(RasterFormatError, match="unsupported format"):
        load_vis(p)


def test_truncated_ppm_reports_offset(tmp_path):
    p = tmp_path / "t.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(RasterFormatError, match="truncated") as ei:
        load_vis(p)
    assert ei.value.offset == len(b"P6\n4 4\n255\n") + 10


@pytest.mark.parametrize("blob", [b"", b"P6", b"P6\nx 2\n255\n", b"P6\n2 2\n65535\n", b"JUNK"])
def test_malformed_ppm_headers(tmp_path, blob):
    p = tmp_path / "m.ppm"
    p.write_bytes(blob)
    with pytest.raises(RasterFormatError):
        load_vis(p)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_vis("/nonexistent/file.ppm")


@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3))))
def test_ppm_round_trip_property(tmp_path_factory, px):
    p = tmp_path_factory.mktemp("ppm") / "x.ppm"
    save_vis(RgbRaster(px), p)
    assert np.array_equal(load_vis(p).pixels, px)


# -- DSMF -----------------------------------------------------------------------


def test_load_single_cell_dsm(tmp_path):
    p = tmp_path / "a.dsm"
    p.write_bytes(b"DSMF 1\n1 1\n-9999\n" + np.array([2.5], "<f4").tobytes())
    d = load_dsm(p)
    assert d.values.shape == (1, 1) and d.values[0, 0] == 2.5


def test_dsm_payload_size_mismatch(tmp_path):
    p = tmp_path / "a.dsm"
    p.write_bytes(b"DSMF 1\n4 4\n-9999\n" + np.zeros(15, "<f4").tobytes())
    with pytest.raises(RasterFormatError, match="mismatch"):
        load_dsm(p)


def test_dsm_bad_magic(tmp_path):
    p = tmp_path / "a.dsm"
    p.write_bytes(b"DSMX 1\n1 1\n0\n" + bytes(4))
    with pytest.raises(RasterFormatError, match="magic"):
        load_dsm(p)


def test_dsm_round_trip_bitwise(tmp_path):
    vals = np.random.default_rng(1).normal(0, 50, (32, 32)).astype(np.float32)
    vals[3, 4] = -9999.0
    d = HeightRaster(vals)
    p = tmp_path / "r.dsm"
    save_dsm(d, p)
    back = load_dsm(p)
    assert back.values.tobytes() == vals.tobytes()
    assert back == d
    assert not back.valid[3, 4] and back.valid.sum() == 32 * 32 - 1


def test_dsm_nan_nodata_round_trip(tmp_path):
    vals = np.array([[1.0, np.nan]], dtype=np.float32)
    d = HeightRaster(vals, nodata=float("nan"))
    p = tmp_path / "n.dsm"
    save_dsm(d, p)
    back = load_dsm(p)
    assert math.isnan(back.nodata) and back.valid.tolist() == [[True, False]]


@given(
    arrays(np.float32, st.tuples(st.integers(1, 10), st.integers(1, 10)),
           elements=st.floats(-1e6, 1e6, width=32)),
)
def test_dsm_round_trip_property(tmp_path_factory, vals):
    p = tmp_path_factory.mktemp("dsm") / "x.dsm"
    save_dsm(HeightRaster(vals, nodata=-9999.5), p)
    assert load_dsm(p).values.tobytes() == vals.tobytes()


def test_non_finite_heights_rejected():
    with pytest.raises(ValueError):
        HeightRaster(np.array([[np.inf]], dtype=np.float32))


# -- alignment --------------------------------------------------------------------


@pytest.mark.parametrize("vis_dims,dsm_dims,ok", [((10, 10), (10, 10), True), ((10, 10), (5, 5), False),
                                                  ((608, 304), (608, 304), True)])
def test_alignment(vis_dims, dsm_dims, ok):
    v = RgbRaster(np.zeros((vis_dims[1], vis_dims[0], 3), np.uint8))
    d = HeightRaster(np.zeros((dsm_dims[1], dsm_dims[0]), np.float32))
    rep = validate_alignment(v, d)
    assert rep.aligned is ok
    assert rep.vis_dims == vis_dims and rep.dsm_dims == dsm_dims
    if not ok:
        assert "10x10" in rep.message and "5x5" in rep.message


# -- resampling -----------------------------------------------------------------------


def test_factor_one_is_identity():
    r = rgb(7, 9)
    assert resample(r, 1, "down-then-up") == r
    d = HeightRaster(np.ones((3, 3), np.float32))
    assert resample(d, 1) == d


def test_factor_below_one_rejected():
    with pytest.raises(ValueError):
        resample(rgb(4, 4), 0.5)


def test_constant_preserved():
    d = HeightRaster(np.full((64, 64), 3.25, np.float32))
    out = resample(d, 2, "down-then-up")
    assert out.dims == (64, 64)
    assert np.allclose(out.values, 3.25)
    v = RgbRaster(np.full((64, 64, 3), 77, np.uint8))
    assert (resample(v, 2, "down-then-up").pixels == 77).all()


def test_checkerboard_variance_drops():
    board = ((np.indices((64, 64)).sum(0) % 2) * 10.0).astype(np.float32)
    out = resample(HeightRaster(board), 4, "down-then-up").values
    assert out.min() >= board.min() and out.max() <= board.max()
    assert out.var() < board.var()


def test_down_dims_use_ceiling():
    out = resample(rgb(10, 7), 3, "down")
    assert out.dims == (3, 4)


@given(st.integers(1, 40), st.integers(1, 40), st.floats(1.0, 9.0))
def test_down_then_up_keeps_dims(h, w, f):
    d = HeightRaster(np.random.default_rng(h * 41 + w).normal(0, 1, (h, w)).astype(np.float32))
    assert resample(d, f, "down-then-up").dims == (w, h)
    assert resample(d, f, "down").dims == (math.ceil(w / f), math.ceil(h / f))


@given(st.sampled_from([1, 2, 3, 4]), st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_area_average_preserves_mean(f, by, bx, seed):
    vals = np.random.default_rng(seed).normal(0, 10, (by * f, bx * f)).astype(np.float32)
    out = resample(HeightRaster(vals), f, "down")
    assert abs(out.values.mean() - vals.mean()) < 1e-3


def test_nodata_excluded_from_average():
    vals = np.array([[1.0, -9999.0], [3.0, -9999.0]], np.float32)
    out = resample(HeightRaster(vals), 2, "down")
    assert out.values[0, 0] == pytest.approx(2.0)
    allbad = resample(HeightRaster(np.full((2, 2), -9999.0, np.float32)), 2, "down")
    assert not allbad.valid.any()
