import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from autolabel.raster_io import HeightRaster, RgbRaster
from autolabel.regions import (
    Mask,
    Region,
    SelectionParams,
    area_filter,
    close_region,
    ground_level,
    height_filter,
    region_to_hbb,
    split_connected,
)
from autolabel.segmentation import ClusterAssignment, superpixel_stats
from oracles import direct_closing, flood_components


def region_of(pixels, h=1.8):
    return Region(Mask.from_pixels(pixels), h, 0)


def square(r0, c0, n):
    return {(r, c) for r in range(r0, r0 + n) for c in range(c0, c0 + n)}


# -- height filter ---------------------------------------------------------------


def three_cluster_scene():
    # three vertical strips, one superpixel each, at 0.1 / 2.0 / 10.0 m
    labels = np.repeat(np.arange(3), 4)[None, :].repeat(4, axis=0)
    hv = np.array([0.1, 2.0, 10.0])[labels].astype(np.float32)
    sp = superpixel_stats(labels, np.zeros(labels.shape + (3,)), HeightRaster(hv))
    return sp, ClusterAssignment(np.arange(3), 1.0, 1)


def test_height_interval_keeps_vehicle_cluster_only():
    sp, ca = three_cluster_scene()
    out = height_filter(ca, sp, (0.8, 3.5), ground=0.0)
    assert [r.source_cluster for r in out] == [1]
    assert out[0].avg_height == pytest.approx(2.0)
    assert out[0].mask.pixels() == {(r, c) for r in range(4) for c in range(4, 8)}


def test_height_is_relative_to_ground():
    sp, ca = three_cluster_scene()
    assert [r.source_cluster for r in height_filter(ca, sp, (0.8, 3.5), ground=8.0)] == [2]


def test_noise_and_nodata_clusters_dropped():
    labels = np.array([[0, 1, 2]])
    hv = np.array([[2.0, 2.0, -9999.0]], np.float32)
    sp = superpixel_stats(labels, np.zeros((1, 3, 3)), HeightRaster(hv))
    ca = ClusterAssignment(np.array([-1, 0, 1]), 1.0, 1)
    assert [r.source_cluster for r in height_filter(ca, sp, (0.8, 3.5), ground=0.0)] == [0]


def test_ground_level_is_median_of_valid():
    hv = np.array([[0.0, 1.0, 2.0, -9999.0, 100.0]], np.float32)
    assert ground_level(HeightRaster(hv)) == 1.5


# -- area filter ------------------------------------------------------------------


def test_area_predicate():
    regions = [region_of(square(0, 0, 1) | {(0, k) for k in range(5)}),
               region_of({(0, k) for k in range(50)}),
               region_of({(0, k) for k in range(150)})]
    assert [r.area for r in regions] == [5, 50, 150]
    assert [r.area for r in area_filter(regions, 100, 10)] == [50]


@given(st.lists(st.integers(1, 200), max_size=12), st.integers(2, 150), st.integers(1, 100))
def test_area_filter_properties(areas, th, floor):
    floor = min(floor, th - 1)
    regions = [region_of({(0, k) for k in range(a)}) for a in areas]
    out = area_filter(regions, th, floor)
    assert all(floor <= r.area < th for r in out)
    assert [r.area for r in out] == sorted((r.area for r in out), reverse=True)
    assert area_filter(out, th, floor) == out


def test_area_and_height_filters_commute():
    sp, ca = three_cluster_scene()
    by_h = area_filter(height_filter(ca, sp, (0.0, 20.0), ground=0.0), 17, 5)
    by_a = [r for r in height_filter(ca, sp, (0.0, 20.0), ground=0.0) if 5 <= r.area < 17]
    assert by_h == sorted(by_a, key=lambda r: -r.area)


def test_selection_defaults_scale_with_gsd():
    th, floor = SelectionParams().area_bounds(0.1)
    assert (th, floor) == pytest.approx((5000.0, 200.0))
    with pytest.raises(ValueError):
        SelectionParams(height_low=3.0, height_high=1.0)


# -- closing / connectivity -------------------------------------------------------------


def test_closing_examples():
    sq = square(0, 0, 10)
    assert close_region(sq, 1).pixels() == sq
    holed = sq - {(5, 5)}
    assert close_region(holed, 1).pixels() == sq
    apart = {(0, 0), (0, 10)}
    assert close_region(apart, 1).pixels() == apart


pixel_sets = st.sets(st.tuples(st.integers(0, 12), st.integers(0, 12)), min_size=1, max_size=60)


@given(pixel_sets, st.integers(0, 2))
def test_closing_matches_direct_morphology(pixels, k):
    got = close_region(pixels, k).pixels()
    expect = direct_closing(pixels, k) | set(pixels) if k else set(pixels)
    assert got == expect
    assert got >= set(pixels)
    assert close_region(got, k).pixels() == got


def test_split_examples():
    assert len(split_connected(square(0, 0, 3))) == 1
    diag = square(0, 0, 2) | square(2, 2, 2)
    assert len(split_connected(diag)) == 2


@given(arrays(bool, (32, 32)))
def test_split_matches_flood_fill(grid):
    parts = split_connected(Mask.from_bool(grid))
    got = sorted(sorted(p.mask.pixels()) for p in parts)
    expect = sorted(sorted(c) for c in flood_components(grid))
    assert got == expect


# -- corner HBB ----------------------------------------------------------------------


def blank(h=40, w=40):
    return RgbRaster(np.full((h, w, 3), 90, np.uint8))


def test_rectangle_box():
    rect = {(r, c) for r in range(20) for c in range(10)}
    px = np.full((40, 40, 3), 90, np.uint8)
    px[:20, :10] = 230
    b = region_to_hbb(region_of(rect), RgbRaster(px))
    assert (b.x_c, b.y_c, b.w, b.h) == (4.5, 9.5, 10.0, 20.0)


def test_single_pixel_box():
    b = region_to_hbb(region_of({(7, 9)}), blank())
    assert (b.x_c, b.y_c, b.w, b.h) == (9.0, 7.0, 1.0, 1.0)


def test_l_shape_box_covers_mask():
    ell = {(r, c) for r in range(20) for c in range(3)} | {(r, c) for r in range(17, 20) for c in range(10)}
    px = np.full((40, 40, 3), 90, np.uint8)
    for r, c in ell:
        px[r, c] = 240
    b = region_to_hbb(region_of(ell), RgbRaster(px))
    assert (b.w, b.h) == (10.0, 20.0)
    assert all(b.contains_pixel(r, c) for r, c in ell)


@given(pixel_sets, st.integers(0, 10_000))
def test_box_always_contains_region(pixels, seed):
    img = RgbRaster(np.random.default_rng(seed).integers(0, 256, (16, 16, 3), dtype=np.uint8))
    b = region_to_hbb(region_of(pixels), img)
    assert all(b.contains_pixel(r, c) for r, c in pixels)
    assert b.w >= 1 and b.h >= 1
