from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from unrect.config import INTERVAL_ANGLE
from unrect.errors import GuardError
from unrect.geometry import Rotation
from unrect.measure import (
    box_cover_measure,
    coordinate_measure,
    covering_tolerance,
    favard_length,
    favard_trace,
    merge_intervals,
    pairwise_merge_oracle,
    projected_length,
    scaled_cloud,
)
from unrect.sets import SegmentSpec, WeightedCloud, four_corner_cantor, rectifiable_curve

DATA = Path(__file__).parent / "data"


@pytest.fixture()
def favard_decay():
    return json.loads((DATA / "favard_decay.json").read_text())


def _unit_segment(samples: int = 1000):
    return rectifiable_curve(SegmentSpec(a=(0.0, 0.0), b=(1.0, 0.0)), samples)


def test_sweep_merge_matches_pairwise_oracle():
    rng = np.random.default_rng(11)
    starts = rng.uniform(0.0, 10.0, size=200)
    ends = starts + rng.uniform(0.0, 0.3, size=200)
    s, e = merge_intervals(starts, ends)
    so, eo = pairwise_merge_oracle(starts, ends)
    assert np.array_equal(s, so)
    assert np.array_equal(e, eo)


def test_touching_intervals_merge():
    s, e = merge_intervals(np.array([0.0, 1.0, 3.0]), np.array([1.0, 2.0, 4.0]))
    assert s.tolist() == [0.0, 3.0]
    assert e.tolist() == [2.0, 4.0]


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_four_corner_axis_shadow_halves_per_generation(depth):
    delta = 4.0**-depth
    est = projected_length(four_corner_cantor(depth), 0.0, delta)
    assert est.value == pytest.approx(2.0**-depth, rel=1e-9)
    assert est.method == "interval_union"


@pytest.mark.parametrize("depth", [1, 3, 5])
def test_four_corner_shadow_is_an_interval_in_the_special_direction(depth):
    est = projected_length(four_corner_cantor(depth), INTERVAL_ANGLE, 4.0**-depth)
    assert est.value == pytest.approx(1.0, rel=1e-9)


def test_segment_projected_length():
    cloud = _unit_segment()
    assert projected_length(cloud, 0.0, 1e-3).value == pytest.approx(1.0, abs=1e-9)
    assert projected_length(cloud, math.pi / 2, 1e-3).value == pytest.approx(1e-3, rel=1e-6)
    assert projected_length(scaled_cloud(cloud, 2.0), 0.0, 2e-3).value == pytest.approx(2.0, abs=1e-9)


def test_segment_favard_length():
    est = favard_length(_unit_segment(), 360, 1e-3)
    assert est.value == pytest.approx(2.0 / math.pi, abs=2e-3)
    assert est.method == "favard_quadrature"


def test_favard_length_drops_with_depth():
    values = [favard_length(four_corner_cantor(k), 64, 4.0**-k).value for k in (1, 2, 3, 4)]
    assert all(v <= 1.0 + 1e-9 for v in values)
    assert values[-1] < values[0]


def test_favard_trace_shape():
    rows = favard_trace(four_corner_cantor(2), 16, 1 / 16)
    assert len(rows) == 16
    assert rows[0].angle == 0.0
    assert rows[-1].angle < math.pi
    with pytest.raises(GuardError):
        favard_trace(four_corner_cantor(2), 4, 1 / 16)


def test_grid_cover_of_a_segment():
    delta = 0.01
    est = coordinate_measure(_unit_segment().points, 1, delta, offsets=4, seed=3)
    assert abs(est.value - 1.0) <= covering_tolerance(delta, 1)
    assert est.method == "grid_cover"


def test_box_cover_guards():
    cloud = four_corner_cantor(2)
    with pytest.raises(GuardError):
        box_cover_measure(cloud, 2, 0.1)
    with pytest.raises(GuardError):
        projected_length(cloud, 0.0, 0.0)


def test_favard_decay_matches_the_frozen_table(favard_decay):
    angles = favard_decay["angles"]
    expected = {row["depth"]: row["value"] for row in favard_decay["rows"]}
    values = [favard_length(four_corner_cantor(k), angles, 4.0**-k).value for k in sorted(expected)]
    for k, value in zip(sorted(expected), values):
        assert value == pytest.approx(expected[k], abs=favard_decay["tolerance"])
    assert all(b <= a for a, b in zip(values, values[1:]))
    # slow logarithmic decay: six generations only reach about 0.69 of the first
    assert values[-1] / values[0] == pytest.approx(0.69, abs=0.02)


@pytest.mark.parametrize("c", [0.5, 2.0, 3.0])
def test_box_cover_scales_like_the_first_power(c):
    cloud = _unit_segment()
    delta = 1e-2
    base = box_cover_measure(cloud, 1, delta, seed=1).value
    scaled = box_cover_measure(scaled_cloud(cloud, c), 1, delta, seed=1).value
    assert scaled <= 1.05 * c * base
    assert scaled >= c * base / 1.05


def test_favard_length_is_rotation_invariant():
    cloud = four_corner_cantor(3)
    rot = Rotation.from_angle(math.pi / 720 * 37)
    turned = cloud.mapped(rot.apply, tag="turned")
    before = favard_length(cloud, 720, 4.0**-3).value
    after = favard_length(turned, 720, 4.0**-3).value
    assert after == pytest.approx(before, abs=2e-3)


def test_random_unit_segment_casts_long_shadows():
    rng = np.random.default_rng(7)
    a = rng.uniform(0.0, 1.0, size=2)
    phi = rng.uniform(0.0, math.pi)
    b = a + np.array([math.cos(phi), math.sin(phi)])
    cloud = rectifiable_curve(SegmentSpec(a=tuple(map(float, a)), b=tuple(map(float, b))), 2000)
    rows = favard_trace(cloud, 720, 1e-3)
    long = sum(row.value >= 0.05 for row in rows)
    assert long >= 0.95 * len(rows)


def test_box_cover_single_point_and_filled_square():
    point = WeightedCloud(np.array([[0.3, 0.7]]), np.array([1.0]), 0, "point", 1.0, (np.array([0.3, 0.7]), np.array([0.3, 0.7])))
    est = box_cover_measure(point, 1, 0.1)
    assert est.cells == 1.0
    assert est.value == pytest.approx(0.1)
    axis = (np.arange(100) + 0.5) / 100
    square = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    # 0.1-cells aligned with the unit square: exactly 100 of them
    assert coordinate_measure(square, 2, 0.1, offsets=1).cells == 100.0
    assert coordinate_measure(square, 2, 0.1, offsets=1).value == pytest.approx(1.0)
