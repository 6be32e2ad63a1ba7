from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from unrect.errors import GuardError
from unrect.sets import (
    FOUR_CORNER,
    GraphSpec,
    SegmentSpec,
    WeightedCloud,
    curve_from_descriptor,
    curve_length,
    four_corner_cantor,
    ifs_set,
    rectifiable_curve,
)


def test_four_corner_generation():
    cloud = four_corner_cantor(2)
    assert cloud.count == 16
    assert cloud.total_mass == pytest.approx(1.0)
    assert np.allclose(cloud.weights, 1.0 / 16)
    assert cloud.cell_size == pytest.approx(1.0 / 16)
    assert sorted(set(np.round(cloud.points[:, 0], 12))) == pytest.approx([1 / 32, 7 / 32, 25 / 32, 31 / 32])


def test_four_corner_depth_guard():
    with pytest.raises(GuardError):
        four_corner_cantor(9)
    with pytest.raises(GuardError):
        ifs_set(FOUR_CORNER, -1)


def test_segment_weights_carry_length():
    cloud = rectifiable_curve(SegmentSpec(a=(0.0, 0.0), b=(3.0, 4.0)), 100)
    assert cloud.total_mass == pytest.approx(5.0)
    assert np.allclose(cloud.weights, 0.05)
    assert cloud.generator == "segment"


def test_graph_length_and_samples():
    spec = GraphSpec(coefficients=[0.0, 0.0, 1.0], x_range=(0.0, 1.0))
    exact = (2.0 * math.sqrt(5.0) + math.asinh(2.0)) / 4.0
    assert curve_length(spec) == pytest.approx(exact, rel=1e-12)
    cloud = rectifiable_curve(spec, 500)
    assert cloud.total_mass == pytest.approx(exact)
    assert np.allclose(cloud.points[:, 1], cloud.points[:, 0] ** 2)


def test_curve_descriptor_dispatch():
    spec = curve_from_descriptor({"kind": "segment", "a": [0, 0], "b": [1, 0]})
    assert isinstance(spec, SegmentSpec)
    with pytest.raises(GuardError):
        curve_from_descriptor({"kind": "spiral"})


def test_cloud_guards():
    with pytest.raises(GuardError):
        WeightedCloud(np.zeros((2, 2)), np.array([0.5, -0.5]), 0, "bad", 0.0, (np.zeros(2), np.zeros(2)))
    with pytest.raises(GuardError):
        WeightedCloud(np.zeros((2, 2)), np.array([0.5, 0.5]), 0, "bad", 2.0, (np.zeros(2), np.zeros(2)))


def test_restricted_and_mapped_keep_weights():
    cloud = four_corner_cantor(1)
    left = cloud.restricted(cloud.points[:, 0] < 0.5)
    assert left.count == 2
    assert left.total_mass == pytest.approx(0.5)
    moved = cloud.mapped(lambda p: p + 1.0, tag="shift")
    assert moved.total_mass == cloud.total_mass
    assert moved.generator.endswith("|shift")
    assert np.allclose(moved.points, cloud.points + 1.0)


@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5, 6])
def test_four_corner_squares_nest(depth):
    child, parent = four_corner_cantor(depth), four_corner_cantor(depth - 1)
    side = 4.0**-depth
    gap, owner = cKDTree(parent.points).query(child.points, p=np.inf)
    # each child square sits inside a parent square four times its side
    assert np.all(gap <= 0.5 * (4.0 * side - side) + 1e-12)
    assert np.bincount(owner, minlength=parent.count).tolist() == [4] * parent.count

