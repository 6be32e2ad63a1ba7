from __future__ import annotations

import math

import numpy as np
import pytest

from unrect.config import INTERVAL_ANGLE
from unrect.cover import (
    IterationState,
    build_cover,
    check_cauchy,
    choose_chart_radius,
    composition_bound,
    default_spacing,
    epsilon_schedule,
    favard_bound_check,
    glue_global,
    iterate_element,
    select_collar,
)
from unrect.errors import CoverError, InfeasibleError, SupportOverlapError
from unrect.flow import conjugated_rotation, cutoff_field, generator_field, integrate_flow
from unrect.geometry import BallRegion, BoxRegion, Rotation
from unrect.maps import Affine, Identity, box_grid, projection_map
from unrect.sets import WeightedCloud, empty_cloud, four_corner_cantor

CENTER = np.array([0.5, 0.5])


def _state(cover, i, zetas):
    element = cover.elements[i]
    cloud = empty_cloud()
    return IterationState(
        index=i,
        parent=cover.parents[i],
        element=element,
        f=projection_map(0.0),
        cloud=cloud,
        current=cloud,
        sigma=1.0,
        schedule=[0.1],
        region=element,
        samples=element.grid.centers(element.mask),
        zetas=list(zetas),
    )


def test_epsilon_schedule_sums_below_budget():
    schedule = epsilon_schedule(0.1, 3)
    assert schedule == pytest.approx([0.05, 0.025, 0.0125])
    assert math.fsum(schedule) < 0.1
    assert default_spacing([0, 0], [1, 1]) == pytest.approx(math.sqrt(2.0) / 512)


def test_cover_elements_are_disjoint_components():
    charts = [BallRegion(np.array([0.3, 0.5]), 0.3), BallRegion(np.array([0.7, 0.5]), 0.3)]
    cover = build_cover(charts, 1 / 64)
    assert len(cover) == 2
    assert cover.parents == [0, 1]
    overlap = cover.elements[0].mask & cover.elements[1].mask
    assert not overlap.any()
    idx = cover.element_index([[0.3, 0.5], [0.9, 0.5], [0.0, 0.0]])
    assert idx.tolist() == [0, 1, -1]
    assert np.allclose(cover.center_of(1), [0.7, 0.5])


def test_cover_must_cover_the_domain():
    charts = [BallRegion(np.array([0.5, 0.5]), 0.3)]
    with pytest.raises(CoverError) as info:
        build_cover(charts, 1 / 32, domain=BoxRegion(np.zeros(2), np.ones(2)))
    assert info.value.uncovered > 0


def test_chart_radius_avoids_mass_on_the_shell():
    cloud = WeightedCloud(np.array([[1.0, 0.5]]), np.array([1.0]), 0, "point", 1.0, (np.array([1.0, 0.5]), np.array([1.0, 0.5])))
    r = choose_chart_radius(cloud, CENTER, 0.5, 0.01, seed=4)
    assert abs(r - 0.5) >= 0.01
    assert 0.475 <= r <= 0.525


def test_collar_selection():
    cover = build_cover([BoxRegion(np.zeros(2), np.ones(2))], 1 / 64)
    region = cover.elements[0]
    mu = select_collar(region, [[0.5, 0.5]], [1.0], 1.0, 1)
    assert mu == pytest.approx(region.inradius() / 4.0)
    with pytest.raises(InfeasibleError):
        select_collar(region, [[0.01, 0.5]], [1.0], 1.0, 1)


def test_cauchy_check_on_known_snapshots():
    pts = np.zeros((4, 2))
    jac = np.broadcast_to(np.eye(2), (4, 2, 2)).copy()
    snaps = [(pts, jac), (pts + [0.05, 0.0], jac), (pts + [0.075, 0.0], jac)]
    report = check_cauchy(snaps, [0.05, 0.025])
    assert report.ok
    assert len(report.differences) == 3
    assert report.tail_bound == pytest.approx(0.025)
    bad = [(pts, jac), (pts + [0.2, 0.0], jac), (pts + [0.2, 0.0], jac)]
    report = check_cauchy(bad, [0.05, 0.025])
    assert not report.ok
    assert report.offending_step == 1


def test_composition_bound_holds():
    zeta = conjugated_rotation(Identity(2), Rotation.from_angle(0.01))
    report = composition_bound(projection_map(0.0), zeta, Affine(2.0 * np.eye(2)), box_grid([-1, -1], [1, 1], 9))
    assert report.ok
    assert report.g_lipschitz == pytest.approx(2.0)
    assert report.distance <= report.bound


def test_gluing_disjoint_supports():
    charts = [BallRegion(np.array([0.25, 0.5]), 0.2), BallRegion(np.array([0.75, 0.5]), 0.2)]
    cover = build_cover(charts, 1 / 64)
    c0 = np.array([0.25, 0.5])
    V = generator_field(Affine.translation(-c0), np.array([[0.0, -0.3], [0.3, 0.0]]))
    W = cutoff_field(V, BallRegion(c0, 0.05), 0.05)
    zeta = integrate_flow(W, 0.1, steps=16)
    states = [_state(cover, 0, [zeta]), _state(cover, 1, [Identity(2)])]
    glued, report = glue_global(states, cover)
    assert report.ok
    assert report.elements == 2
    pts = np.array([[0.27, 0.5], [0.75, 0.5], [0.0, 0.0]])
    assert np.allclose(glued.evaluate(pts), zeta.evaluate(pts))
    assert np.allclose(glued.inverse(glued.evaluate(pts)), pts, atol=1e-9)


def test_gluing_rejects_overlapping_supports():
    charts = [BallRegion(np.array([0.25, 0.5]), 0.2), BallRegion(np.array([0.75, 0.5]), 0.2)]
    cover = build_cover(charts, 1 / 32)
    shift = Affine.translation([0.01, 0.0])
    states = [_state(cover, 0, [shift]), _state(cover, 1, [shift])]
    with pytest.raises(SupportOverlapError) as info:
        glue_global(states, cover)
    assert info.value.exit_code == 4
    assert info.value.report.min_gap == 0.0


def test_favard_bound_for_the_identity():
    cloud = four_corner_cantor(2)
    before, after, ok = favard_bound_check(cloud, cloud, 1.0, 32, 1 / 16)
    assert before == after
    assert ok


def test_iteration_ledger_on_the_cantor_set():
    cover = build_cover([BallRegion(CENTER, 1.0)], 1 / 32)
    schedule = epsilon_schedule(0.5, 3)
    state = iterate_element(
        projection_map(INTERVAL_ANGLE),
        four_corner_cantor(4),
        cover.elements[0],
        schedule,
        3,
        4.0**-4,
        seed=0,
        rho=0.05,
        trials=16,
        center=cover.center_of(0),
    )
    assert [row.step for row in state.ledger] == [0, 1, 2, 3]
    first = state.ledger[1]
    assert first.collar_mass == 0.0
    assert first.image_measure == 0.0
    assert first.step_distance <= schedule[0]
    assert state.ledger[-1].cum_distance <= math.fsum(schedule)
    assert state.details[0].t_star >= 1e-3
    assert [d.terminated for d in state.details] == [False, True, True]
    assert state.controlled.all()
    assert state.cauchy is not None and state.cauchy.ok
    summary = state.summary()
    assert summary.stabilised_fraction == pytest.approx(1.0)
    assert summary.active_mass == 0.0
    assert summary.sigma > 0.0


def _with_rim(element, weight=0.01, count=8):
    """Four-corner cloud plus ``count`` points on the element's outermost cells and ``count`` outside it."""
    centers = element.grid.centers(element.mask)
    d = element.boundary_distance(centers)
    rim = centers[d < element.grid.h]
    rim = rim[np.linspace(0, len(rim) - 1, count).astype(int)]
    angles = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    outside = CENTER + 1.2 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    cantor = four_corner_cantor(4)
    pts = np.concatenate([cantor.points, rim, outside])
    w = np.concatenate([cantor.weights, np.full(2 * count, weight)])
    return WeightedCloud(pts, w, 4, "four-corner+rim", math.fsum(w), (pts.min(axis=0), pts.max(axis=0)), cantor.cell_size)


def test_collar_accepts_points_near_but_off_the_shell():
    cover = build_cover([BallRegion(CENTER, 0.6)], 1 / 256)
    region = cover.elements[0]
    cloud = four_corner_cantor(4)
    inside = region.contains(cloud.points)
    mu = select_collar(region, cloud.points[inside], cloud.weights[inside], 1.0, 1)
    assert 2.0 * region.grid.h <= mu <= region.inradius() / 4.0
    d = region.boundary_distance(cloud.points[inside])
    assert math.fsum(cloud.weights[inside][d < mu]) < 1.0 / 3.0


def test_collar_rejects_a_point_exactly_on_the_shell():
    cover = build_cover([BoxRegion(np.zeros(2), np.ones(2))], 1 / 64)
    region = cover.elements[0]
    mu0 = region.inradius() / 4.0
    assert mu0 == 63 / 512
    # nearest interface point is (0, 0.5078125), at distance exactly mu0
    assert select_collar(region, [[mu0, 0.5078125]], [1.0], 1.0, 1) == mu0 / 2.0
    assert select_collar(region, [[mu0 + 1 / 256, 0.5078125]], [1.0], 1.0, 1) == mu0


def test_collar_on_a_deep_cantor_cloud():
    cover = build_cover([BallRegion(CENTER, 1.0)], 1 / 64)
    cloud = four_corner_cantor(6)
    mu = select_collar(cover.elements[0], cloud.points, cloud.weights, 1.0, 1)
    d = cover.elements[0].boundary_distance(cloud.points)
    assert cloud.mass(d < mu) < 1.0 / 3.0


def test_sigma_defaults_to_the_element_mass():
    cover = build_cover([BallRegion(CENTER, 0.6)], 1 / 64)
    element = cover.elements[0]
    cloud = four_corner_cantor(4)
    state = iterate_element(projection_map(0.0), cloud, element, [0.1], 0, 4.0**-4, seed=0, center=CENTER)
    expected = cloud.mass(element.contains(cloud.points))
    assert 0.0 < expected < 1.0
    assert state.sigma == pytest.approx(expected)
    assert state.summary().mass == pytest.approx(expected)
    assert [row.step for row in state.ledger] == [0]
    assert state.ledger[0].image_measure > 0.0


def test_iteration_on_an_element_that_cuts_the_cloud():
    cover = build_cover([BallRegion(CENTER, 1.0)], 1 / 128)
    element = cover.elements[0]
    cloud = _with_rim(element)
    schedule = epsilon_schedule(0.5, 2)
    state = iterate_element(
        projection_map(INTERVAL_ANGLE),
        cloud,
        element,
        schedule,
        2,
        4.0**-4,
        seed=0,
        rho=0.05,
        trials=16,
        flow_steps=16,
        center=cover.center_of(0),
    )
    # eight rim points inside, eight outside
    assert state.cloud.count == 256 + 8
    assert state.sigma == pytest.approx(1.08)
    assert [row.step for row in state.ledger] == [0, 1, 2]

    rows = state.ledger[1:]
    for k, row in enumerate(rows, start=1):
        assert row.collar_mass == pytest.approx(0.08)
        assert row.collar_mass < state.sigma / 3.0**k
        assert row.image_measure <= state.sigma / 2.0**k
        assert row.step_distance <= schedule[k - 1]
        assert row.cum_distance <= math.fsum(schedule[:k])
    assert rows[0].mu > rows[1].mu >= 2.0 * element.grid.h
    cum = [row.cum_distance for row in state.ledger]
    assert cum == sorted(cum)

    assert state.details[0].t_star >= 1e-3
    assert state.details[1].t_star is None
    assert not any(d.terminated for d in state.details)
    assert state.summary().active_mass == pytest.approx(0.08)
    assert state.cauchy is not None and state.cauchy.ok

    lo, hi = element.bounds()
    grid = box_grid(lo, hi, 9)
    # step n composes zeta_n after zeta_{n-1} . ... . zeta_1
    for zeta, inner in zip(state.zetas, [Identity(2), state.zetas[0]]):
        assert composition_bound(state.f, zeta, inner, grid).ok
