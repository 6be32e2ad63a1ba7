from __future__ import annotations

import math

import numpy as np
import pytest

from unrect.errors import GuardError
from unrect.geometry import (
    BallRegion,
    BoxRegion,
    CutoffProfile,
    Grid,
    GridRegion,
    Plane,
    PointRegion,
    Rotation,
    convolved_cutoff,
    mollifier_value,
    project,
    random_generator,
    random_rotation,
    smooth_cutoff,
    smooth_step,
)


def test_planar_rotation_matches_closed_form():
    rot = Rotation.from_angle(0.3)
    c, s = math.cos(0.3), math.sin(0.3)
    assert np.allclose(rot.matrix, [[c, -s], [s, c]], atol=1e-14)
    assert rot.norm == pytest.approx(0.3)
    assert np.allclose(rot.at(0.0).matrix, np.eye(2))
    assert np.allclose(rot.at(1.0).matrix, rot.matrix)
    assert np.allclose(rot.matrix @ rot.inverse().matrix, np.eye(2), atol=1e-14)


def test_rotation_rejects_non_skew_generator():
    with pytest.raises(GuardError):
        Rotation(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_random_generator_stays_in_the_ball():
    rng = np.random.default_rng(7)
    for n in (2, 3):
        for _ in range(20):
            X = random_generator(rng, n, 0.2)
            assert np.allclose(X, -X.T)
            assert 0.0 < np.linalg.norm(X, 2) < 0.2


def test_random_rotation_is_orthogonal():
    rot = random_rotation(np.random.default_rng(1), 3)
    assert np.allclose(rot.matrix @ rot.matrix.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(rot.matrix) == pytest.approx(1.0)


def test_plane_projector_is_idempotent_and_rotates():
    V = Plane.line(0.0)
    P = V.projector
    assert np.allclose(P @ P, P)
    assert np.allclose(project(V, [2.0, 3.0]), [2.0, 0.0])
    turned = V.rotated(Rotation.from_angle(math.pi / 2))
    assert np.allclose(np.abs(turned.basis), [[0.0, 1.0]], atol=1e-14)
    W = Plane.from_vectors([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
    assert W.m == 2 and W.n == 3


def test_plane_needs_codimension():
    with pytest.raises(GuardError):
        Plane(np.eye(2))


def test_region_distances():
    ball = BallRegion(np.array([0.0, 0.0]), 1.0)
    assert np.allclose(ball.distance([[3.0, 0.0], [0.5, 0.0]]), [2.0, 0.0])
    box = BoxRegion(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    assert box.distance([[2.0, 2.0]])[0] == pytest.approx(math.sqrt(2.0))
    assert box.contains([[0.5, 0.5], [1.0, 0.5]]).tolist() == [True, False]
    assert box.contains([[1.0, 0.5]], strict=False).tolist() == [True]
    cloud = PointRegion([[0.0, 0.0], [1.0, 0.0]])
    assert cloud.distance([[0.5, 0.5]])[0] == pytest.approx(math.sqrt(0.5))


def test_grid_region_inradius_and_distances():
    grid = Grid.covering([0.0, 0.0], [1.0, 1.0], 0.1)
    assert grid.shape == (10, 10)
    region = GridRegion(grid, np.ones(grid.shape, dtype=bool))
    assert region.cell_count() == 100
    assert region.inradius() == pytest.approx(0.45)
    assert region.boundary_distance([[0.05, 0.55]])[0] == pytest.approx(0.05)
    assert region.distance([[0.5, 0.5]])[0] == 0.0
    assert region.distance([[1.5, 0.55]])[0] == pytest.approx(0.5)


def test_smooth_step_limits():
    values = smooth_step([-1.0, 0.0, 0.5, 1.0, 2.0])
    assert values.tolist() == pytest.approx([0.0, 0.0, 0.5, 1.0, 1.0])


def test_cutoff_profile_plateau_and_support():
    O = BallRegion(np.array([0.0, 0.0]), 0.1)
    profile = CutoffProfile(O, 0.2)
    inside = [[0.15, 0.0], [0.0, 0.05]]
    outside = [[0.3, 0.0], [0.0, -0.4]]
    assert smooth_cutoff(profile, inside).tolist() == [1.0, 1.0]
    assert smooth_cutoff(profile, outside).tolist() == [0.0, 0.0]
    assert np.all(profile.gradient(inside) == 0.0)
    middle = smooth_cutoff(profile, [0.2125, 0.0])
    assert 0.0 < middle < 1.0


def test_convolved_cutoff_agrees_away_from_the_transition():
    profile = CutoffProfile(BallRegion(np.array([0.0, 0.0]), 0.1), 0.2)
    assert convolved_cutoff(profile, [0.15, 0.0], resolution=8) == pytest.approx(1.0)
    assert convolved_cutoff(profile, [0.3, 0.0], resolution=8) == pytest.approx(0.0)


def test_mollifier_has_unit_mass():
    eps = 0.5
    axis = np.linspace(-eps, eps, 201)
    mesh = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    cell = (axis[1] - axis[0]) ** 2
    assert float(mollifier_value(mesh, eps).sum() * cell) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("n,m", [(2, 1), (3, 1), (3, 2)])
def test_projection_commutes_with_rotation(n, m):
    rng = np.random.default_rng(n * 10 + m)
    worst = 0.0
    for _ in range(1000):
        theta = random_rotation(rng, n)
        V = Plane.from_vectors(rng.standard_normal((m, n)))
        p = rng.standard_normal(n)
        lhs = project(V, theta.apply(p))
        rhs = theta.apply(project(V.rotated(theta.inverse()), p))
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    assert worst < 1e-12
