"""Local perturbations: conjugated rotations, the rotation search and the
cutoff-flow diffeomorphism that extends a chart rotation by the identity.

Flows are integrated with classical RK4; the flow Jacobian comes from the
variational equation integrated with the same steps, so sampled C^1 norms
never need a second round of finite differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from unrect.core.models import LemmaReport, LocalVariantReport, PushforwardEstimate, SearchReport, TrialRecord
from unrect.errors import BudgetError, DomainError, GuardError, InfeasibleError
from unrect.geometry import CutoffProfile, Region, Rotation, as_points, random_generator
from unrect.maps import (
    Affine,
    Composed,
    ConstantRankMap,
    Diffeo,
    Identity,
    Inverted,
    Pullback,
    ball_grid,
    box_grid,
    c1_distance,
    c1_norm_from_identity,
    chart_radius,
    finite_difference_jacobian,
)
from unrect.measure import DEFAULT_OFFSETS, coordinate_measure, covering_tolerance
from unrect.parallel import parallel_map
from unrect.sets import WeightedCloud

logger = logging.getLogger(__name__)

MIN_STEPS = 16
DEFAULT_STEPS = 64
INNER_TOL = 1e-7
T_MIN = 1e-3
BISECTION_STEPS = 30
STABILITY_MARGIN = 0.999
SEARCH_GRID = 32
VERIFY_GRID = 33
_CHUNK = 4096

Array = np.ndarray


# --------------------------------------------------------------------------------
# Conjugated rotations


class ConjugatedRotation(Diffeo):
    """Xi_theta = phi^-1 . theta . phi"""

    def __init__(self, phi: Diffeo, rotation: Rotation) -> None:
        self.phi = phi
        self.rotation = rotation

    def evaluate(self, points) -> Array:
        return self.phi.inverse(self.rotation.apply(self.phi.evaluate(points)))

    def inverse(self, points) -> Array:
        return self.phi.inverse(self.rotation.inverse().apply(self.phi.evaluate(points)))

    def jacobian(self, points) -> Array:
        pts, _ = as_points(points)
        image = self.evaluate(pts)
        inner = np.einsum("ij,kjl->kil", self.rotation.matrix, self.phi.jacobian(pts))
        return np.linalg.solve(self.phi.jacobian(image), inner)

    def descriptor(self) -> dict:
        return {"kind": "conjugated_rotation", "phi": self.phi.descriptor(), "generator": self.rotation.to_list()}


def conjugated_rotation(phi: Diffeo, theta: Rotation, domain: Optional[Region] = None, samples: int = 256) -> ConjugatedRotation:
    """Xi_theta; with ``domain`` given, checks that it maps the domain's boundary back into the domain."""
    xi = ConjugatedRotation(phi, theta)
    if domain is not None:
        moved = xi.evaluate(domain.boundary_samples(samples))
        excess = float(domain.distance(moved).max(initial=0.0))
        if excess > 1e-9:
            raise DomainError(f"rotation pushes the chart boundary {excess:.3g} outside the domain")
    return xi


def pushforward_measure_after(
    f: ConstantRankMap,
    theta: Rotation,
    cloud: WeightedCloud,
    delta: float,
    offsets: int = DEFAULT_OFFSETS,
    seed: int = 0,
) -> PushforwardEstimate:
    """Estimate H^m(f . Xi_theta(cloud)) from both sides of psi . f . Xi_theta = P_V . theta . phi.

    The image side straightens the actual images; the projection side projects
    phi(cloud) onto theta^-1(V). Both land in R^m coordinates and must agree
    within the covering tolerance. ``raw`` is the grid cover of the images in R^n.
    """
    if cloud.n != f.n:
        raise GuardError(f"cloud lives in R^{cloud.n}, map in R^{f.n}")
    xi = ConjugatedRotation(f.phi, theta)
    images = f.evaluate(xi.evaluate(cloud.points))
    image = coordinate_measure(f.straightened(images), f.m, delta, offsets=offsets, seed=seed)
    tilted = f.plane.rotated(theta.inverse())
    projection = coordinate_measure(
        f.scale * tilted.coordinates(f.phi.evaluate(cloud.points)), f.m, delta, offsets=offsets, seed=seed
    )
    raw = coordinate_measure(images, f.m, delta, offsets=offsets, seed=seed)
    discrepancy = abs(image.value - projection.value)
    if discrepancy > covering_tolerance(delta, f.m):
        logger.error("image and projection estimates disagree by %.3g", discrepancy)
        raise BudgetError(
            f"image-side {image.value:.6g} and projection-side {projection.value:.6g} estimates disagree",
            report=PushforwardEstimate(image=image, projection=projection, raw=raw, discrepancy=discrepancy),
        )
    return PushforwardEstimate(image=image, projection=projection, raw=raw, discrepancy=discrepancy)


# --------------------------------------------------------------------------------
# Rotation search


def standard_grid(f: ConstantRankMap, cloud: WeightedCloud, per_axis: int = SEARCH_GRID) -> Array:
    """Grid on which C^1 distances to f are sampled: the map's domain, else the padded cloud box."""
    if f.domain is not None:
        lo, hi = f.domain.bounds()
    elif cloud.count:
        lo, hi = cloud.points.min(axis=0) - 0.25, cloud.points.max(axis=0) + 0.25
    else:
        lo, hi = -np.ones(f.n), np.ones(f.n)
    return box_grid(lo, hi, per_axis)


def search_rotation(
    f: ConstantRankMap,
    cloud: WeightedCloud,
    epsilon: float,
    rho: float,
    trials: int,
    delta: float,
    seed: int,
    grid: Optional[Array] = None,
    candidates: Optional[Sequence[Array]] = None,
    offsets: int = DEFAULT_OFFSETS,
) -> Tuple[Rotation, SearchReport]:
    """Best of ``trials`` random rotations near the identity.

    A trial is feasible when its generator norm is below rho, it is not the
    identity, it keeps the cloud inside the chart domain and
    c1_distance(f . Xi_theta, f) <= epsilon on ``grid``. Among feasible trials the
    smallest image measure wins, ties going to the smaller generator norm.
    """
    if not epsilon > 0:
        raise GuardError("epsilon must be positive")
    if not rho > 0:
        raise GuardError("rho must be positive")
    if candidates is None:
        if trials < 1:
            raise GuardError("need at least one trial")
        rng = np.random.default_rng(seed)
        candidates = [random_generator(rng, f.n, rho) for _ in range(trials)]
    grid = standard_grid(f, cloud) if grid is None else np.asarray(grid, dtype=float)
    free = f.with_domain(None)
    identity_measure = pushforward_measure_after(f, Rotation.identity(f.n), cloud, delta, offsets, seed).image.value

    def run(X: Array) -> TrialRecord:
        rot = Rotation(X)
        record = {"generator": rot.to_list(), "norm": rot.norm, "identity_distance": rot.distance_to_identity()}
        if rot.is_identity() or rot.norm >= rho:
            return TrialRecord(distance=math.inf, feasible=False, **record)
        xi = ConjugatedRotation(f.phi, rot)
        distance = c1_distance(Pullback(free, xi), free, grid)
        if distance > epsilon:
            return TrialRecord(distance=distance, feasible=False, **record)
        try:
            measure = pushforward_measure_after(f, rot, cloud, delta, offsets, seed).image.value
        except DomainError:
            return TrialRecord(distance=distance, feasible=False, **record)
        return TrialRecord(distance=distance, feasible=True, measure=measure, **record)

    records: List[TrialRecord] = parallel_map(run, list(candidates))
    for i, rec in enumerate(records):
        logger.debug("trial %d: |X| = %.4g, distance = %.4g, measure = %s", i, rec.norm, rec.distance, rec.measure)
    feasible = [rec for rec in records if rec.feasible]
    base = dict(epsilon=epsilon, rho=rho, delta=delta, feasible=len(feasible), trials=records)
    if not feasible:
        report = SearchReport(
            generator=np.zeros((f.n, f.n)).tolist(),
            norm=0.0,
            measure=identity_measure,
            identity_measure=identity_measure,
            distance=0.0,
            **base,
        )
        raise InfeasibleError(
            f"no feasible rotation among {len(records)} trials (rho={rho:g} too large for epsilon={epsilon:g}?)",
            report=report,
        )
    best = min(feasible, key=lambda rec: (rec.measure, rec.norm))
    ratio = best.measure / identity_measure if identity_measure > 0 else None
    report = SearchReport(
        generator=best.generator,
        norm=best.norm,
        identity_distance=best.identity_distance,
        measure=best.measure,
        identity_measure=identity_measure,
        ratio=ratio,
        distance=best.distance,
        **base,
    )
    logger.info("rotation search: %d/%d feasible, best measure %.6g (identity %.6g)", len(feasible), len(records), best.measure, identity_measure)
    return Rotation(np.asarray(best.generator)), report


# --------------------------------------------------------------------------------
# Vector fields and flows


@dataclass(frozen=True, eq=False)
class VectorField:
    """Vectorised field y -> W(y) with its Jacobian.

    The field vanishes identically outside ``{distance(y, support) < support_radius}``;
    ``support=None`` means it may be nonzero everywhere.
    """

    evaluate: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]
    lipschitz: float
    support: Optional[Region] = None
    support_radius: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.lipschitz):
            raise GuardError("vector field Lipschitz estimate must be finite")

    def in_support(self, points) -> Array:
        pts, _ = as_points(points)
        if self.support is None:
            return np.ones(len(pts), dtype=bool)
        return self.support.distance(pts) < self.support_radius

    def __call__(self, points) -> Array:
        pts, single = as_points(points)
        out = self.evaluate(pts)
        return out[0] if single else out


def _linear_part(phi: Diffeo) -> Optional[Array]:
    """Constant Jacobian of an affine chart, or None when phi is not affine."""
    if isinstance(phi, Identity):
        return np.eye(phi.n)
    if isinstance(phi, Affine):
        return phi.matrix
    if isinstance(phi, Composed):
        outer, inner = _linear_part(phi.outer), _linear_part(phi.inner)
        if outer is not None and inner is not None:
            return outer @ inner
    if isinstance(phi, Inverted):
        base = _linear_part(phi.base)
        if base is not None:
            return np.linalg.inv(base)
    return None


def _sampled_lipschitz(jacobian: Callable[[Array], Array], samples: Array) -> float:
    if len(samples) == 0:
        return 0.0
    return float(np.linalg.norm(jacobian(samples), ord=2, axis=(1, 2)).max())


def generator_field(phi: Diffeo, X, samples: Optional[Array] = None) -> VectorField:
    """V(y) = D phi(y)^-1 (X phi(y)), the velocity of t -> Xi_{exp(tX)}(y) at t = 0."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]

    def evaluate(pts: Array) -> Array:
        pts, _ = as_points(pts)
        if len(pts) == 0:
            return np.empty((0, n))
        return np.linalg.solve(phi.jacobian(pts), (phi.evaluate(pts) @ X.T)[:, :, None])[:, :, 0]

    L = _linear_part(phi)
    if L is not None:
        DV = np.linalg.solve(L, X @ L)

        def jacobian(pts: Array) -> Array:
            pts, _ = as_points(pts)
            return np.broadcast_to(DV, (len(pts), n, n)).copy()

        lip = float(np.linalg.norm(DV, 2))
    else:

        def jacobian(pts: Array) -> Array:
            pts, _ = as_points(pts)
            if len(pts) == 0:
                return np.empty((0, n, n))
            return finite_difference_jacobian(evaluate, pts, h=1e-6)

        if samples is None:
            samples = ball_grid(np.zeros(n), 1.0, 16)
        lip = _sampled_lipschitz(jacobian, samples)
    return VectorField(evaluate, jacobian, lip)


def cutoff_field(V: VectorField, O: Region, mu: float, samples: Optional[Array] = None) -> VectorField:
    """W = cutoff * V; equal to V on B_{mu/2}(O) and zero outside B_{3mu/4}(O)."""
    profile = CutoffProfile(O, mu)
    radius = profile.support_radius

    def active(pts: Array) -> Array:
        return O.distance(pts) < radius

    def evaluate(pts: Array) -> Array:
        pts, _ = as_points(pts)
        out = np.zeros_like(pts)
        mask = active(pts)
        if mask.any():
            inside = pts[mask]
            out[mask] = profile.value(inside)[:, None] * V.evaluate(inside)
        return out

    def jacobian(pts: Array) -> Array:
        pts, _ = as_points(pts)
        n = pts.shape[1]
        out = np.zeros((len(pts), n, n))
        mask = active(pts)
        if mask.any():
            inside = pts[mask]
            c = profile.value(inside)
            out[mask] = c[:, None, None] * V.jacobian(inside) + np.einsum(
                "ki,kj->kij", V.evaluate(inside), profile.gradient(inside)
            )
        return out

    if samples is None:
        lo, hi = O.bounds()
        samples = box_grid(lo - radius, hi + radius, VERIFY_GRID)
    samples = samples[active(samples)]
    profile.gradient_constant(samples)
    return VectorField(evaluate, jacobian, _sampled_lipschitz(jacobian, samples), support=O, support_radius=radius)


def _rk4(field: VectorField, y: Array, t: float, steps: int, with_jacobian: bool) -> Tuple[Array, Optional[Array]]:
    h = t / steps
    n = y.shape[1]
    J = np.broadcast_to(np.eye(n), (len(y), n, n)).copy() if with_jacobian else None
    for _ in range(steps):
        k1 = field.evaluate(y)
        y2 = y + 0.5 * h * k1
        k2 = field.evaluate(y2)
        y3 = y + 0.5 * h * k2
        k3 = field.evaluate(y3)
        y4 = y + h * k3
        k4 = field.evaluate(y4)
        if with_jacobian:
            K1 = field.jacobian(y) @ J
            K2 = field.jacobian(y2) @ (J + 0.5 * h * K1)
            K3 = field.jacobian(y3) @ (J + 0.5 * h * K2)
            K4 = field.jacobian(y4) @ (J + h * K3)
            J = J + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y, J


class FlowDiffeo(Diffeo):
    """Time-t flow of a vector field; the inverse flows to -t.

    Points outside the field's support are returned untouched, so the map is
    exactly the identity there.
    """

    def __init__(self, field: VectorField, time: float, steps: int = DEFAULT_STEPS) -> None:
        self.field = field
        self.time = float(time)
        self.steps = int(steps)

    def _flow(self, points, t: float, with_jacobian: bool) -> Tuple[Array, Optional[Array]]:
        pts, _ = as_points(points)
        out = np.array(pts, copy=True)
        n = pts.shape[1]
        jac = np.broadcast_to(np.eye(n), (len(pts), n, n)).copy() if with_jacobian else None
        idx = np.flatnonzero(self.field.in_support(pts)) if t != 0.0 else np.empty(0, dtype=int)
        if len(idx) == 0:
            return out, jac
        chunks = np.array_split(idx, max(1, math.ceil(len(idx) / _CHUNK)))
        results = parallel_map(lambda c: _rk4(self.field, pts[c], t, self.steps, with_jacobian), chunks)
        for c, (y, J) in zip(chunks, results):
            out[c] = y
            if with_jacobian:
                jac[c] = J
        return out, jac

    def evaluate(self, points) -> Array:
        return self._flow(points, self.time, False)[0]

    def inverse(self, points) -> Array:
        return self._flow(points, -self.time, False)[0]

    def jacobian(self, points) -> Array:
        return self._flow(points, self.time, True)[1]

    def evaluate_with_jacobian(self, points) -> Tuple[Array, Array]:
        return self._flow(points, self.time, True)

    def at(self, time: float) -> "FlowDiffeo":
        return FlowDiffeo(self.field, time, self.steps)

    def descriptor(self) -> dict:
        return {"kind": "flow", "time": self.time, "steps": self.steps, "lipschitz": self.field.lipschitz}


def integrate_flow(W: VectorField, t: float, steps: int = DEFAULT_STEPS) -> FlowDiffeo:
    if steps < MIN_STEPS:
        raise GuardError(f"flow integration needs at least {MIN_STEPS} steps, got {steps}")
    if not math.isfinite(t):
        raise GuardError("flow time must be finite")
    if abs(t) * W.lipschitz >= 1.0:
        raise GuardError(f"stability guard violated: |t| * Lip(W) = {abs(t) * W.lipschitz:.3g} >= 1")
    return FlowDiffeo(W, t, steps)


# --------------------------------------------------------------------------------
# Key lemma


def _check_clearance(O: Region, U: Region, mu: float) -> None:
    """O must sit inside U at distance >= mu from its boundary."""
    inner = O.boundary_samples(512)
    if not np.all(U.contains(inner, strict=False)):
        raise GuardError("region O is not contained in U")
    gap = float(cKDTree(U.boundary_samples(1024)).query(inner)[0].min())
    if gap < mu:
        raise GuardError(f"region O comes within {gap:.3g} of the boundary of U, need at least mu = {mu:.3g}")


def key_lemma_diffeo(
    phi: Diffeo,
    theta: Rotation,
    O: Region,
    mu: float,
    eta: float,
    U: Optional[Region] = None,
    steps: int = DEFAULT_STEPS,
    verify_points: int = VERIFY_GRID,
) -> Tuple[FlowDiffeo, LemmaReport]:
    """zeta = flow of the cut-off generator field of theta, to the largest admissible time t* <= 1.

    Admissible means, on the verification grid: zeta agrees with Xi_{theta_t} on
    B_{mu/4}(O) and keeps it inside B_{mu/2}(O); zeta is the identity outside
    B_{3mu/4}(O); and the sampled ||zeta - id||_{C^1} is at most eta. The
    realised rotation is theta_{t*} = exp(t* X).
    """
    if not mu > 0:
        raise GuardError("mu must be positive")
    if not eta > 0:
        raise GuardError("eta must be positive")
    if theta.is_identity():
        raise GuardError("the key lemma needs a rotation other than the identity")
    if U is not None:
        _check_clearance(O, U, mu)

    lo, hi = O.bounds()
    grid = box_grid(lo - mu, hi + mu, verify_points)
    d = O.distance(grid)
    inner = grid[d < 0.25 * mu]
    outer = grid[d >= 0.75 * mu]
    V = generator_field(phi, theta.generator, samples=grid[d < mu])
    W = cutoff_field(V, O, mu, samples=grid)
    t_hi = 1.0 if W.lipschitz == 0 else min(1.0, STABILITY_MARGIN / W.lipschitz)

    def measure(t: float) -> dict:
        zeta = integrate_flow(W, t, steps)
        values, jacs = zeta.evaluate_with_jacobian(grid)
        if len(inner):
            target = ConjugatedRotation(phi, theta.at(t)).evaluate(inner)
            moved_inner = values[d < 0.25 * mu]
            error_inner = float(np.linalg.norm(moved_inner - target, axis=1).max())
            escape = float(O.distance(moved_inner).max())
        else:
            error_inner, escape = 0.0, 0.0
        error_outer = float(np.abs(values[d >= 0.75 * mu] - outer).max(initial=0.0))
        moved = np.any(values != grid, axis=1)
        reach = float(d[moved].max(initial=0.0))
        c0, c1 = c1_norm_from_identity(values, jacs, grid)
        ok = error_inner < INNER_TOL and escape < 0.5 * mu and error_outer == 0.0 and c0 + c1 <= eta
        return dict(
            zeta=zeta,
            ok=ok,
            error_inner=error_inner,
            escape_inner=escape,
            error_outer=error_outer,
            reach=reach,
            c1_norm=c0 + c1,
        )

    iterations = 0
    best = measure(t_hi)
    t_star = t_hi
    if not best["ok"]:
        lo_t, hi_t, best, t_star = 0.0, t_hi, None, 0.0
        while iterations < BISECTION_STEPS and hi_t - lo_t > 1e-4 * t_hi:
            mid = 0.5 * (lo_t + hi_t)
            trial = measure(mid)
            iterations += 1
            logger.debug("bisection %d: t = %.6g admissible = %s (C1 %.3g)", iterations, mid, trial["ok"], trial["c1_norm"])
            if trial["ok"]:
                lo_t, best, t_star = mid, trial, mid
            else:
                hi_t = mid

    def report(t: float, result: Optional[dict]) -> LemmaReport:
        result = result or dict(error_inner=math.nan, escape_inner=math.nan, error_outer=math.nan, reach=math.nan, c1_norm=math.nan)
        return LemmaReport(
            t_star=t,
            requested_generator=theta.to_list(),
            realised_generator=theta.at(t).to_list(),
            mu=mu,
            eta=eta,
            lipschitz=W.lipschitz,
            error_inner=result["error_inner"],
            escape_inner=result["escape_inner"],
            error_outer=result["error_outer"],
            c1_norm=result["c1_norm"],
            margin_inner=INNER_TOL - result["error_inner"],
            margin_outer=0.75 * mu - result["reach"],
            margin_c1=eta - result["c1_norm"],
            verification_points=len(grid),
            bisection_steps=iterations,
        )

    if best is None or t_star < T_MIN:
        raise InfeasibleError(
            f"no admissible flow time above {T_MIN:g} (rotation too far for eta = {eta:g})",
            report=report(t_star, best),
        )
    logger.info("key lemma: t* = %.6g, C1 = %.3g <= eta = %.3g", t_star, best["c1_norm"], eta)
    return best["zeta"], report(t_star, best)


# --------------------------------------------------------------------------------
# Local variant end to end


def perturb_locally(
    f: ConstantRankMap,
    x,
    cloud: WeightedCloud,
    epsilon: float,
    rho: float,
    trials: int,
    delta: float,
    seed: int,
    domain: Optional[Region] = None,
    per_axis: int = SEARCH_GRID,
) -> Tuple[Pullback, LocalVariantReport]:
    """f_eps = f . Xi_theta on the chart ball U(x, r), r = r_x / 2.

    Rotations turn about phi(x), so Xi_theta maps U(x, r) onto itself.
    """
    domain = domain if domain is not None else f.domain
    if domain is None:
        raise GuardError("the local variant needs a domain to size the chart")
    x = np.asarray(x, dtype=float)
    g = f.recentred(x).with_domain(None)
    r_x, r = chart_radius(g, x, domain)
    inside = np.linalg.norm(g.phi.evaluate(cloud.points), axis=1) < r if cloud.count else np.zeros(0, dtype=bool)
    local = cloud.restricted(inside, tag="chart")
    grid = g.phi.inverse(ball_grid(np.zeros(f.n), r, per_axis))
    theta, search = search_rotation(g, local, epsilon, rho, trials, delta, seed, grid=grid)
    f_eps = Pullback(g, ConjugatedRotation(g.phi, theta))
    return f_eps, LocalVariantReport(
        center=x.tolist(),
        chart_radius=r_x,
        radius=r,
        points=local.count,
        c1_distance=search.distance,
        search=search,
    )
