"""Global construction on a grid.

The chart family is turned into disjoint connected elements; inside each
element the iteration alternates collar selection, rotation search and the
key-lemma flow, logging a budget ledger per step. Per-element compositions
have disjoint supports and are glued along the diagonal schedule.

Regions are occupancy grids of side h, so the (possibly infinite) family of
components is truncated to the finitely many the grid resolves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from unrect.core.models import (
    CauchyReport,
    CompositionReport,
    ElementSummary,
    GlueReport,
    LedgerRow,
    StepDetail,
)
from unrect.errors import BudgetError, CoverError, GuardError, InfeasibleError, SupportOverlapError, UnrectError
from unrect.flow import DEFAULT_STEPS, FlowDiffeo, key_lemma_diffeo, search_rotation
from unrect.geometry import BallRegion, Grid, GridRegion, Region, as_points
from unrect.maps import ConstantRankMap, Diffeo, Identity, Pullback, box_grid, c1_distance, c1_norm_from_identity
from unrect.measure import DEFAULT_OFFSETS, coordinate_measure, covering_tolerance, favard_length
from unrect.sets import WeightedCloud

logger = logging.getLogger(__name__)

GRID_FRACTION = 2.0**-9
MAX_SAMPLES = 1024
SEARCH_GRID = 24
ETA_FACTOR = 0.999
GLUE_TOL = 1e-12
SLACK = 1e-12
SHELL_TOL = 1e-12
FAVARD_SLACK = 1.05

Snapshot = Tuple[np.ndarray, np.ndarray]


def default_spacing(lo, hi) -> float:
    """h = 2^-9 of the working box diameter."""
    return GRID_FRACTION * float(np.linalg.norm(np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)))


def epsilon_schedule(epsilon: float, steps: int) -> List[float]:
    """eps_k = eps * 2^-k for k = 1..steps; every partial sum stays below eps."""
    if not epsilon > 0:
        raise GuardError("epsilon must be positive")
    return [epsilon * 2.0**-k for k in range(1, steps + 1)]


# --------------------------------------------------------------------------------
# Cover


@dataclass(frozen=True, eq=False)
class CoverFamily:
    grid: Grid
    elements: List[GridRegion]
    parents: List[int]
    charts: List[Region]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.elements)

    def element_index(self, points) -> np.ndarray:
        """Index of the element holding each point, -1 for the residual set."""
        pts, _ = as_points(points)
        idx = self.grid.index(pts)
        ok = np.all((idx >= 0) & (idx < np.asarray(self.grid.shape)), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        out[ok] = self.labels[tuple(idx[ok].T)]
        return out

    def center_of(self, i: int) -> np.ndarray:
        """Centre of the parent chart of element i; rotations of that element turn about it."""
        chart = self.charts[self.parents[i]]
        if isinstance(chart, BallRegion):
            return chart.center
        lo, hi = chart.bounds()
        return 0.5 * (lo + hi)


def build_cover(charts: Sequence[Region], h: float, domain: Optional[Region] = None) -> CoverFamily:
    """Elements: connected components of int V_1, int V_2 minus closure(V_1), ..."""
    if not charts:
        raise GuardError("need at least one chart")
    if domain is not None:
        lo, hi = domain.bounds()
    else:
        bounds = [c.bounds() for c in charts]
        lo = np.min([b[0] for b in bounds], axis=0)
        hi = np.max([b[1] for b in bounds], axis=0)
    grid = Grid.covering(lo, hi, h)
    centers = grid.centers()
    labels = np.full(grid.shape, -1, dtype=np.int64)
    closure = np.zeros(grid.shape, dtype=bool)
    elements: List[GridRegion] = []
    parents: List[int] = []
    for j, chart in enumerate(charts):
        piece = chart.contains(centers, strict=True).reshape(grid.shape) & ~closure
        components, count = ndimage.label(piece)
        for k in range(1, count + 1):
            mask = components == k
            labels[mask] = len(elements)
            elements.append(GridRegion(grid, mask))
            parents.append(j)
        closure |= chart.contains(centers, strict=False).reshape(grid.shape)
    if domain is not None:
        uncovered = int((domain.contains(centers, strict=False).reshape(grid.shape) & ~closure).sum())
        if uncovered:
            raise CoverError(f"charts leave {uncovered} domain cells uncovered", uncovered=uncovered)
    logger.info("cover: %d charts -> %d elements on a %s grid (h = %.4g)", len(charts), len(elements), grid.shape, h)
    return CoverFamily(grid, elements, parents, list(charts), labels)


def choose_chart_radius(
    cloud: WeightedCloud,
    center,
    radius: float,
    h: float,
    seed: int = 0,
    retries: int = 16,
    jitter: float = 0.05,
) -> float:
    """A radius near ``radius`` whose boundary shell of width 2h carries no cloud mass."""
    c = np.asarray(center, dtype=float)
    r_pts = np.linalg.norm(cloud.points - c, axis=1) if cloud.count else np.empty(0)
    rng = np.random.default_rng(seed)
    r = float(radius)
    for attempt in range(retries + 1):
        if not np.any(np.abs(r_pts - r) < h):
            if attempt:
                logger.info("chart radius %.6g replaced by %.6g after %d retries", radius, r, attempt)
            return r
        r = float(radius) * (1.0 + jitter * rng.uniform(-1.0, 1.0))
    raise InfeasibleError(f"no chart radius near {radius:g} avoids cloud mass on the boundary shell")


# --------------------------------------------------------------------------------
# Collars


def select_collar(
    region: GridRegion,
    points,
    weights,
    sigma: float,
    n: int,
    mu_start: Optional[float] = None,
) -> float:
    """Largest mu = mu_0 2^-j >= 2h with collar mass < sigma / 3^n and no point on the shell.

    ``sigma`` is cloud mass, the same unit as the collar mass it bounds. A point
    counts as on the shell {dist(., boundary of U) = mu} only up to float
    resolution; points merely near the shell are fine.
    """
    if not sigma > 0:
        raise GuardError("sigma must be positive")
    h = region.grid.h
    mu = region.inradius() / 4.0 if mu_start is None else float(mu_start)
    pts = np.asarray(points, dtype=float).reshape(-1, region.n)
    w = np.asarray(weights, dtype=float)
    if len(pts) == 0:
        return mu
    d = region.boundary_distance(pts)
    target = sigma / 3.0**n
    while mu >= 2.0 * h:
        mass = math.fsum(w[d < mu])
        on_shell = bool(np.any(np.abs(d - mu) <= SHELL_TOL * max(1.0, mu)))
        if mass < target and not on_shell:
            return mu
        logger.debug("collar mu = %.4g rejected: mass %.4g (target %.4g), shell hit %s", mu, mass, target, on_shell)
        mu *= 0.5
    raise InfeasibleError(f"no collar width above 2h = {2.0 * h:.3g} keeps the collar mass below sigma/3^{n} = {target:.3g}")


# --------------------------------------------------------------------------------
# Iteration


def _compose(zetas: Sequence[Diffeo], points) -> np.ndarray:
    pts, _ = as_points(points)
    out = pts
    for zeta in zetas:
        out = zeta.evaluate(out)
    return out


def _c1_gap(a: Snapshot, b: Snapshot) -> float:
    c0 = float(np.linalg.norm(a[0] - b[0], axis=1).max(initial=0.0))
    c1 = float(np.linalg.norm(a[1] - b[1], ord=2, axis=(1, 2)).max(initial=0.0)) if len(a[1]) else 0.0
    return c0 + c1


@dataclass(eq=False)
class IterationState:
    """Running state of one element: zeta_n . ... . zeta_1, the active region U_n and the ledger."""

    index: int
    parent: int
    element: GridRegion
    f: ConstantRankMap
    cloud: WeightedCloud
    current: WeightedCloud
    sigma: float
    schedule: List[float]
    region: GridRegion
    samples: np.ndarray
    step: int = 0
    zetas: List[Diffeo] = field(default_factory=list)
    mus: List[float] = field(default_factory=list)
    snapshots: List[Snapshot] = field(default_factory=list)
    ledger: List[LedgerRow] = field(default_factory=list)
    details: List[StepDetail] = field(default_factory=list)
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    controlled: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    moved: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    cauchy: Optional[CauchyReport] = None

    def composed(self, points) -> np.ndarray:
        return _compose(self.zetas, points)

    def stabilised_fraction(self) -> float:
        total = self.cloud.total_mass
        if total <= 0:
            return 1.0
        return self.cloud.mass(self.controlled | ~self.moved) / total

    def summary(self) -> ElementSummary:
        return ElementSummary(
            index=self.index,
            parent_chart=self.parent,
            cells=self.element.cell_count(),
            sigma=self.sigma,
            mass=self.cloud.total_mass,
            ledger=list(self.ledger),
            details=list(self.details),
            stabilised_fraction=self.stabilised_fraction(),
            active_mass=self.cloud.mass(self.active),
            cauchy=self.cauchy,
        )


def _index_mask(count: int, idx: np.ndarray) -> np.ndarray:
    mask = np.zeros(count, dtype=bool)
    mask[idx] = True
    return mask


def _element_samples(element: GridRegion) -> np.ndarray:
    centers = element.grid.centers(element.mask)
    if len(centers) <= MAX_SAMPLES:
        return centers
    keep = np.unique(np.linspace(0, len(centers) - 1, MAX_SAMPLES).astype(int))
    return centers[keep]


def _f_snapshot(f: ConstantRankMap, snap: Snapshot) -> Snapshot:
    pts, jac = snap
    return f.evaluate(pts), f.jacobian(pts) @ jac


def iterate_element(
    f: ConstantRankMap,
    cloud: WeightedCloud,
    element: GridRegion,
    schedule: Sequence[float],
    steps: int,
    delta: float,
    seed: int,
    *,
    rho: float = 0.3,
    trials: int = 32,
    flow_steps: int = DEFAULT_STEPS,
    center=None,
    sigma: Optional[float] = None,
    offsets: int = DEFAULT_OFFSETS,
    index: int = 0,
    parent: int = 0,
) -> IterationState:
    """Run ``steps`` rounds of collar, rotation search and key-lemma flow on one element.

    Ledger row n records the collar mass (< sigma/3^n), the image measure of the
    part of the cloud still left in the collar (<= sigma/2^n + tolerance), the
    step distance ||f.zeta_n^o - f.zeta_{n-1}^o||_C1 (<= eps_n) and the
    cumulative distance (<= eps_1 + ... + eps_n). ``f`` must already satisfy Lip(f) <= 1.
    ``sigma`` defaults to the cloud mass inside the element.
    """
    if steps < 0:
        raise GuardError("steps must be non-negative")
    if steps > len(schedule):
        raise GuardError(f"schedule has {len(schedule)} entries, need {steps}")
    if element.is_empty:
        raise GuardError("element is empty")
    if center is None:
        lo, hi = element.bounds()
        center = 0.5 * (lo + hi)
    g = f.recentred(center).with_domain(None)
    inside = element.contains(cloud.points) if cloud.count else np.zeros(0, dtype=bool)
    local = cloud.restricted(inside, tag=f"element{index}")

    def measure(pts: np.ndarray) -> float:
        if len(pts) == 0:
            return 0.0
        return coordinate_measure(g.normal_coordinates(pts), g.m, delta, offsets=offsets, seed=seed).value

    sigma0 = local.total_mass if sigma is None else float(sigma)
    samples = _element_samples(element)
    n = element.n
    state = IterationState(
        index=index,
        parent=parent,
        element=element,
        f=g,
        cloud=local,
        current=local,
        sigma=sigma0,
        schedule=list(schedule[:steps]),
        region=element,
        samples=samples,
        active=np.ones(local.count, dtype=bool),
        controlled=np.zeros(local.count, dtype=bool),
        moved=np.zeros(local.count, dtype=bool),
    )
    state.snapshots.append((samples.copy(), np.broadcast_to(np.eye(n), (len(samples), n, n)).copy()))
    base = _f_snapshot(g, state.snapshots[0])
    previous = base
    state.ledger.append(
        LedgerRow(step=0, mu=None, collar_mass=0.0, image_measure=measure(local.points), step_distance=0.0, cum_distance=0.0)
    )
    logger.info("element %d: sigma = %.6g over %d points", index, sigma0, local.count)

    tolerance = covering_tolerance(delta, g.m)
    budget = 0.0
    prev_mu: Optional[float] = None
    for step in range(1, steps + 1):
        eps_n = schedule[step - 1]
        budget += eps_n
        state.step = step
        U = state.region
        act = np.flatnonzero(state.active)
        collar_target = sigma0 / 3.0**step
        measure_target = sigma0 / 2.0**step
        if len(act) == 0 or U.is_empty or sigma0 <= 0:
            state.zetas.append(Identity(n))
            state.snapshots.append(state.snapshots[-1])
            state.ledger.append(
                LedgerRow(step=step, mu=None, collar_mass=0.0, image_measure=0.0, step_distance=0.0, cum_distance=state.ledger[-1].cum_distance)
            )
            state.details.append(
                StepDetail(
                    step=step,
                    collar_target=collar_target,
                    measure_target=measure_target,
                    distance_budget=eps_n,
                    controlled_measure=measure(state.current.points[state.controlled]),
                    remainder_mass=0.0,
                    terminated=True,
                )
            )
            continue

        try:
            mu_start = U.inradius() / 4.0
            if prev_mu is not None:
                mu_start = min(mu_start, 0.5 * prev_mu)
            positions = state.current.points
            mu = select_collar(U, positions[act], state.cloud.weights[act], sigma0, step, mu_start)
            prev_mu = mu
            state.mus.append(mu)

            u_centers = U.grid.centers(U.mask)
            deep = U.boundary_distance(u_centers) >= mu
            o_mask = np.zeros(U.grid.shape, dtype=bool)
            o_mask[tuple(np.argwhere(U.mask)[deep].T)] = True
            O = GridRegion(U.grid, o_mask)
            in_o = O.contains(positions[act]) if not O.is_empty else np.zeros(len(act), dtype=bool)
            o_idx, collar_idx = act[in_o], act[~in_o]
            collar_mass = state.cloud.mass(_index_mask(local.count, collar_idx))

            t_star = search_measure = rotation_norm = None
            if len(o_idx) and not O.is_empty:
                o_cloud = state.current.restricted(_index_mask(local.count, o_idx), tag=f"O{step}")
                lo, hi = O.bounds()
                theta, search = search_rotation(
                    g,
                    o_cloud,
                    eps_n / 3.0,
                    rho,
                    trials,
                    delta,
                    seed + step,
                    grid=box_grid(lo, hi, SEARCH_GRID),
                    offsets=offsets,
                )
                zeta, lemma = key_lemma_diffeo(g.phi, theta, O, mu, ETA_FACTOR * eps_n / 3.0, steps=flow_steps)
                t_star, search_measure, rotation_norm = lemma.t_star, search.measure, search.norm
                swept = O.contains(zeta.inverse(u_centers))
                u_next = U.mask.copy()
                u_next[tuple(np.argwhere(U.mask)[swept].T)] = False
            else:
                zeta = Identity(n)
                u_next = U.mask & ~o_mask
        except UnrectError as exc:
            logger.error("element %d aborted at step %d: %s", index, step, exc)
            exc.report = state.summary()
            raise

        before = state.current.points
        state.current = state.current.mapped(zeta.evaluate, tag=f"zeta{step}")
        state.moved |= np.any(state.current.points != before, axis=1)
        state.active[o_idx] = False
        state.controlled[o_idx] = True
        state.zetas.append(zeta)
        state.region = GridRegion(U.grid, u_next)

        last_pts, last_jac = state.snapshots[-1]
        if isinstance(zeta, FlowDiffeo):
            moved_pts, step_jac = zeta.evaluate_with_jacobian(last_pts)
            snap = (moved_pts, step_jac @ last_jac)
        else:
            snap = (last_pts, last_jac)
        state.snapshots.append(snap)
        current_f = _f_snapshot(g, snap)
        step_distance = _c1_gap(current_f, previous)
        cum_distance = _c1_gap(current_f, base)
        previous = current_f

        image_measure = measure(state.current.points[collar_idx])
        row = LedgerRow(
            step=step,
            mu=mu,
            collar_mass=collar_mass,
            image_measure=image_measure,
            step_distance=step_distance,
            cum_distance=cum_distance,
        )
        state.ledger.append(row)
        state.details.append(
            StepDetail(
                step=step,
                mu=mu,
                collar_target=collar_target,
                measure_target=measure_target,
                distance_budget=eps_n,
                controlled_measure=measure(state.current.points[state.controlled]),
                remainder_mass=state.cloud.mass(state.active),
                t_star=t_star,
                search_measure=search_measure,
                rotation_norm=rotation_norm,
            )
        )
        logger.info(
            "element %d step %d: mu=%.4g collar=%.4g image=%.4g step=%.4g cum=%.4g",
            index, step, mu, collar_mass, image_measure, step_distance, cum_distance,
        )

        violations = []
        if not collar_mass < collar_target:
            violations.append(f"collar mass {collar_mass:.6g} >= sigma/3^{step} = {collar_target:.6g}")
        if image_measure > measure_target + tolerance:
            violations.append(f"image measure {image_measure:.6g} > sigma/2^{step} + tol = {measure_target + tolerance:.6g}")
        if step_distance > eps_n + SLACK:
            violations.append(f"step distance {step_distance:.6g} > eps_{step} = {eps_n:.6g}")
        if cum_distance > budget + SLACK:
            violations.append(f"cumulative distance {cum_distance:.6g} > {budget:.6g}")
        if violations:
            for v in violations:
                logger.error("element %d step %d: %s", index, step, v)
            raise BudgetError("; ".join(violations), report=state.summary())

    if len(state.snapshots) >= 3:
        state.cauchy = check_cauchy(state.snapshots, state.schedule)
    return state


# --------------------------------------------------------------------------------
# Convergence, composition control and gluing


def check_cauchy(snapshots: Sequence[Snapshot], schedule: Sequence[float], total: Optional[float] = None) -> CauchyReport:
    """Sampled ||zeta_n^o - zeta_m^o||_C1 against eps_{m+1} + ... + eps_n for every m < n.

    ``total`` is the full budget sum eps_k; the tail bound is total minus the
    scheduled partial sum, or the last scheduled term (exact for a geometric
    schedule) when ``total`` is not given.
    """
    if len(snapshots) < 3:
        raise GuardError("the Cauchy check needs at least three successive compositions")
    if len(schedule) < len(snapshots) - 1:
        raise GuardError("schedule is shorter than the run")
    rows: List[List[float]] = []
    offending: Optional[int] = None
    count = len(snapshots)
    for n in range(1, count):
        for m in range(n):
            gap = _c1_gap(snapshots[n], snapshots[m])
            bound = math.fsum(schedule[m:n])
            rows.append([float(m), float(n), gap, bound])
            if gap > bound + SLACK and offending is None:
                offending = n
    steps = count - 1
    tail = (total - math.fsum(schedule[:steps])) if total is not None else float(schedule[steps - 1])
    successive = [_c1_gap(snapshots[k], snapshots[k - 1]) for k in range(1, count)]
    q = successive[-1] / successive[-2] if successive[-2] > 0 else 0.0
    limit_error = successive[-1] * q / (1.0 - q) if 0.0 <= q < 0.99 else tail
    return CauchyReport(
        differences=rows,
        tail_bound=tail,
        limit_error=min(limit_error, tail),
        ok=offending is None,
        offending_step=offending,
    )


def composition_bound(f: ConstantRankMap, zeta: Diffeo, g: Diffeo, grid) -> CompositionReport:
    """||f.zeta.g - f.g||_C1 <= (1 + Lip(g)) ||zeta - id||_C1, for Lip(f) <= 1 and affine phi."""
    pts = np.asarray(grid, dtype=float)
    free = f.with_domain(None)
    distance = c1_distance(Pullback(free, Pullback(zeta, g)), Pullback(free, g), pts)
    moved = g.evaluate(pts)
    c0, c1 = c1_norm_from_identity(zeta.evaluate(moved), zeta.jacobian(moved), moved)
    g_lip = float(np.linalg.norm(g.jacobian(pts), ord=2, axis=(1, 2)).max(initial=0.0))
    bound = (1.0 + g_lip) * (c0 + c1)
    return CompositionReport(distance=distance, zeta_norm=c0 + c1, g_lipschitz=g_lip, bound=bound, ok=distance <= bound + SLACK)


class GluedMap(Diffeo):
    """xi = zeta^o_{1,k_1} . zeta^o_{2,k_2} . ... with k_i = level - i (diagonal schedule).

    ``level=None`` takes every element's full composition.
    """

    def __init__(self, states: Sequence[IterationState], level: Optional[int] = None, reverse: bool = False) -> None:
        self.states = list(states)
        self.level = level
        self.reverse = reverse
        self.parts: List[List[Diffeo]] = []
        for i, state in enumerate(self.states):
            k = len(state.zetas) if level is None else max(0, min(len(state.zetas), level - i))
            self.parts.append(state.zetas[:k])

    def _order(self) -> List[List[Diffeo]]:
        # rightmost factor acts first
        return self.parts if self.reverse else self.parts[::-1]

    def evaluate(self, points) -> np.ndarray:
        out, _ = as_points(points)
        for part in self._order():
            out = _compose(part, out)
        return out

    def inverse(self, points) -> np.ndarray:
        out, _ = as_points(points)
        for part in self._order()[::-1]:
            for zeta in part[::-1]:
                out = zeta.inverse(out)
        return out

    def jacobian(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        n = pts.shape[1]
        jac = np.broadcast_to(np.eye(n), (len(pts), n, n)).copy()
        for part in self._order():
            for zeta in part:
                jac = zeta.jacobian(pts) @ jac
                pts = zeta.evaluate(pts)
        return jac

    def descriptor(self) -> dict:
        return {"kind": "glued", "elements": len(self.parts), "level": self.level, "steps": [len(p) for p in self.parts]}


def glue_global(states: Sequence[IterationState], cover: CoverFamily, level: Optional[int] = None) -> Tuple[GluedMap, GlueReport]:
    """Glue per-element compositions; their supports must be pairwise disjoint on the grid."""
    glued = GluedMap(states, level)
    centers = cover.grid.centers()
    supports = []
    for part in glued.parts:
        moved = np.any(_compose(part, centers) != centers, axis=1) if part else np.zeros(len(centers), dtype=bool)
        supports.append(centers[moved])

    min_gap: Optional[float] = None
    for i in range(len(supports)):
        for j in range(i + 1, len(supports)):
            if len(supports[i]) == 0 or len(supports[j]) == 0:
                continue
            gap = float(cKDTree(supports[j]).query(supports[i])[0].min())
            min_gap = gap if min_gap is None else min(min_gap, gap)

    labels = cover.labels.reshape(-1)
    image = glued.evaluate(centers)
    order_error = float(np.abs(image - GluedMap(states, level, reverse=True).evaluate(centers)).max(initial=0.0))
    inside_error = 0.0
    for i, part in enumerate(glued.parts):
        mine = labels == i
        if mine.any() and part:
            inside_error = max(inside_error, float(np.abs(image[mine] - _compose(part, centers[mine])).max()))
    residual = labels == -1
    residual_error = float(np.abs(image[residual] - centers[residual]).max(initial=0.0))
    ok = (min_gap is None or min_gap > 0.0) and max(order_error, inside_error, residual_error) <= GLUE_TOL
    report = GlueReport(
        elements=len(glued.parts),
        min_gap=min_gap,
        order_error=order_error,
        inside_error=inside_error,
        residual_error=residual_error,
        ok=ok,
    )
    if not ok:
        logger.error("gluing failed: %s", report.model_dump())
        raise SupportOverlapError("supports of zeta - id meet across elements", report=report)
    return glued, report


def favard_bound_check(
    before: WeightedCloud,
    after: WeightedCloud,
    lipschitz: float,
    angles: int,
    delta: float,
) -> Tuple[float, float, bool]:
    """Favard(zeta(cloud)) <= Lip(zeta) * Favard(cloud) * 1.05 (plus one cell of slack)."""
    fav_before = favard_length(before, angles, delta).value if before.count else 0.0
    fav_after = favard_length(after, angles, delta).value if after.count else 0.0
    ok = fav_after <= max(1.0, lipschitz) * fav_before * FAVARD_SLACK + delta
    return fav_before, fav_after, ok


def sampled_lipschitz(states: Sequence[IterationState]) -> float:
    """max ||D zeta^o|| over every element's sample grid (1 outside the supports)."""
    lip = 1.0
    for state in states:
        jac = state.snapshots[-1][1]
        if len(jac):
            lip = max(lip, float(np.linalg.norm(jac, ord=2, axis=(1, 2)).max()))
    return lip
