"""Finite-generation test sets as weighted point clouds.

Purely unrectifiable sets only exist as limits; a depth-k cloud carries the
cell centres of generation k and its measure statements are meaningful at
covering scale comparable to ``cell_size``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import cumulative_trapezoid, quad

from unrect.errors import GuardError
from unrect.geometry import DIMENSIONS

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12
IFS_POINT_LIMIT = 10**7
FOUR_CORNER_MAX_DEPTH = 8


@dataclass(frozen=True, eq=False)
class WeightedCloud:
    """Weighted point set approximating H^m restricted to a test set."""

    points: np.ndarray
    weights: np.ndarray
    depth: int
    generator: str
    total_mass: float
    bounds: Tuple[np.ndarray, np.ndarray]
    cell_size: Optional[float] = None

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] not in DIMENSIONS:
            raise GuardError(f"cloud points must be a (k, 2) or (k, 3) array, got {pts.shape}")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise GuardError("one weight per point is required")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise GuardError("cloud has non-finite entries")
        if np.any(w < 0):
            raise GuardError("weights must be nonnegative")
        mass = math.fsum(w)
        if abs(mass - self.total_mass) > MASS_TOL * max(1.0, abs(self.total_mass)):
            raise GuardError(f"weights sum to {mass!r}, declared total mass is {self.total_mass!r}")
        lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
        if len(pts) and (np.any(pts < lo - MASS_TOL) or np.any(pts > hi + MASS_TOL)):
            raise GuardError("cloud points leave the declared bounding box")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bounds", (lo, hi))

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def count(self) -> int:
        return len(self.points)

    def mass(self, mask: Optional[np.ndarray] = None) -> float:
        return math.fsum(self.weights if mask is None else self.weights[mask])

    def mapped(self, fn: Callable[[np.ndarray], np.ndarray], tag: str = "mapped") -> "WeightedCloud":
        """Push the points through ``fn``; weights are carried unchanged."""
        moved = np.asarray(fn(self.points), dtype=float).reshape(self.points.shape)
        return WeightedCloud(
            points=moved,
            weights=self.weights,
            depth=self.depth,
            generator=f"{self.generator}|{tag}",
            total_mass=self.total_mass,
            bounds=_bbox(moved, self.n),
            cell_size=self.cell_size,
        )

    def restricted(self, mask: np.ndarray, tag: str = "restricted") -> "WeightedCloud":
        mask = np.asarray(mask, dtype=bool)
        pts = self.points[mask]
        return WeightedCloud(
            points=pts,
            weights=self.weights[mask],
            depth=self.depth,
            generator=f"{self.generator}|{tag}",
            total_mass=self.mass(mask),
            bounds=_bbox(pts, self.n),
            cell_size=self.cell_size,
        )


def _bbox(points: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    if len(points) == 0:
        return np.zeros(n), np.zeros(n)
    return points.min(axis=0), points.max(axis=0)


def empty_cloud(n: int = 2, generator: str = "empty") -> WeightedCloud:
    return WeightedCloud(np.empty((0, n)), np.empty(0), 0, generator, 0.0, (np.zeros(n), np.zeros(n)))


# --------------------------------------------------------------------------------
# Iterated function systems


@dataclass(frozen=True)
class SimilarityMap:
    """p -> ratio * R(angle) p + translation (planar)."""

    ratio: float
    translation: Tuple[float, float]
    angle: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio < 1.0:
            raise GuardError(f"similarity ratio must lie in (0, 1), got {self.ratio}")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        if self.angle == 0.0:
            linear = self.ratio * points
        else:
            linear = self.ratio * (points @ np.array([[c, -s], [s, c]]).T)
        return linear + np.asarray(self.translation, dtype=float)


@dataclass(frozen=True)
class IfsSystem:
    """Contracting similarities plus the seed they act on.

    The shipped presets satisfy the open set condition with the unit square
    as open set; this is documented, not checked.
    """

    name: str
    maps: Tuple[SimilarityMap, ...]
    seed: Tuple[float, float] = (0.5, 0.5)
    bounds: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 0.0), (1.0, 1.0))
    cell_ratio: Optional[float] = None

    @property
    def branching(self) -> int:
        return len(self.maps)


FOUR_CORNER = IfsSystem(
    name="four-corner",
    maps=tuple(SimilarityMap(0.25, t) for t in ((0.0, 0.0), (0.75, 0.0), (0.0, 0.75), (0.75, 0.75))),
    cell_ratio=0.25,
)

SEGMENT_IFS = IfsSystem(
    name="ifs-segment",
    maps=(SimilarityMap(0.5, (0.0, 0.0)), SimilarityMap(0.5, (0.5, 0.0))),
    seed=(0.5, 0.0),
    bounds=((0.0, 0.0), (1.0, 0.0)),
    cell_ratio=0.5,
)


def ifs_set(system: IfsSystem, depth: int) -> WeightedCloud:
    """Apply the system ``depth`` times to its seed; equal weights, total mass 1."""
    if depth < 0:
        raise GuardError("depth must be nonnegative")
    if system.branching == 0:
        raise GuardError("system has no maps")
    if system.branching**depth > IFS_POINT_LIMIT:
        raise GuardError(
            f"{system.name} at depth {depth} would produce {system.branching}^{depth} points (limit {IFS_POINT_LIMIT})"
        )
    points = np.array([system.seed], dtype=float)
    for _ in range(depth):
        points = np.concatenate([s(points) for s in system.maps])
    count = len(points)
    lo, hi = (np.asarray(b, dtype=float) for b in system.bounds)
    lo, hi = np.minimum(lo, points.min(axis=0)), np.maximum(hi, points.max(axis=0))
    cell = system.cell_ratio**depth if system.cell_ratio else None
    return WeightedCloud(
        points=points,
        weights=np.full(count, 1.0 / count),
        depth=depth,
        generator=system.name,
        total_mass=1.0,
        bounds=(lo, hi),
        cell_size=cell,
    )


def four_corner_cantor(depth: int) -> WeightedCloud:
    """Centres of the 4^depth squares of side 4^-depth of C_{1/4} x C_{1/4}."""
    if not 0 <= depth <= FOUR_CORNER_MAX_DEPTH:
        raise GuardError(f"four-corner depth must be in [0, {FOUR_CORNER_MAX_DEPTH}], got {depth}")
    return ifs_set(FOUR_CORNER, depth)


# --------------------------------------------------------------------------------
# Rectifiable contrast sets


class SegmentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["segment"] = "segment"
    a: Tuple[float, float]
    b: Tuple[float, float]


class GraphSpec(BaseModel):
    """Graph of the polynomial sum c_i x^i over ``x_range``."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["c1_graph"] = "c1_graph"
    coefficients: List[float] = Field(min_length=1)
    x_range: Tuple[float, float] = (0.0, 1.0)


CurveSpec = Union[SegmentSpec, GraphSpec]

_ARCLENGTH_NODES = 8193


def curve_length(spec: CurveSpec) -> float:
    if isinstance(spec, SegmentSpec):
        return math.hypot(spec.b[0] - spec.a[0], spec.b[1] - spec.a[1])
    slope = np.polynomial.polynomial.Polynomial(spec.coefficients).deriv()
    x0, x1 = spec.x_range
    value, _ = quad(lambda x: math.sqrt(1.0 + slope(x) ** 2), x0, x1, epsabs=1e-13, epsrel=1e-13, limit=200)
    return value


def rectifiable_curve(spec: CurveSpec, samples: int) -> WeightedCloud:
    """Arc-length uniform midpoint samples; each weight is length / samples."""
    if isinstance(spec, dict):
        spec = curve_from_descriptor(spec)
    if not isinstance(spec, (SegmentSpec, GraphSpec)):
        raise GuardError(f"unknown curve descriptor {spec!r}")
    if samples < 2:
        raise GuardError("need at least two samples")
    length = curve_length(spec)
    s = (np.arange(samples) + 0.5) / samples

    if isinstance(spec, SegmentSpec):
        a, b = np.asarray(spec.a, dtype=float), np.asarray(spec.b, dtype=float)
        points = a + s[:, None] * (b - a)
        tag = "segment"
    else:
        x0, x1 = spec.x_range
        if not x1 > x0:
            raise GuardError("graph x_range must be increasing")
        poly = np.polynomial.polynomial.Polynomial(spec.coefficients)
        slope = poly.deriv()
        xs = np.linspace(x0, x1, _ARCLENGTH_NODES)
        arclength = cumulative_trapezoid(np.sqrt(1.0 + slope(xs) ** 2), xs, initial=0.0)
        x = np.interp(s * arclength[-1], arclength, xs)
        points = np.column_stack([x, poly(x)])
        tag = "c1_graph"

    weights = np.full(samples, length / samples)
    return WeightedCloud(
        points=points,
        weights=weights,
        depth=0,
        generator=tag,
        total_mass=math.fsum(weights),
        bounds=_bbox(points, 2),
        cell_size=length / samples,
    )


def curve_from_descriptor(data: dict) -> CurveSpec:
    kind = data.get("kind")
    if kind == "segment":
        return SegmentSpec.model_validate(data)
    if kind == "c1_graph":
        return GraphSpec.model_validate(data)
    raise GuardError(f"invalid curve descriptor kind {kind!r}")
