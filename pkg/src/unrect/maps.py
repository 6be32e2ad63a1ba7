"""Constant-rank maps in the local normal form f = psi_inv . P_V . phi.

Every map here is vectorised over (k, n) point arrays and exposes a closed-form
Jacobian of shape (k, n, n). Diffeomorphisms come from a small catalogue with
closed-form inverses (the radial bump inverts by a few Newton steps), and are
closed under composition. Maps serialise to JSON descriptors.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from unrect.errors import DomainError, GuardError
from unrect.geometry import BoxRegion, Plane, Region, as_points

logger = logging.getLogger(__name__)

RANK_TOL = 1e-8
RANK_SPLIT = 1e4
DEFAULT_GRID = 64


class SmoothMap(ABC):
    """C^1 map R^n -> R^n evaluated on batches of points."""

    @abstractmethod
    def evaluate(self, points) -> np.ndarray: ...

    @abstractmethod
    def jacobian(self, points) -> np.ndarray: ...

    def __call__(self, points) -> np.ndarray:
        pts, single = as_points(points)
        out = self.evaluate(pts)
        return out[0] if single else out


class Diffeo(SmoothMap):
    """Smooth map with an evaluable inverse."""

    @abstractmethod
    def inverse(self, points) -> np.ndarray: ...

    @abstractmethod
    def descriptor(self) -> Dict[str, Any]: ...

    def forward(self, points) -> np.ndarray:
        return self.evaluate(points)

    def after(self, inner: "Diffeo") -> "Composed":
        """self . inner"""
        return Composed(self, inner)

    def inverted(self) -> "Diffeo":
        return Inverted(self)


@dataclass(frozen=True, eq=False)
class Identity(Diffeo):
    n: int = 2

    def evaluate(self, points) -> np.ndarray:
        return np.array(as_points(points)[0], copy=True)

    def inverse(self, points) -> np.ndarray:
        return np.array(as_points(points)[0], copy=True)

    def jacobian(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        return np.broadcast_to(np.eye(pts.shape[1]), (len(pts), pts.shape[1], pts.shape[1])).copy()

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": "identity", "n": self.n}


class Affine(Diffeo):
    """x -> A x + b with A invertible."""

    def __init__(self, matrix, shift=None) -> None:
        A = np.array(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise GuardError("affine matrix must be square")
        if abs(np.linalg.det(A)) < 1e-12:
            raise GuardError("affine matrix is singular")
        self.matrix = A
        self.shift = np.zeros(A.shape[0]) if shift is None else np.array(shift, dtype=float)
        self._inv = np.linalg.inv(A)

    @classmethod
    def translation(cls, shift) -> "Affine":
        shift = np.asarray(shift, dtype=float)
        return cls(np.eye(len(shift)), shift)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def evaluate(self, points) -> np.ndarray:
        return as_points(points)[0] @ self.matrix.T + self.shift

    def inverse(self, points) -> np.ndarray:
        return (as_points(points)[0] - self.shift) @ self._inv.T

    def jacobian(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        return np.broadcast_to(self.matrix, (len(pts), self.n, self.n)).copy()

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": "affine", "matrix": self.matrix.tolist(), "shift": self.shift.tolist()}


class Shear(Diffeo):
    """(x, y, ...) -> (x, y + alpha * s(x), ...) with s a polynomial.

    Requires |alpha| * max|s'| < 1 on ``x_range`` so fibres stay graphs of
    slope below one over the working box.
    """

    def __init__(self, alpha: float, coefficients: Sequence[float], x_range: Tuple[float, float] = (-2.0, 2.0), n: int = 2) -> None:
        self.alpha = float(alpha)
        self.coefficients = [float(c) for c in coefficients]
        self.x_range = (float(x_range[0]), float(x_range[1]))
        self._n = n
        self._s = np.polynomial.polynomial.Polynomial(self.coefficients)
        self._ds = self._s.deriv()
        xs = np.linspace(*self.x_range, 2049)
        slope = abs(self.alpha) * float(np.abs(self._ds(xs)).max())
        if slope >= 1.0:
            raise GuardError(f"shear slope |alpha| * max|s'| = {slope:.3f} must stay below 1")

    @property
    def n(self) -> int:
        return self._n

    def evaluate(self, points) -> np.ndarray:
        pts = np.array(as_points(points)[0], copy=True)
        pts[:, 1] += self.alpha * self._s(pts[:, 0])
        return pts

    def inverse(self, points) -> np.ndarray:
        pts = np.array(as_points(points)[0], copy=True)
        pts[:, 1] -= self.alpha * self._s(pts[:, 0])
        return pts

    def jacobian(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        J = np.broadcast_to(np.eye(self.n), (len(pts), self.n, self.n)).copy()
        J[:, 1, 0] = self.alpha * self._ds(pts[:, 0])
        return J

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": "shear",
            "alpha": self.alpha,
            "coefficients": self.coefficients,
            "x_range": list(self.x_range),
            "n": self.n,
        }


class RadialBump(Diffeo):
    """x -> c + (x - c) * (1 + a * exp(-|x - c|^2 / R^2)).

    The radial profile g(r) = r (1 + a e^{-r^2/R^2}) is strictly increasing for
    -1 < a < 2 e^{3/2} / 4, so the map is a diffeomorphism; the inverse solves
    g(r) = s by Newton's method.
    """

    _NEWTON_STEPS = 60

    def __init__(self, center, amplitude: float, radius: float) -> None:
        self.center = np.asarray(center, dtype=float)
        self.amplitude = float(amplitude)
        self.radius = float(radius)
        if not self.radius > 0:
            raise GuardError("bump radius must be positive")
        if not -0.9 <= self.amplitude <= 2.0:
            raise GuardError("bump amplitude must lie in [-0.9, 2.0] to stay monotone")

    @property
    def n(self) -> int:
        return self.center.shape[0]

    def _g(self, r: np.ndarray) -> np.ndarray:
        return r * (1.0 + self.amplitude * np.exp(-(r / self.radius) ** 2))

    def _dg(self, r: np.ndarray) -> np.ndarray:
        u = (r / self.radius) ** 2
        return 1.0 + self.amplitude * np.exp(-u) * (1.0 - 2.0 * u)

    def evaluate(self, points) -> np.ndarray:
        d = as_points(points)[0] - self.center
        r = np.linalg.norm(d, axis=1)
        return self.center + d * (1.0 + self.amplitude * np.exp(-(r / self.radius) ** 2))[:, None]

    def inverse(self, points) -> np.ndarray:
        d = as_points(points)[0] - self.center
        s = np.linalg.norm(d, axis=1)
        r = s / max(1.0 + self.amplitude, 0.1) if self.amplitude > 0 else s.copy()
        for _ in range(self._NEWTON_STEPS):
            step = (self._g(r) - s) / self._dg(r)
            r = np.maximum(r - step, 0.0)
            if float(np.abs(step).max(initial=0.0)) < 1e-15:
                break
        scale = np.ones_like(s)
        pos = s > 0
        scale[pos] = r[pos] / s[pos]
        return self.center + d * scale[:, None]

    def jacobian(self, points) -> np.ndarray:
        d = as_points(points)[0] - self.center
        r = np.linalg.norm(d, axis=1)
        factor = 1.0 + self.amplitude * np.exp(-(r / self.radius) ** 2)
        # D[d * factor(r)] = factor I + d (d factor/dr)(d / r)^T, and d factor/dr = -2 a r e^{-u} / R^2
        radial = -2.0 * self.amplitude * np.exp(-(r / self.radius) ** 2) / self.radius**2
        J = factor[:, None, None] * np.eye(self.n)[None]
        J += radial[:, None, None] * np.einsum("ki,kj->kij", d, d)
        return J

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": "radial_bump", "center": self.center.tolist(), "amplitude": self.amplitude, "radius": self.radius}


class Composed(Diffeo):
    """outer . inner"""

    def __init__(self, outer: Diffeo, inner: Diffeo) -> None:
        self.outer = outer
        self.inner = inner

    def evaluate(self, points) -> np.ndarray:
        return self.outer.evaluate(self.inner.evaluate(points))

    def inverse(self, points) -> np.ndarray:
        return self.inner.inverse(self.outer.inverse(points))

    def jacobian(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        mid = self.inner.evaluate(pts)
        return np.einsum("kij,kjl->kil", self.outer.jacobian(mid), self.inner.jacobian(pts))

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": "composed", "outer": self.outer.descriptor(), "inner": self.inner.descriptor()}


class Inverted(Diffeo):
    def __init__(self, base: Diffeo) -> None:
        self.base = base

    def evaluate(self, points) -> np.ndarray:
        return self.base.inverse(points)

    def inverse(self, points) -> np.ndarray:
        return self.base.evaluate(points)

    def jacobian(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        return np.linalg.inv(self.base.jacobian(self.base.inverse(pts)))

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": "inverse", "base": self.base.descriptor()}


def diffeo_from_descriptor(data: Optional[Dict[str, Any]], n: int = 2) -> Diffeo:
    if data is None:
        return Identity(n)
    kind = data.get("kind")
    if kind == "identity":
        return Identity(int(data.get("n", n)))
    if kind == "affine":
        return Affine(data["matrix"], data.get("shift"))
    if kind == "translation":
        return Affine.translation(data["shift"])
    if kind == "shear":
        return Shear(data["alpha"], data["coefficients"], tuple(data.get("x_range", (-2.0, 2.0))), int(data.get("n", n)))
    if kind == "radial_bump":
        return RadialBump(data["center"], data["amplitude"], data["radius"])
    if kind == "composed":
        return Composed(diffeo_from_descriptor(data["outer"], n), diffeo_from_descriptor(data["inner"], n))
    if kind == "inverse":
        return Inverted(diffeo_from_descriptor(data["base"], n))
    raise GuardError(f"unknown diffeo kind {kind!r}")


def round_trip_error(phi: Diffeo, points) -> float:
    pts, _ = as_points(points)
    there = np.abs(phi.inverse(phi.evaluate(pts)) - pts).max(initial=0.0)
    back = np.abs(phi.evaluate(phi.inverse(pts)) - pts).max(initial=0.0)
    return float(max(there, back))


def finite_difference_jacobian(fn, points, h: float = 1e-5) -> np.ndarray:
    """Central differences of a vectorised map, shape (k, n_out, n_in)."""
    pts, _ = as_points(points)
    k, n = pts.shape
    columns = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        columns.append((np.asarray(fn(pts + e)) - np.asarray(fn(pts - e))) / (2.0 * h))
    return np.stack(columns, axis=-1)


# --------------------------------------------------------------------------------
# Constant-rank maps


class ConstantRankMap(SmoothMap):
    """f = scale * psi_inv . P_V . phi, of rank m = dim V everywhere.

    ``domain`` is the box on which grids are laid out and inputs are accepted.
    """

    def __init__(
        self,
        phi: Diffeo,
        plane: Plane,
        psi_inv: Optional[Diffeo] = None,
        scale: float = 1.0,
        domain: Optional[Region] = None,
    ) -> None:
        self.phi = phi
        self.plane = plane
        self.psi_inv = psi_inv if psi_inv is not None else Identity(plane.n)
        if not scale > 0:
            raise GuardError("codomain scale must be positive")
        self.scale = float(scale)
        self.domain = domain

    @property
    def n(self) -> int:
        return self.plane.n

    @property
    def m(self) -> int:
        return self.plane.m

    def _check_domain(self, pts: np.ndarray) -> None:
        if self.domain is not None and len(pts) and not np.all(self.domain.contains(pts, strict=False)):
            raise DomainError("points lie outside the map's domain")

    def evaluate(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        self._check_domain(pts)
        return self.scale * self.psi_inv.evaluate(self.phi.evaluate(pts) @ self.plane.projector)

    def jacobian(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        self._check_domain(pts)
        z = self.phi.evaluate(pts) @ self.plane.projector
        inner = np.einsum("ij,kjl->kil", self.plane.projector, self.phi.jacobian(pts))
        return self.scale * np.einsum("kij,kjl->kil", self.psi_inv.jacobian(z), inner)

    def normal_coordinates(self, points) -> np.ndarray:
        """Coordinates of P_V phi(x) in the basis of V, times the codomain scale."""
        pts, _ = as_points(points)
        return self.scale * self.plane.coordinates(self.phi.evaluate(pts))

    def straightened(self, images) -> np.ndarray:
        """Coordinates in V of psi(y / scale) for images y = f(x)."""
        pts, _ = as_points(images)
        return self.scale * self.plane.coordinates(self.psi_inv.inverse(pts / self.scale))

    def recentred(self, center) -> "ConstantRankMap":
        """Same map in a chart with phi(center) = 0, so rotations turn about ``center``."""
        c = np.asarray(center, dtype=float)
        a = self.phi.evaluate(c[None])[0]
        phi = Composed(Affine.translation(-a), self.phi)
        psi_inv = Composed(self.psi_inv, Affine.translation(a @ self.plane.projector))
        return ConstantRankMap(phi, self.plane, psi_inv, self.scale, self.domain)

    def scaled(self, factor: float) -> "ConstantRankMap":
        return ConstantRankMap(self.phi, self.plane, self.psi_inv, self.scale * factor, self.domain)

    def with_domain(self, domain: Optional[Region]) -> "ConstantRankMap":
        return ConstantRankMap(self.phi, self.plane, self.psi_inv, self.scale, domain)

    def descriptor(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "kind": "constant_rank",
            "plane": self.plane.basis.tolist(),
            "phi": self.phi.descriptor(),
            "psi_inv": self.psi_inv.descriptor(),
            "scale": self.scale,
        }
        if isinstance(self.domain, BoxRegion):
            data["domain"] = {"lo": self.domain.lo.tolist(), "hi": self.domain.hi.tolist()}
        return data


def map_from_descriptor(data: Dict[str, Any]) -> ConstantRankMap:
    if "plane" in data:
        plane = Plane(np.asarray(data["plane"], dtype=float))
    else:
        plane = Plane.line(float(data.get("angle", 0.0)))
    domain = None
    if data.get("domain"):
        domain = BoxRegion(data["domain"]["lo"], data["domain"]["hi"])
    return ConstantRankMap(
        diffeo_from_descriptor(data.get("phi"), plane.n),
        plane,
        diffeo_from_descriptor(data.get("psi_inv"), plane.n),
        float(data.get("scale", 1.0)),
        domain,
    )


def projection_map(angle: float, center=None, domain: Optional[Region] = None) -> ConstantRankMap:
    """Orthogonal projection onto the line at ``angle`` through ``center``."""
    phi: Diffeo = Identity(2) if center is None else Affine.translation(-np.asarray(center, dtype=float))
    return ConstantRankMap(phi, Plane.line(angle), domain=domain)


def evaluate(f: ConstantRankMap, x) -> np.ndarray:
    return f(x)


def jacobian(f: SmoothMap, x) -> np.ndarray:
    pts, single = as_points(x)
    J = f.jacobian(pts)
    return J[0] if single else J


def rank_profile(f: SmoothMap, points, m: int) -> Dict[str, float]:
    """Singular value split at position m; raises when the rank is not m."""
    sv = np.linalg.svd(f.jacobian(points), compute_uv=False)
    kept = float(sv[:, m - 1].min())
    dropped = float(sv[:, m:].max(initial=0.0))
    split = kept / dropped if dropped > 0 else math.inf
    if kept <= RANK_TOL or dropped >= RANK_TOL or split < RANK_SPLIT:
        raise GuardError(f"Jacobian rank is not {m}: min kept {kept:.3g}, max dropped {dropped:.3g}")
    return {"min_kept": kept, "max_dropped": dropped, "split": split}


# --------------------------------------------------------------------------------
# Sampled C^1 distances


class Pullback(SmoothMap):
    """f . g"""

    def __init__(self, f: SmoothMap, g: SmoothMap) -> None:
        self.f = f
        self.g = g

    def evaluate(self, points) -> np.ndarray:
        return self.f.evaluate(self.g.evaluate(points))

    def jacobian(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        return np.einsum("kij,kjl->kil", self.f.jacobian(self.g.evaluate(pts)), self.g.jacobian(pts))


def box_grid(lo, hi, per_axis: int = DEFAULT_GRID) -> np.ndarray:
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def ball_grid(center, radius: float, per_axis: int = DEFAULT_GRID) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    pts = box_grid(c - radius, c + radius, per_axis)
    return pts[np.linalg.norm(pts - c, axis=1) <= radius]


def c1_distance(f: SmoothMap, g: SmoothMap, grid) -> float:
    """max |f - g| + max ||Df - Dg||_op over the grid."""
    pts = np.asarray(grid, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise GuardError("C1 distance needs a nonempty grid")
    c0 = float(np.linalg.norm(f.evaluate(pts) - g.evaluate(pts), axis=1).max())
    c1 = float(np.linalg.norm(f.jacobian(pts) - g.jacobian(pts), ord=2, axis=(1, 2)).max())
    return c0 + c1


def c1_norm_from_identity(values: np.ndarray, jacobians: np.ndarray, points: np.ndarray) -> Tuple[float, float]:
    """(sup |zeta - id|, sup ||D zeta - I||) from precomputed samples."""
    if len(points) == 0:
        return 0.0, 0.0
    n = points.shape[1]
    c0 = float(np.linalg.norm(values - points, axis=1).max())
    c1 = float(np.linalg.norm(jacobians - np.eye(n), ord=2, axis=(1, 2)).max())
    return c0, c1


# --------------------------------------------------------------------------------
# Charts and normalisation


def chart_radius(f: ConstantRankMap, x, domain: Region, samples: int = 512) -> Tuple[float, float]:
    """(r_x, r): r_x = dist(phi(x), phi(boundary of domain)); the default r is r_x / 2."""
    x = np.asarray(x, dtype=float)
    if not domain.contains(x[None], strict=True)[0]:
        raise DomainError("chart centre lies outside the domain")
    image_boundary = f.phi.evaluate(domain.boundary_samples(samples))
    r_x = float(np.linalg.norm(image_boundary - f.phi.evaluate(x[None])[0], axis=1).min())
    return r_x, 0.5 * r_x


def normalise_lipschitz(f: ConstantRankMap, grid) -> Tuple[ConstantRankMap, float]:
    """Rescale the codomain so the sampled Lipschitz constant is at most one."""
    lip = float(np.linalg.norm(f.jacobian(np.asarray(grid, dtype=float)), ord=2, axis=(1, 2)).max())
    factor = max(1.0, lip)
    if factor > 1.0:
        logger.info("rescaling codomain by 1/%.4g to normalise Lip(f) <= 1", factor)
        return f.scaled(1.0 / factor), factor
    return f, 1.0