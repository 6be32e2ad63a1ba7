"""Linear algebra over R^n (n in {2, 3}): rotations with geodesics, projections
onto m-planes, the standard mollifier, the smooth cutoff and the region family
used by every distance query in the package.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation as _SciPyRotation
from scipy.special import gamma

from unrect.errors import GuardError

logger = logging.getLogger(__name__)

DIMENSIONS = (2, 3)
ORTHO_TOL = 1e-12


def as_points(p) -> Tuple[np.ndarray, bool]:
    """Return ``p`` as a (k, n) float array plus whether a single vector was given."""
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.ndim != 2:
        raise GuardError(f"expected a vector or a (k, n) array, got shape {arr.shape}")
    return pts, single


def check_vec(p) -> np.ndarray:
    v = np.asarray(p, dtype=float)
    if v.ndim != 1 or v.shape[0] not in DIMENSIONS:
        raise GuardError(f"vectors live in R^2 or R^3, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise GuardError("vector has non-finite components")
    return v


# --------------------------------------------------------------------------------
# Rotations


def _skew_from_upper(values: np.ndarray, n: int) -> np.ndarray:
    K = np.zeros((n, n))
    K[np.triu_indices(n, k=1)] = values
    return K - K.T


@dataclass(frozen=True, eq=False)
class Rotation:
    """Element of SO(n) kept as its generator X in so(n) together with exp(X).

    ``at(t)`` walks the geodesic t -> exp(tX) with at(0) = id and at(1) = self.
    """

    generator: np.ndarray
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        X = np.array(self.generator, dtype=float)
        if X.ndim != 2 or X.shape[0] != X.shape[1] or X.shape[0] not in DIMENSIONS:
            raise GuardError(f"generator must be a 2x2 or 3x3 matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise GuardError("generator has non-finite entries")
        scale = max(1.0, float(np.abs(X).max()))
        if float(np.abs(X + X.T).max()) > ORTHO_TOL * scale:
            raise GuardError("generator is not skew-symmetric")
        X = 0.5 * (X - X.T)
        M = expm(X)
        X.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "generator", X)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def identity(cls, n: int) -> "Rotation":
        return cls(np.zeros((n, n)))

    @classmethod
    def from_angle(cls, angle: float) -> "Rotation":
        """Planar rotation by ``angle`` (counter-clockwise)."""
        return cls(np.array([[0.0, -angle], [angle, 0.0]]))

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float]) -> "Rotation":
        x, y, z = (float(c) for c in rotvec)
        return cls(np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]]))

    @property
    def n(self) -> int:
        return self.generator.shape[0]

    @property
    def norm(self) -> float:
        """Operator norm of the generator; equals the rotation angle."""
        return float(np.linalg.norm(self.generator, 2))

    def is_identity(self) -> bool:
        return not np.any(self.generator)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T

    def inverse(self) -> "Rotation":
        return Rotation(-self.generator)

    def at(self, t: float) -> "Rotation":
        return rotation_from_generator(self.generator, t)

    def distance_to_identity(self) -> float:
        """||exp(X) - I|| in the operator norm; 2 sin(|X| / 2) for a plane rotation."""
        return float(np.linalg.norm(self.matrix - np.eye(self.n), 2))

    def to_list(self) -> list:
        return self.generator.tolist()


def rotation_from_generator(X, t: float = 1.0) -> Rotation:
    if not math.isfinite(t):
        raise GuardError("time parameter must be finite")
    return Rotation(float(t) * np.asarray(X, dtype=float))


def random_generator(rng: np.random.Generator, n: int, rho: float) -> np.ndarray:
    """Generator with uniform direction on the unit sphere of so(n) and norm uniform in (0, rho)."""
    if n not in DIMENSIONS:
        raise GuardError(f"n must be 2 or 3, got {n}")
    if not rho > 0:
        raise GuardError("rho must be positive")
    d = n * (n - 1) // 2
    u = rng.standard_normal(d)
    while not np.any(u):
        u = rng.standard_normal(d)
    K = _skew_from_upper(u, n)
    K /= np.linalg.norm(K, 2)
    magnitude = 0.0
    while magnitude == 0.0:
        magnitude = float(rng.uniform(0.0, rho))
    return magnitude * K


def random_rotation(rng: np.random.Generator, n: int) -> Rotation:
    """Haar-uniform rotation."""
    if n == 2:
        return Rotation.from_angle(float(rng.uniform(-math.pi, math.pi)))
    if n == 3:
        return Rotation.from_rotvec(_SciPyRotation.random(None, rng).as_rotvec())
    raise GuardError(f"n must be 2 or 3, got {n}")


# --------------------------------------------------------------------------------
# Planes and projections


@dataclass(frozen=True, eq=False)
class Plane:
    """m-plane through the origin given by m orthonormal rows."""

    basis: np.ndarray

    def __post_init__(self) -> None:
        B = np.atleast_2d(np.array(self.basis, dtype=float))
        m, n = B.shape
        if n not in DIMENSIONS or not 1 <= m < n:
            raise GuardError(f"need 1 <= m < n with n in {{2, 3}}, got m={m}, n={n}")
        if float(np.abs(B @ B.T - np.eye(m)).max()) > ORTHO_TOL:
            raise GuardError("plane basis is not orthonormal")
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)

    @classmethod
    def line(cls, angle: float) -> "Plane":
        return cls(np.array([[math.cos(angle), math.sin(angle)]]))

    @classmethod
    def from_vectors(cls, vectors) -> "Plane":
        A = np.atleast_2d(np.asarray(vectors, dtype=float))
        Q, R = np.linalg.qr(A.T)
        if np.any(np.abs(np.diag(R)) < 1e-12):
            raise GuardError("spanning vectors are linearly dependent")
        return cls(Q.T[: A.shape[0]])

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    @property
    def m(self) -> int:
        return self.basis.shape[0]

    @property
    def projector(self) -> np.ndarray:
        return self.basis.T @ self.basis

    def rotated(self, rotation: Rotation) -> "Plane":
        """theta(V)."""
        return Plane(self.basis @ rotation.matrix.T)

    def coordinates(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.basis.T


def project(V: Plane, p) -> np.ndarray:
    return np.asarray(p, dtype=float) @ V.projector


# --------------------------------------------------------------------------------
# Mollifier


@lru_cache(maxsize=None)
def mollifier_normalisation(n: int) -> float:
    """I_n such that exp(1/(|x|^2 - 1)) / I_n has unit mass on the unit ball."""
    surface = 2.0 * math.pi ** (n / 2.0) / gamma(n / 2.0)

    def radial(r: float) -> float:
        return math.exp(-1.0 / (1.0 - r * r)) * r ** (n - 1) if r < 1.0 else 0.0

    value, _ = quad(radial, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12)
    return surface * value


def mollifier_value(x, eps: float):
    """Standard mollifier scaled to radius ``eps``: eps^-n * rho(x / eps)."""
    if not eps > 0 or not math.isfinite(eps):
        raise GuardError("mollifier radius must be positive")
    pts, single = as_points(x)
    n = pts.shape[1]
    r2 = np.sum((pts / eps) ** 2, axis=1)
    out = np.zeros(len(pts))
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside])) / (mollifier_normalisation(n) * eps**n)
    return float(out[0]) if single else out


# --------------------------------------------------------------------------------
# Regions


class Region(ABC):
    """Set in R^n supporting distance queries; distance is 0 on the set."""

    @property
    @abstractmethod
    def n(self) -> int: ...

    @abstractmethod
    def distance(self, points) -> np.ndarray: ...

    @abstractmethod
    def distance_gradient(self, points) -> np.ndarray: ...

    @abstractmethod
    def contains(self, points, strict: bool = True) -> np.ndarray: ...

    @abstractmethod
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]: ...

    @abstractmethod
    def boundary_samples(self, count: int = 256) -> np.ndarray: ...


def _unit(vectors: np.ndarray, norms: np.ndarray) -> np.ndarray:
    out = np.zeros_like(vectors)
    pos = norms > 0
    out[pos] = vectors[pos] / norms[pos, None]
    return out


def _sphere_samples(n: int, count: int) -> np.ndarray:
    if n == 2:
        a = 2.0 * math.pi * np.arange(count) / count
        return np.column_stack([np.cos(a), np.sin(a)])
    # Fibonacci lattice
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (1.0 + math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


@dataclass(frozen=True, eq=False)
class BallRegion(Region):
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        c = check_vec(self.center)
        if not self.radius > 0:
            raise GuardError("ball radius must be positive")
        object.__setattr__(self, "center", c)

    @property
    def n(self) -> int:
        return self.center.shape[0]

    def distance(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        return np.maximum(np.linalg.norm(pts - self.center, axis=1) - self.radius, 0.0)

    def distance_gradient(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        diff = pts - self.center
        norms = np.linalg.norm(diff, axis=1)
        grad = _unit(diff, norms)
        grad[norms <= self.radius] = 0.0
        return grad

    def contains(self, points, strict: bool = True) -> np.ndarray:
        pts, _ = as_points(points)
        r = np.linalg.norm(pts - self.center, axis=1)
        return r < self.radius if strict else r <= self.radius

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius

    def boundary_samples(self, count: int = 256) -> np.ndarray:
        return self.center + self.radius * _sphere_samples(self.n, count)


@dataclass(frozen=True, eq=False)
class BoxRegion(Region):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo, hi = check_vec(self.lo), check_vec(self.hi)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise GuardError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n(self) -> int:
        return self.lo.shape[0]

    def _excess(self, pts: np.ndarray) -> np.ndarray:
        return np.maximum(np.maximum(self.lo - pts, 0.0), pts - self.hi)

    def distance(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        return np.linalg.norm(self._excess(pts), axis=1)

    def distance_gradient(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        ex = self._excess(pts)
        signed = np.where(pts < self.lo, -ex, ex)
        return _unit(signed, np.linalg.norm(ex, axis=1))

    def contains(self, points, strict: bool = True) -> np.ndarray:
        pts, _ = as_points(points)
        if strict:
            return np.all((pts > self.lo) & (pts < self.hi), axis=1)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.lo.copy(), self.hi.copy()

    def boundary_samples(self, count: int = 256) -> np.ndarray:
        per_face = max(2, count // (2 * self.n))
        samples = []
        for axis in range(self.n):
            others = [k for k in range(self.n) if k != axis]
            axes = [np.linspace(self.lo[k], self.hi[k], per_face) for k in others]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(others))
            for value in (self.lo[axis], self.hi[axis]):
                face = np.empty((len(mesh), self.n))
                face[:, others] = mesh
                face[:, axis] = value
                samples.append(face)
        return np.concatenate(samples)


class PointRegion(Region):
    """Finite sample of a set; distances come from a k-d tree."""

    def __init__(self, samples) -> None:
        pts, _ = as_points(samples)
        if len(pts) == 0:
            raise GuardError("point region needs at least one sample")
        if pts.shape[1] not in DIMENSIONS:
            raise GuardError("samples must live in R^2 or R^3")
        self.samples = pts
        self._tree = cKDTree(pts)

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    def nearest(self, points) -> Tuple[np.ndarray, np.ndarray]:
        pts, _ = as_points(points)
        d, idx = self._tree.query(pts)
        return d, self.samples[idx]

    def distance(self, points) -> np.ndarray:
        return self.nearest(points)[0]

    def distance_gradient(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        d, near = self.nearest(pts)
        return _unit(pts - near, d)

    def contains(self, points, strict: bool = True) -> np.ndarray:
        pts, _ = as_points(points)
        if strict:
            return np.zeros(len(pts), dtype=bool)
        return self.distance(pts) == 0.0

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.samples.min(axis=0), self.samples.max(axis=0)

    def boundary_samples(self, count: int = 256) -> np.ndarray:
        return self.samples


# --------------------------------------------------------------------------------
# Occupancy grids


@dataclass(frozen=True, eq=False)
class Grid:
    """Axis-aligned grid of cubical cells of side ``h`` anchored at ``lo``."""

    lo: np.ndarray
    h: float
    shape: Tuple[int, ...]

    @classmethod
    def covering(cls, lo, hi, h: float) -> "Grid":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        if not h > 0:
            raise GuardError("grid spacing must be positive")
        shape = tuple(max(1, int(math.ceil(s))) for s in (hi - lo) / h - 1e-9)
        if math.prod(shape) > 50_000_000:
            raise GuardError(f"grid of shape {shape} exceeds the cell budget; coarsen h")
        return cls(lo, float(h), shape)

    @property
    def n(self) -> int:
        return len(self.shape)

    def centers(self, mask: Optional[np.ndarray] = None) -> np.ndarray:
        idx = np.argwhere(mask) if mask is not None else np.indices(self.shape).reshape(self.n, -1).T
        return self.lo + (idx + 0.5) * self.h

    def index(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        return np.floor((pts - self.lo) / self.h).astype(np.int64)

    def lookup(self, mask: np.ndarray, points) -> np.ndarray:
        idx = self.index(points)
        ok = np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=1)
        out = np.zeros(len(idx), dtype=bool)
        out[ok] = mask[tuple(idx[ok].T)]
        return out


class GridRegion(Region):
    """Union of grid cells. Distances are measured to the cell interfaces
    between member and non-member cells (accurate to h/2)."""

    def __init__(self, grid: Grid, mask: np.ndarray) -> None:
        if mask.shape != grid.shape:
            raise GuardError("mask shape does not match the grid")
        self.grid = grid
        self.mask = mask.astype(bool)
        self.interface = self._interface_points()
        self._tree = cKDTree(self.interface) if len(self.interface) else None

    def _interface_points(self) -> np.ndarray:
        padded = np.pad(self.mask, 1, constant_values=False)
        chunks = []
        for axis in range(self.grid.n):
            for step in (-1, 1):
                neighbour = np.roll(padded, -step, axis=axis)
                edge = (padded & ~neighbour)[tuple(slice(1, -1) for _ in range(self.grid.n))]
                if edge.any():
                    offset = np.zeros(self.grid.n)
                    offset[axis] = 0.5 * step * self.grid.h
                    chunks.append(self.grid.centers(edge) + offset)
        if not chunks:
            return np.empty((0, self.grid.n))
        return np.concatenate(chunks)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    def contains(self, points, strict: bool = True) -> np.ndarray:
        return self.grid.lookup(self.mask, points)

    def boundary_distance(self, points) -> np.ndarray:
        """Distance to the region's boundary (interfaces), inside or out."""
        pts, _ = as_points(points)
        if self._tree is None:
            return np.full(len(pts), np.inf)
        return self._tree.query(pts)[0]

    def distance(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        d = self.boundary_distance(pts)
        d[self.contains(pts)] = 0.0
        return d

    def distance_gradient(self, points) -> np.ndarray:
        pts, _ = as_points(points)
        grad = np.zeros_like(pts)
        if self._tree is None:
            return grad
        d, idx = self._tree.query(pts)
        outside = ~self.contains(pts)
        grad[outside] = _unit(pts[outside] - self.interface[idx[outside]], d[outside])
        return grad

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.is_empty:
            return self.grid.lo.copy(), self.grid.lo.copy()
        idx = np.argwhere(self.mask)
        lo = self.grid.lo + idx.min(axis=0) * self.grid.h
        hi = self.grid.lo + (idx.max(axis=0) + 1) * self.grid.h
        return lo, hi

    def boundary_samples(self, count: int = 256) -> np.ndarray:
        return self.interface

    def inradius(self) -> float:
        if self.is_empty:
            return 0.0
        padded = np.pad(self.mask, 1, constant_values=False)
        edt = ndimage.distance_transform_edt(padded)
        # EDT counts to the nearest outside centre; the boundary sits half a cell closer.
        return float(max(edt.max() - 0.5, 0.0) * self.grid.h)

    def cell_count(self) -> int:
        return int(self.mask.sum())


# --------------------------------------------------------------------------------
# Smooth cutoff


def _psi(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    pos = x > 0.0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x) -> np.ndarray:
    """C-infinity transition: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    p, q = _psi(x), _psi(1.0 - x)
    return p / (p + q)


def smooth_step_derivative(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    mid = (x > 0.0) & (x < 1.0)
    if mid.any():
        xm = x[mid]
        p, q = np.exp(-1.0 / xm), np.exp(-1.0 / (1.0 - xm))
        dp, dq = p / xm**2, q / (1.0 - xm) ** 2
        out[mid] = (dp * q + p * dq) / (p + q) ** 2
    return out


@dataclass(frozen=True, eq=False)
class CutoffProfile:
    """Closed-form radial stand-in for the mollified indicator of B_{5mu/8}(O).

    Equal to 1 on B_{mu/2}(O), 0 outside B_{3mu/4}(O), smooth in between.
    """

    region: Region
    mu: float

    def __post_init__(self) -> None:
        if not self.mu > 0 or not math.isfinite(self.mu):
            raise GuardError("cutoff width mu must be positive")

    @property
    def inner_radius(self) -> float:
        return 5.0 * self.mu / 8.0

    @property
    def mollification_radius(self) -> float:
        return self.mu / 8.0

    @property
    def support_radius(self) -> float:
        return 3.0 * self.mu / 4.0

    def _u(self, d: np.ndarray) -> np.ndarray:
        return (d - 0.5 * self.mu) / (0.25 * self.mu)

    def value(self, y) -> np.ndarray:
        pts, _ = as_points(y)
        return 1.0 - smooth_step(self._u(self.region.distance(pts)))

    def gradient(self, y) -> np.ndarray:
        pts, _ = as_points(y)
        slope = -smooth_step_derivative(self._u(self.region.distance(pts))) * (4.0 / self.mu)
        return slope[:, None] * self.region.distance_gradient(pts)

    def gradient_constant(self, samples) -> float:
        """Measured C with max |grad| = C / mu over ``samples``."""
        grads = self.gradient(samples)
        c = float(np.linalg.norm(grads, axis=1).max(initial=0.0) * self.mu)
        logger.info("cutoff gradient constant C = %.4f (mu = %.4g)", c, self.mu)
        return c


def smooth_cutoff(profile: CutoffProfile, y):
    pts, single = as_points(y)
    values = profile.value(pts)
    return float(values[0]) if single else values


def convolved_cutoff(profile: CutoffProfile, y, resolution: int = 24):
    """Reference value of the literal mollified indicator by grid quadrature.

    Slow; only for cross-checking :func:`smooth_cutoff` on coarse grids.
    """
    pts, single = as_points(y)
    n = pts.shape[1]
    eps = profile.mollification_radius
    axis = (np.arange(-resolution, resolution + 1) + 0.0) * (eps / resolution)
    offsets = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    kernel = mollifier_value(offsets, eps)
    keep = kernel > 0
    offsets, kernel = offsets[keep], kernel[keep] / kernel[keep].sum()
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        inside = profile.region.distance(p - offsets) < profile.inner_radius
        out[i] = float(np.dot(kernel, inside))
    return float(out[0]) if single else out
