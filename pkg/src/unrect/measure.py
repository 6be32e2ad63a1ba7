"""Fixed-scale measure estimates for point clouds.

Convention: every estimate is the unnormalised delta-scale content (occupied
cells times delta^m, or the length of a union of delta-intervals). Acceptance
checks compare ratios or test zero against positive, so the usual
alpha_m / 2^m normalisation would cancel anyway.
"""

from __future__ import annotations

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np

from unrect.core.models import MeasureEstimate, MeasureRow
from unrect.errors import GuardError
from unrect.parallel import parallel_map
from unrect.sets import WeightedCloud

logger = logging.getLogger(__name__)

MIN_DELTA = 1e-9
DEFAULT_OFFSETS = 4
SCALE_MISMATCH = 16.0


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not math.isfinite(delta) or delta < MIN_DELTA:
        raise GuardError(f"covering scale must be >= {MIN_DELTA}, got {delta}")
    return delta


def _warn_scale(cloud: WeightedCloud, delta: float) -> None:
    cell = cloud.cell_size
    if cell and (delta > SCALE_MISMATCH * cell or delta < cell / SCALE_MISMATCH):
        logger.warning(
            "covering scale %.3g is far from the generation scale %.3g of %s (depth %d); "
            "finite clouds only carry meaningful content near the matched scale",
            delta,
            cell,
            cloud.generator,
            cloud.depth,
        )


def covering_tolerance(delta: float, m: int = 1, cells: float = 1.0) -> float:
    """Slack of a fixed-scale estimate: four cells of content per unit of ``cells``."""
    return 4.0 * delta**m * cells


# --------------------------------------------------------------------------------
# Grid covers


def grid_offsets(dim: int, delta: float, offset=0.0, count: int = DEFAULT_OFFSETS, seed: int = 0) -> np.ndarray:
    """The given anchor followed by ``count - 1`` random anchors in [0, delta)^dim."""
    if count < 1:
        raise GuardError("need at least one grid offset")
    base = np.broadcast_to(np.asarray(offset, dtype=float), (dim,))
    rng = np.random.default_rng(seed)
    extra = base + rng.uniform(0.0, 1.0, size=(count - 1, dim)) * delta
    return np.vstack([base[None, :], extra])


def occupied_cells(coords: np.ndarray, delta: float, offset: np.ndarray) -> int:
    if len(coords) == 0:
        return 0
    keys = np.floor((coords - offset) / delta).astype(np.int64)
    return int(len(np.unique(keys, axis=0)))


def coordinate_measure(
    coords,
    m: int,
    delta: float,
    offset=0.0,
    offsets: int = DEFAULT_OFFSETS,
    seed: int = 0,
) -> MeasureEstimate:
    """N(delta) * delta^m averaged over grid anchors, for points in any R^d."""
    delta = _check_delta(delta)
    pts = np.asarray(coords, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    anchors = grid_offsets(pts.shape[1], delta, offset, offsets, seed)
    counts = parallel_map(lambda a: occupied_cells(pts, delta, a), list(anchors))
    cells = math.fsum(counts) / len(counts)
    return MeasureEstimate(value=cells * delta**m, delta=delta, method="grid_cover", samples=len(pts), cells=cells)


def box_cover_measure(
    cloud: WeightedCloud,
    m: int,
    delta: float,
    offset=0.0,
    offsets: int = DEFAULT_OFFSETS,
    seed: int = 0,
) -> MeasureEstimate:
    if not 1 <= m < cloud.n:
        raise GuardError(f"need 1 <= m < n, got m={m}, n={cloud.n}")
    delta = _check_delta(delta)
    _warn_scale(cloud, delta)
    return coordinate_measure(cloud.points, m, delta, offset=offset, offsets=offsets, seed=seed)


# --------------------------------------------------------------------------------
# Projected length


def shadow_intervals(cloud: WeightedCloud, angle: float, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """delta-intervals centred at the projections onto the line at ``angle``."""
    if cloud.n != 2:
        raise GuardError("projected length is defined for planar clouds")
    t = cloud.points @ np.array([math.cos(angle), math.sin(angle)])
    half = 0.5 * delta
    return t - half, t + half


def merge_intervals(starts: np.ndarray, ends: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted sweep; intervals that touch are merged."""
    if len(starts) == 0:
        return np.empty(0), np.empty(0)
    order = np.argsort(starts, kind="stable")
    s, e = starts[order], ends[order]
    reach = np.maximum.accumulate(e)
    new = np.empty(len(s), dtype=bool)
    new[0] = True
    new[1:] = s[1:] > reach[:-1]
    heads = np.flatnonzero(new)
    tails = np.r_[heads[1:] - 1, len(s) - 1]
    return s[heads], reach[tails]


def pairwise_merge_oracle(starts: Sequence[float], ends: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Brute force: fold each interval into the disjoint set it overlaps. O(k^2)."""
    ms = np.empty(0)
    me = np.empty(0)
    for s, e in zip(starts, ends):
        while True:
            hit = (ms <= e) & (s <= me)
            if not hit.any():
                break
            s = min(s, ms[hit].min())
            e = max(e, me[hit].max())
            ms, me = ms[~hit], me[~hit]
        ms = np.append(ms, s)
        me = np.append(me, e)
    order = np.argsort(ms, kind="stable")
    return ms[order], me[order]


def union_length(starts: np.ndarray, ends: np.ndarray) -> float:
    return math.fsum(ends - starts)


def projected_length(cloud: WeightedCloud, angle: float, delta: float) -> MeasureEstimate:
    delta = _check_delta(delta)
    starts, ends = merge_intervals(*shadow_intervals(cloud, angle, delta))
    return MeasureEstimate(
        value=union_length(starts, ends),
        delta=delta,
        method="interval_union",
        samples=cloud.count,
        cells=float(len(starts)),
    )


def favard_trace(cloud: WeightedCloud, angles: int, delta: float) -> List[MeasureRow]:
    if angles < 8:
        raise GuardError("Favard quadrature needs at least 8 angles")
    if cloud.n != 2:
        raise GuardError("Favard length is defined for planar clouds")
    delta = _check_delta(delta)
    grid = [math.pi * j / angles for j in range(angles)]
    lengths = parallel_map(lambda a: projected_length(cloud, a, delta).value, grid)
    return [MeasureRow(angle=a, value=v, delta=delta, method="interval_union") for a, v in zip(grid, lengths)]


def favard_length(cloud: WeightedCloud, angles: int, delta: float) -> MeasureEstimate:
    """(1/pi) * integral over [0, pi) of the projected length, equispaced quadrature."""
    trace = favard_trace(cloud, angles, delta)
    value = math.fsum(row.value for row in trace) * (math.pi / angles) / math.pi
    return MeasureEstimate(value=value, delta=float(delta), method="favard_quadrature", samples=cloud.count)


def scaled_cloud(cloud: WeightedCloud, factor: float) -> WeightedCloud:
    """Image under l(x) = factor * x."""
    return cloud.mapped(lambda p: factor * p, tag=f"scaled({factor:g})")

