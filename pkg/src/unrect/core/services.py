"""Core services layer for unrect.

This module turns ExperimentConfig records into library calls so front-ends
(the CLI today) consume one API and get pydantic result models back.
"""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from unrect.config import ExperimentConfig, get_settings
from unrect.core.models import (
    CloudMeta,
    FavardRow,
    LedgerRow,
    LemmaReport,
    LocalVariantReport,
    MeasureEstimate,
    RunSummary,
    SearchReport,
)
from unrect.cover import (
    IterationState,
    build_cover,
    default_spacing,
    epsilon_schedule,
    favard_bound_check,
    glue_global,
    iterate_element,
    sampled_lipschitz,
)
from unrect.flow import key_lemma_diffeo, perturb_locally, search_rotation
from unrect.geometry import BallRegion, BoxRegion, Region, Rotation, random_generator
from unrect.maps import ConstantRankMap, box_grid, diffeo_from_descriptor, map_from_descriptor, normalise_lipschitz
from unrect.measure import box_cover_measure, favard_length, favard_trace, projected_length
from unrect.parallel import parallel_map
from unrect import plots, storage
from unrect.sets import (
    SEGMENT_IFS,
    GraphSpec,
    SegmentSpec,
    WeightedCloud,
    four_corner_cantor,
    ifs_set,
    rectifiable_curve,
)

logger = logging.getLogger(__name__)

FALLBACK_DELTA = 1e-3
LEMMA_CENTER = (0.5, 0.5)


def chart_regions(cfg: ExperimentConfig) -> List[Region]:
    charts: List[Region] = []
    for chart in cfg.charts:
        if chart.shape == "ball":
            charts.append(BallRegion(np.asarray(chart.center, dtype=float), float(chart.radius)))
        else:
            charts.append(BoxRegion(np.asarray(chart.lo, dtype=float), np.asarray(chart.hi, dtype=float)))
    return charts


def combined_ledger(states: List[IterationState], steps: int) -> List[LedgerRow]:
    """Per-step totals over elements: masses and measures add, distances take the max."""
    rows: List[LedgerRow] = []
    for k in range(steps + 1):
        here = [s.ledger[k] for s in states if len(s.ledger) > k]
        rows.append(
            LedgerRow(
                step=k,
                collar_mass=math.fsum(r.collar_mass for r in here),
                image_measure=math.fsum(r.image_measure for r in here),
                step_distance=max((r.step_distance for r in here), default=0.0),
                cum_distance=max((r.cum_distance for r in here), default=0.0),
            )
        )
    return rows


class UnrectServices:
    """Facade for every experiment the CLI runs."""

    def __init__(self, threads: Optional[int] = None) -> None:
        self.threads = threads if threads is not None else get_settings().threads

    # Sets
    def cloud(self, cfg: ExperimentConfig, depth: Optional[int] = None) -> WeightedCloud:
        if cfg.input is not None:
            return storage.read_cloud(cfg.input)
        depth = cfg.depth if depth is None else depth
        if cfg.generator == "four-corner":
            return four_corner_cantor(depth)
        if cfg.generator == "ifs-segment":
            return ifs_set(SEGMENT_IFS, depth)
        if cfg.generator == "segment":
            return rectifiable_curve(SegmentSpec(a=cfg.a, b=cfg.b), cfg.samples)
        return rectifiable_curve(GraphSpec(coefficients=cfg.coefficients, x_range=cfg.x_range), cfg.samples)

    def gen(self, cfg: ExperimentConfig) -> Tuple[WeightedCloud, CloudMeta]:
        cloud = self.cloud(cfg)
        if cfg.out is None:
            return cloud, storage.cloud_meta(cloud)
        meta = storage.write_cloud(cloud, cfg.out)
        if cfg.svg is not None:
            plots.cloud_scatter(cloud.points, None, cfg.svg, title=cloud.generator)
        return cloud, meta

    @staticmethod
    def delta_for(cfg: ExperimentConfig, cloud: WeightedCloud) -> float:
        """Explicit delta, else the generation scale of the cloud."""
        if cfg.delta is not None:
            return cfg.delta
        return cloud.cell_size or FALLBACK_DELTA

    # Measures
    def favard(self, cfg: ExperimentConfig) -> List[FavardRow]:
        """Favard length per depth for IFS generators; a single row otherwise."""
        if cfg.input is None and cfg.generator in ("four-corner", "ifs-segment"):
            clouds = [self.cloud(cfg, depth=k) for k in cfg.depths]
        else:
            clouds = [self.cloud(cfg)]
        rows: List[FavardRow] = []
        for cloud in clouds:
            delta = self.delta_for(cfg, cloud)
            value = favard_length(cloud, cfg.angles, delta).value if cloud.count else 0.0
            rows.append(FavardRow(depth=cloud.depth, value=value, delta=delta, angles=cfg.angles, samples=cloud.count))
            logger.info("Favard length at depth %d: %.6g (delta %.3g)", cloud.depth, value, delta)
        if cfg.out is not None:
            storage.write_favard_table(rows, cfg.out)
        if cfg.svg is not None:
            plots.favard_decay(rows, cfg.svg)
        return rows

    def measure(self, cfg: ExperimentConfig) -> Dict[str, MeasureEstimate]:
        cloud = self.cloud(cfg)
        delta = self.delta_for(cfg, cloud)
        out: Dict[str, MeasureEstimate] = {}
        if cloud.n == 2:
            out["projected_length"] = projected_length(cloud, cfg.map.angle, delta)
            out["favard"] = favard_length(cloud, cfg.angles, delta)
        out["box_cover"] = box_cover_measure(cloud, 1, delta, offsets=cfg.offsets, seed=cfg.seed or 0)
        rows = favard_trace(cloud, cfg.angles, delta) if cloud.n == 2 else []
        if cfg.out is not None:
            storage.write_trace(rows, cfg.out)
        if cfg.svg is not None:
            plots.angle_trace(rows, cfg.svg)
        if cfg.summary is not None:
            storage.write_json(cfg.summary, {k: v.model_dump(mode="json") for k, v in out.items()})
        return out

    # Maps
    def constant_rank_map(self, cfg: ExperimentConfig) -> ConstantRankMap:
        data = {"angle": cfg.map.angle, "phi": cfg.map.phi, "psi_inv": cfg.map.psi_inv}
        if cfg.domain is not None:
            data["domain"] = {"lo": cfg.domain.lo, "hi": cfg.domain.hi}
        return map_from_descriptor(data)

    # Local variant
    def perturb(self, cfg: ExperimentConfig) -> Union[SearchReport, LocalVariantReport]:
        """Rotation search over the whole cloud, or the local variant on U(x, r_x / 2) when ``center`` is set.

        The local variant sizes its chart against the map's domain, else the first chart.
        """
        seed = cfg.require_seed()
        cloud = self.cloud(cfg)
        f = self.constant_rank_map(cfg)
        delta = self.delta_for(cfg, cloud)
        report: Union[SearchReport, LocalVariantReport]
        if cfg.center is not None:
            domain = f.domain if f.domain is not None else chart_regions(cfg)[0]
            _, report = perturb_locally(f, cfg.center, cloud, cfg.epsilon, cfg.rho, cfg.trials, delta, seed, domain=domain)
        else:
            _, report = search_rotation(f, cloud, cfg.epsilon, cfg.rho, cfg.trials, delta, seed, offsets=cfg.offsets)
        if cfg.out is not None:
            storage.write_json(cfg.out, report)
        return report

    def lemma(self, cfg: ExperimentConfig) -> List[LemmaReport]:
        """Key-lemma property suite over ``cases`` random (theta, O, mu, eta)."""
        seed = cfg.require_seed()
        rng = np.random.default_rng(seed)
        phi = diffeo_from_descriptor(cfg.map.phi, 2)
        reports: List[LemmaReport] = []
        for case in range(cfg.cases):
            center = np.asarray(LEMMA_CENTER) + rng.uniform(-0.1, 0.1, size=2)
            O = BallRegion(center, float(rng.uniform(0.05, 0.15)))
            mu = cfg.mu * float(rng.uniform(0.5, 1.0))
            eta = cfg.eta * float(rng.uniform(0.5, 1.0))
            theta = random_generator(rng, 2, cfg.rho)
            _, report = key_lemma_diffeo(phi, Rotation(theta), O, mu, eta, steps=cfg.flow_steps)
            logger.info("lemma case %d: t* = %.4g, margins %.3g / %.3g / %.3g", case, report.t_star, report.margin_inner, report.margin_outer, report.margin_c1)
            reports.append(report)
        if cfg.out is not None:
            storage.write_json(cfg.out, [r.model_dump(mode="json") for r in reports])
        return reports

    # Global construction
    def iterate(self, cfg: ExperimentConfig) -> Tuple[RunSummary, List[IterationState]]:
        seed = cfg.require_seed()
        cloud = self.cloud(cfg)
        f = self.constant_rank_map(cfg).with_domain(None)
        charts = chart_regions(cfg)
        domain = BoxRegion(np.asarray(cfg.domain.lo, dtype=float), np.asarray(cfg.domain.hi, dtype=float)) if cfg.domain else None
        if domain is not None:
            lo, hi = domain.bounds()
        else:
            lo = np.min([c.bounds()[0] for c in charts], axis=0)
            hi = np.max([c.bounds()[1] for c in charts], axis=0)
        h = cfg.grid_h or default_spacing(lo, hi)
        cover = build_cover(charts, h, domain)
        f, lip_scale = normalise_lipschitz(f, box_grid(lo, hi, 32))
        delta = self.delta_for(cfg, cloud)
        schedule = epsilon_schedule(cfg.epsilon, cfg.steps)

        def run(i: int) -> IterationState:
            return iterate_element(
                f,
                cloud,
                cover.elements[i],
                schedule,
                cfg.steps,
                delta,
                seed + 1000 * i,
                rho=cfg.rho,
                trials=cfg.trials,
                flow_steps=cfg.flow_steps,
                center=cover.center_of(i),
                sigma=cfg.sigma,
                offsets=cfg.offsets,
                index=i,
                parent=cover.parents[i],
            )

        states = parallel_map(run, list(range(len(cover))), threads=self.threads)
        glue = None
        fav_before = fav_after = None
        bound_ok = None
        after = cloud
        if cfg.steps > 0 and states:
            glued, glue = glue_global(states, cover)
            after = cloud.mapped(glued.evaluate, tag="glued")
            if cloud.n == 2:
                fav_before, fav_after, bound_ok = favard_bound_check(cloud, after, sampled_lipschitz(states), cfg.angles, delta)

        sigma = math.fsum(s.sigma for s in states)
        summary = RunSummary(
            generator=cloud.generator,
            depth=cloud.depth,
            delta=delta,
            epsilon=cfg.epsilon,
            schedule=schedule,
            steps=cfg.steps,
            seed=seed,
            lipschitz_scale=lip_scale,
            sigma=sigma,
            favard_before=fav_before,
            favard_after=fav_after,
            favard_bound_ok=bound_ok,
            elements=[s.summary() for s in states],
            glue=glue,
            meta={"grid_h": h, "charts": len(charts), "elements": len(cover), "map": f.descriptor()},
        )
        if cfg.ledger is not None:
            storage.write_ledger([(s.index, row) for s in states for row in s.ledger], cfg.ledger, element=True)
        if cfg.summary is not None:
            storage.write_json(cfg.summary, summary)
        if cfg.svg is not None:
            plots.cloud_scatter(cloud.points, after.points, cfg.svg, title=f"{cloud.generator}: before / after")
            plots.ledger_plot(combined_ledger(states, cfg.steps), plots.ledger_path(cfg.svg), sigma)
        return summary, states


def get_services(threads: Optional[int] = None) -> UnrectServices:
    return UnrectServices(threads=threads)


__all__ = [
    "UnrectServices",
    "get_services",
    "chart_regions",
]
