from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator


class MeasureEstimate(BaseModel):
    """Scale-delta content of a set (unnormalised: no alpha_m / 2^m factor)."""

    value: float = Field(ge=0.0)
    delta: float = Field(gt=0.0)
    method: Literal["grid_cover", "interval_union", "favard_quadrature"]
    samples: int = Field(ge=0)
    cells: Optional[float] = None


class PushforwardEstimate(BaseModel):
    image: MeasureEstimate
    projection: MeasureEstimate
    raw: MeasureEstimate
    discrepancy: float


class CloudMeta(BaseModel):
    generator: str
    depth: int
    total_mass: float
    cell_size: Optional[float] = None


class MeasureRow(BaseModel):
    angle: float
    value: float
    delta: float
    method: str


class FavardRow(BaseModel):
    depth: int
    value: float
    delta: float
    angles: int
    samples: int


class TrialRecord(BaseModel):
    generator: List[List[float]]
    norm: float
    identity_distance: float = Field(0.0, description="||exp(X) - I||_op")
    distance: float
    feasible: bool
    measure: Optional[float] = None


class SearchReport(BaseModel):
    generator: List[List[float]]
    norm: float
    identity_distance: float = 0.0
    measure: float
    identity_measure: Optional[float] = None
    ratio: Optional[float] = None
    distance: float
    epsilon: float
    rho: float
    delta: float
    feasible: int
    trials: List[TrialRecord] = []


class LocalVariantReport(BaseModel):
    center: List[float]
    chart_radius: float
    radius: float
    points: int
    c1_distance: float
    search: SearchReport


class LemmaReport(BaseModel):
    t_star: float
    requested_generator: List[List[float]]
    realised_generator: List[List[float]]
    mu: float
    eta: float
    lipschitz: float
    error_inner: float = Field(description="max |zeta - Xi_{theta_t*}| on B_{mu/4}(O)")
    escape_inner: float = Field(description="max distance of zeta(B_{mu/4}(O)) from O, to compare with mu/2")
    error_outer: float = Field(description="max |zeta - id| outside B_{3mu/4}(O); zero by construction")
    c1_norm: float
    margin_inner: float
    margin_outer: float
    margin_c1: float
    verification_points: int
    bisection_steps: int


class CauchyReport(BaseModel):
    differences: List[List[float]] = Field(description="rows [m, n, sampled C1 distance, scheduled bound]")
    tail_bound: float
    limit_error: float
    ok: bool
    offending_step: Optional[int] = None


class GlueReport(BaseModel):
    elements: int
    min_gap: Optional[float] = None
    order_error: float
    inside_error: float
    residual_error: float
    ok: bool


class LedgerRow(BaseModel):
    step: int
    mu: Optional[float] = None
    collar_mass: float
    image_measure: float
    step_distance: float
    cum_distance: float

    @field_validator("mu", mode="before")
    @classmethod
    def _nan_to_none(cls, v: Any) -> Any:
        if isinstance(v, float) and v != v:
            return None
        return v


class StepDetail(BaseModel):
    step: int
    mu: Optional[float] = None
    collar_target: float
    measure_target: float
    distance_budget: float
    controlled_measure: float
    remainder_mass: float
    t_star: Optional[float] = None
    search_measure: Optional[float] = None
    rotation_norm: Optional[float] = None
    terminated: bool = False


class ElementSummary(BaseModel):
    index: int
    parent_chart: int
    cells: int
    sigma: float
    mass: float
    ledger: List[LedgerRow]
    details: List[StepDetail]
    stabilised_fraction: float
    active_mass: float
    cauchy: Optional[CauchyReport] = None


class RunSummary(BaseModel):
    generator: str
    depth: int
    delta: float
    epsilon: float
    schedule: List[float]
    steps: int
    seed: int
    lipschitz_scale: float
    sigma: float = Field(description="cloud mass inside the elements, the budget the collar masses are held to")
    favard_before: Optional[float] = None
    favard_after: Optional[float] = None
    favard_bound_ok: Optional[bool] = None
    elements: List[ElementSummary]
    glue: Optional[GlueReport] = None
    meta: Dict[str, Any] = {}


class CompositionReport(BaseModel):
    distance: float = Field(description="sampled ||f.zeta.g - f.g||_C1")
    zeta_norm: float = Field(description="sampled ||zeta - id||_C1")
    g_lipschitz: float
    bound: float
    ok: bool
