"""Settings from the environment and the typed experiment record.

Precedence for experiment parameters: model defaults, then the JSON file
given with ``--config``, then flags passed explicitly on the command line.
"""

from __future__ import annotations

import json
import logging
import math
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

from unrect.errors import GuardError

load_dotenv()

logger = logging.getLogger(__name__)

INTERVAL_ANGLE = math.atan2(2.0, 1.0)  # four-corner set projects onto an interval here


class Settings(BaseModel):
    threads: int = 1
    log_level: str = "WARNING"

    @classmethod
    def from_env(cls) -> "Settings":
        raw = os.getenv("UNRECT_THREADS")
        default_threads = min(8, os.cpu_count() or 1)
        threads = default_threads
        if raw is not None and raw.strip():
            try:
                threads = int(raw)
            except ValueError:
                threads = 0
            if threads < 1:
                logger.warning("UNRECT_THREADS=%r is not a positive integer; running single-threaded", raw)
                threads = 1
        return cls(threads=threads, log_level=os.getenv("UNRECT_LOG_LEVEL", "WARNING"))


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings.from_env()


class ChartConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shape: Literal["ball", "box"] = "ball"
    center: Optional[List[float]] = None
    radius: Optional[float] = Field(None, gt=0)
    lo: Optional[List[float]] = None
    hi: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_shape(self) -> "ChartConfig":
        if self.shape == "ball" and (self.center is None or self.radius is None):
            raise ValueError("ball chart needs center and radius")
        if self.shape == "box" and (self.lo is None or self.hi is None):
            raise ValueError("box chart needs lo and hi")
        return self


class BoxConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lo: List[float]
    hi: List[float]


class MapConfig(BaseModel):
    """The constant-rank map f = psi_inv . P_V . phi, V the line at ``angle``."""

    model_config = ConfigDict(extra="forbid")

    angle: float = INTERVAL_ANGLE
    phi: Optional[Dict[str, Any]] = None
    psi_inv: Optional[Dict[str, Any]] = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    generator: Literal["four-corner", "segment", "graph", "ifs-segment"] = "four-corner"
    depth: int = Field(4, ge=0, le=23)
    samples: int = Field(1000, ge=2, le=10_000_000)
    a: Tuple[float, float] = (0.0, 0.0)
    b: Tuple[float, float] = (1.0, 0.0)
    coefficients: List[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0])
    x_range: Tuple[float, float] = (0.0, 1.0)
    input: Optional[Path] = None

    delta: Optional[float] = Field(None, ge=1e-9)
    offsets: int = Field(4, ge=1, le=64)
    angles: int = Field(360, ge=8, le=100_000)
    depths: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5, 6])

    map: MapConfig = Field(default_factory=MapConfig)
    epsilon: float = Field(0.1, gt=0)
    rho: float = Field(0.3, gt=0, le=math.pi)
    trials: int = Field(64, ge=1, le=100_000)
    center: Optional[List[float]] = None

    steps: int = Field(3, ge=0, le=64)
    sigma: Optional[float] = Field(None, gt=0)
    grid_h: Optional[float] = Field(None, gt=0)
    charts: List[ChartConfig] = Field(
        default_factory=lambda: [ChartConfig(shape="ball", center=[0.5, 0.5], radius=1.0)]
    )
    domain: Optional[BoxConfig] = None

    mu: float = Field(0.2, gt=0)
    eta: float = Field(0.1, gt=0)
    flow_steps: int = Field(64, ge=16, le=4096)
    cases: int = Field(20, ge=1, le=1000)

    seed: Optional[int] = Field(None, ge=0)
    out: Optional[Path] = None
    ledger: Optional[Path] = None
    summary: Optional[Path] = None
    svg: Optional[Path] = None

    def require_seed(self) -> int:
        if self.seed is None:
            raise GuardError("this command is randomised; pass --seed or set 'seed' in the config file")
        return self.seed


def load_experiment(config_path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Build an ExperimentConfig from an optional JSON file and explicit flags.

    ``overrides`` holds CLI flags; entries that are None were not passed and
    are dropped.
    """
    data: Dict[str, Any] = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise GuardError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise GuardError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise GuardError("config file must hold a JSON object")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return ExperimentConfig.model_validate(data)
