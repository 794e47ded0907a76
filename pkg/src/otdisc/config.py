"""Run configuration schema for the command-line drivers."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ChartConfig(_Strict):
    kind: str = "euclidean-box"
    lower: list[float] = [0.0]
    upper: list[float] = [1.0]
    exponent: float = 2.0
    theta_range: Optional[list[float]] = None
    z_range: Optional[list[float]] = None
    pole: str = "north"

    def build(self):
        from .geometry import chart_from_dict

        return chart_from_dict(self.model_dump(exclude_none=True))


class DistributionConfig(_Strict):
    preset: Optional[str] = None
    kind: Optional[str] = None
    weights: Optional[list[float]] = None
    means: Optional[list[list[float]]] = None
    stds: Optional[list[list[float]]] = None
    lower: Optional[list[float]] = None
    upper: Optional[list[float]] = None
    point: Optional[list[float]] = None

    def build(self):
        from .distributions import DistributionSpec

        cfg = self.model_dump(exclude_none=True)
        if "preset" not in cfg and "kind" not in cfg:
            raise ConfigError("distribution needs either 'preset' or 'kind'")
        return DistributionSpec.from_dict(cfg)


class SgdSection(_Strict):
    m: int = Field(5, ge=1)
    zeta: float = Field(0.01, gt=0)
    batch_size: int = Field(100, ge=1)
    eps: float = Field(1e-4, gt=0)
    momentum: float = Field(0.2, ge=0, lt=1)
    lr_decay: float = Field(0.2, ge=0)
    lr0: float = Field(0.5, gt=0)
    position_lr_ratio: float = Field(3.0, gt=0)
    max_steps: int = Field(6000, ge=1)
    sinkhorn_tol: float = Field(1e-9, gt=0)
    sinkhorn_max_iter: int = Field(10_000, ge=1)


class RefineSection(_Strict):
    m_star: int = Field(10, ge=1)
    n_samples: int = Field(10_000, ge=1)
    zeta0: float = Field(0.01, gt=0)


class EvaluateSection(_Strict):
    zeta: float = Field(0.01, gt=0)
    N: int = Field(400, ge=1)
    r: int = Field(2, ge=2)
    ladder: list[int] = [200, 400, 800, 1600]
    measure: Optional[str] = None
    sizes: list[int] = [40, 100]
    trials: int = Field(200, ge=1)
    min_trials: int = Field(30, ge=1)
    size: Optional[int] = None
    reference_size: int = Field(2000, ge=1)


class PlanSection(_Strict):
    mu: DistributionConfig
    nu: DistributionConfig
    m: int = Field(10, ge=1)
    n: int = Field(10, ge=1)
    zeta: float = Field(0.01, gt=0)
    lam: Optional[float] = Field(None, gt=0)
    rho: float = Field(1.0, ge=0)
    reference_size: int = Field(2000, ge=1)
    max_reference_atoms: int = Field(20_000, ge=1)
    t_list: list[float] = []

    @field_validator("t_list")
    @classmethod
    def _unit_interval(cls, v):
        if any(not 0.0 <= t <= 1.0 for t in v):
            raise ValueError("t values must lie in [0, 1]")
        return v


class RunConfig(_Strict):
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    out: Optional[str] = None
    chart: ChartConfig = ChartConfig()
    distribution: Optional[DistributionConfig] = None
    sgd: SgdSection = SgdSection()
    refine: RefineSection = RefineSection()
    evaluate: EvaluateSection = EvaluateSection()
    plan: Optional[PlanSection] = None


def load_config(path) -> RunConfig:
    """Parse and validate a JSON run config; every failure becomes :class:`ConfigError`."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from exc
