"""YAML run configuration: parsing, validation and model construction."""

from __future__ import annotations

import math
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .functions import KIND_CODES, BoundedFunction
from .models import (
    JumpSdeModel,
    LevySpec,
    LyapunovV,
    OuModel,
    WeakDriftDiffusionModel,
    diffusion_recurrence,
    jump_recurrence,
    kappa_for_order,
)
from .rates import PhiSpec

SEED_ENV = "REGENSIM_SEED"


class Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OuBlock(Block):
    kind: Literal["ou"]
    theta: float = Field(1.0, gt=0)
    sigma: float = Field(math.sqrt(2.0), gt=0)


class WeakDriftBlock(Block):
    kind: Literal["weakdrift"]
    r: float = Field(gt=0)
    l: float = Field(ge=0, lt=2)
    smoothing: float = Field(1.0, ge=0)
    dim: int = Field(1, ge=1, le=3)
    M: float = Field(10.0, gt=0)
    p_order: Optional[float] = Field(None, gt=1)
    kappa: Optional[float] = Field(None, gt=0)


class JumpSdeBlock(Block):
    kind: Literal["jumpsde"]
    r: float = Field(gt=0)
    l: float = Field(gt=0, lt=1)
    gamma: float = Field(gt=0)
    smoothing: float = Field(1.0, ge=0)
    contraction: float = Field(0.0, ge=0, le=2)
    M: float = Field(10.0, gt=0)
    levy_moment_order: float = Field(2.0, ge=1)


ModelBlock = Annotated[Union[OuBlock, WeakDriftBlock, JumpSdeBlock], Field(discriminator="kind")]


class EulerBlock(Block):
    step: float = Field(1e-3, gt=0)


class PhiBlock(Block):
    c: float = Field(gt=0)
    exponent: float = Field(ge=0, lt=1)


class LevyBlock(Block):
    kind: Literal["gaussian", "power"] = "gaussian"
    intensity: float = Field(1.0, gt=0)
    scale: float = Field(1.0, gt=0)
    tail_index: float = Field(1.5, gt=0)
    delta_min: float = Field(1e-3, gt=0)
    u_max: float = Field(10.0, gt=0)


class SplitBlock(Block):
    c_radius: float = Field(1.0, gt=0)
    window: float = Field(8.0, gt=0)
    grid: int = Field(4096, ge=16)
    c_grid: int = Field(65, ge=2)
    alpha_cap: float = Field(0.99, gt=0, lt=1)


class LyapunovBlock(Block):
    m_power: float = Field(2.0, ge=1)
    floor_radius: float = Field(0.0, ge=0)


class HittingBlock(Block):
    x_grid: list[float] = [3.0, 4.0, 6.0]
    delta: float = Field(0.5, gt=0)
    replicas: int = Field(10000, ge=2)
    max_time: float = Field(1000.0, gt=0)


class GeneratorCheckBlock(Block):
    x_grid: list[float] = [0.5, 2.0, 5.0]
    h: float = Field(1e-3, gt=0)
    samples: int = Field(1_000_000, ge=100)


class DriftCheckBlock(Block):
    region: tuple[float, float] = (1.0, 100.0)
    n_grid: int = Field(200, ge=2)
    b_region: Optional[tuple[float, float]] = None
    expected_margin: Optional[Literal["abs_minus_one"]] = None
    hitting: Optional[HittingBlock] = None
    generator_check: Optional[GeneratorCheckBlock] = None


class SimulateBlock(Block):
    x0: float = 0.0
    horizon: float = Field(10.0, ge=0)
    every: int = Field(1, ge=1)


class EnvelopeBlock(Block):
    x_grid: list[float] = [0.0, 2.0, 4.0, 6.0, 8.0]
    replicas: int = Field(2000, ge=2)
    r2_min: float = 0.9


class RegenStatsBlock(Block):
    x0: float = 0.0
    horizon: float = Field(1000.0, gt=0)
    functions: list[str] = ["indicator_le:0"]
    reference: Optional[list[Optional[float]]] = None
    tolerance: Optional[list[float]] = None
    moment_p: float = Field(2.0, ge=1)
    envelope: Optional[EnvelopeBlock] = None


class DeviationBlock(Block):
    x0: float = 0.0
    function: Optional[str] = "indicator_le:0"
    epsilon: float = Field(0.1, gt=0)
    epsilon_n: Optional[float] = Field(None, gt=0, lt=1)
    t_grid: list[float] = [16, 32, 64, 128, 256, 512, 1024]
    counting: bool = True
    slope_max: float = -0.6
    nt_slope_max: Optional[float] = None
    calibration_replicas: int = Field(200, ge=2)


class FukNagaevBlock(Block):
    n: int = Field(1000, ge=1)
    p: float = Field(2.0, ge=2)
    lambda_grid: list[float] = [10, 20, 40, 80, 160, 320, 640]
    law: Literal["student_t", "uniform"] = "student_t"
    dof: float = Field(5.0, gt=2)
    half_width: float = Field(1.0, gt=0)
    weights: tuple[float, float, float] = (1.0, 0.5, 0.25)


class ExperimentBlock(Block):
    drift_check: DriftCheckBlock = DriftCheckBlock()
    simulate: SimulateBlock = SimulateBlock()
    regen_stats: RegenStatsBlock = RegenStatsBlock()
    deviation: DeviationBlock = DeviationBlock()
    fuknagaev: FukNagaevBlock = FukNagaevBlock()


class OutputBlock(Block):
    dir: str = "out"
    format: Literal["csv", "json"] = "csv"


class RunConfig(Block):
    model: ModelBlock = OuBlock(kind="ou")
    euler: EulerBlock = EulerBlock()
    phi: Optional[PhiBlock] = None
    levy: LevyBlock = LevyBlock()
    split: SplitBlock = SplitBlock()
    lyapunov: LyapunovBlock = LyapunovBlock()
    experiment: ExperimentBlock = ExperimentBlock()
    seed: int = Field(0, ge=0, lt=2**64)
    replicas: int = Field(100, ge=1)
    output: OutputBlock = OutputBlock()

    @model_validator(mode="after")
    def _check_functions(self):
        for text in self.experiment.regen_stats.functions + [self.experiment.deviation.function or "one"]:
            name = text.partition(":")[0].strip()
            if name not in KIND_CODES:
                raise ValueError(f"unknown function kind {name!r}")
        return self


_MODEL_TAGS = {"ou", "weakdrift", "jumpsde"}


def _dotted(loc) -> str:
    parts = [str(p) for p in loc]
    # discriminated unions insert the tag into the location
    if len(parts) > 1 and parts[0] == "model" and parts[1] in _MODEL_TAGS:
        parts = [parts[0]] + parts[2:]
    return ".".join(parts)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML document; unknown keys are errors."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        where = f" (line {line})" if line else ""
        raise ConfigError(f"config parse error{where}: {getattr(exc, 'problem', exc)}", line=line) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = _dotted(err["loc"])
        raise ConfigError(f"invalid config key {key!r}: {err['msg']}", key=key) from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def build_model(cfg: RunConfig):
    m = cfg.model
    if isinstance(m, OuBlock):
        return OuModel(m.theta, m.sigma)
    if isinstance(m, WeakDriftBlock):
        return WeakDriftDiffusionModel(m.r, m.l, m.smoothing, m.dim)
    lv = cfg.levy
    levy = LevySpec(lv.kind, lv.intensity, lv.scale, lv.tail_index, lv.delta_min, lv.u_max)
    return JumpSdeModel.standard(m.r, m.l, m.gamma, levy, m.smoothing, m.contraction)


def recurrence_params(cfg: RunConfig, model=None):
    """Derived drift constants for weak-drift and jump models, else ``None``."""
    m = cfg.model
    model = model or build_model(cfg)
    if isinstance(m, WeakDriftBlock):
        if m.kappa is not None:
            kappa = m.kappa
        elif m.p_order is not None:
            kappa = kappa_for_order(m.p_order, m.l)
        else:
            return None
        return diffusion_recurrence(model, m.M, kappa)
    if isinstance(m, JumpSdeBlock):
        return jump_recurrence(model, m.M, m.levy_moment_order)
    return None


def build_phi(cfg: RunConfig, model=None) -> PhiSpec:
    """``phi`` block when present, otherwise the drift function derived for the model."""
    if cfg.phi is not None:
        return PhiSpec(cfg.phi.c, cfg.phi.exponent)
    params = recurrence_params(cfg, model)
    if params is None:
        raise ConfigError("no phi block and no derivable drift function for this model", key="phi")
    return params.phi


def build_lyapunov(cfg: RunConfig, params=None) -> LyapunovV:
    return LyapunovV(cfg.lyapunov.m_power, cfg.lyapunov.floor_radius)


def parse_functions(texts) -> list[BoundedFunction]:
    return [BoundedFunction.parse(t) for t in texts]
