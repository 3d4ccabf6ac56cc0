"""Experiment configuration documents.

One JSON document per run.  Unknown keys are rejected at every level and
every field is range-checked before any computation starts.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import UsageError
from .excess import MAX_C
from .noise import NoiseModel
from .optimizers import NelderMeadConfig, SPSAConfig

__all__ = [
    "NoiseBlock",
    "NelderMeadBlock",
    "SPSABlock",
    "ExcessBlock",
    "ReinsuranceBlock",
    "LeeCarterBlock",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "config_hash",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseBlock(_Strict):
    p1: float = Field(default=NoiseModel().p1, ge=0, le=1)
    p2: float = Field(default=NoiseModel().p2, ge=0, le=1)
    r01: float = Field(default=0.02, ge=0, lt=0.5)
    r10: float = Field(default=0.02, ge=0, lt=0.5)

    def model(self) -> NoiseModel:
        return NoiseModel(self.p1, self.p2, self.r01, self.r10)


class NelderMeadBlock(_Strict):
    name: Literal["nelder_mead"] = "nelder_mead"
    iterations: int = Field(default=2000, ge=0)
    simplex_scale: float = Field(default=0.1, gt=0)
    adaptive: bool = True

    def build(self) -> NelderMeadConfig:
        return NelderMeadConfig(iterations=self.iterations, simplex_scale=self.simplex_scale, adaptive=self.adaptive)


class SPSABlock(_Strict):
    name: Literal["spsa"] = "spsa"
    iterations: int = Field(default=200, ge=0)
    a: float = Field(default=0.2, gt=0)
    c: float = Field(default=0.1, gt=0)
    A: float = Field(default=10.0, ge=0)
    alpha: float = Field(default=0.602, gt=0)
    gamma: float = Field(default=0.101, gt=0)

    def build(self, seed) -> SPSAConfig:
        return SPSAConfig(self.iterations, self.a, self.c, self.A, self.alpha, self.gamma, seed)


Optimizer = Annotated[Union[NelderMeadBlock, SPSABlock], Field(discriminator="name")]


class ExcessBlock(_Strict):
    mu: float = 0.0
    sigma: float = Field(default=1.0, gt=0)
    x_max: float = Field(default=10.0, gt=1)
    threshold: float = Field(default=1.0, ge=0)
    slope: float = Field(default=0.6, ge=0, le=1)
    c: float = Field(default=0.02, gt=0, le=MAX_C)
    # "per_step": c radians per integer grid step; "per_value_unit": c radians per
    # unit of loss value, so the step angle shrinks with the grid spacing
    c_scaling: Literal["per_step", "per_value_unit"] = "per_step"
    n_values: list[int] = Field(default_factory=lambda: list(range(4, 13)), min_length=1)
    calibration_shots: int = Field(default=100_000, ge=1)

    @field_validator("n_values")
    @classmethod
    def _n_range(cls, v):
        bad = [n for n in v if not 2 <= n <= 14]
        if bad:
            raise ValueError(f"n values must lie in [2, 14], got {bad}")
        if len(set(v)) != len(v):
            raise ValueError("n values must be distinct")
        return v


class ReinsuranceBlock(_Strict):
    n: int = Field(default=6, ge=2, le=20)
    p: float | None = Field(default=0.5, gt=0, lt=1)
    k: int | None = None
    layers: int = Field(default=3, ge=0)
    restarts: int = Field(default=10, ge=1)
    optimizer: Optimizer | None = None
    calibration_shots: int = Field(default=100_000, ge=1)
    compare_mitigation: bool = True

    @model_validator(mode="after")
    def _weight(self):
        k = self.target_weight
        if not 1 <= k <= self.n - 1:
            raise ValueError(f"k must lie in [1, {self.n - 1}], got {k}")
        return self

    @property
    def target_weight(self) -> int:
        return self.k if self.k is not None else round(self.p * self.n)


class LeeCarterBlock(_Strict):
    data: str | None = None
    layers: int = Field(default=3, ge=1)
    optimizer: Optimizer = Field(default_factory=lambda: NelderMeadBlock(iterations=200, simplex_scale=1.0))


class ExperimentConfig(_Strict):
    experiment: Literal["excess", "reinsurance", "leecarter"]
    seed: int = Field(default=0, ge=0)
    mode: Literal["exact", "shots"] = "exact"
    shots: int = Field(default=10_000, ge=1)
    noise: NoiseBlock | None = None
    mitigation: bool = False
    postselect: bool = True
    excess: ExcessBlock | None = None
    reinsurance: ReinsuranceBlock | None = None
    leecarter: LeeCarterBlock | None = None

    @model_validator(mode="after")
    def _blocks(self):
        for name in ("excess", "reinsurance", "leecarter"):
            if name != self.experiment and getattr(self, name) is not None:
                raise ValueError(f"block {name!r} given for experiment {self.experiment!r}")
        if getattr(self, self.experiment) is None:
            defaults = {"excess": ExcessBlock, "reinsurance": ReinsuranceBlock, "leecarter": LeeCarterBlock}
            object.__setattr__(self, self.experiment, defaults[self.experiment]())
        if self.mode == "exact" and (self.noise is not None or self.mitigation):
            raise ValueError("noise and mitigation require mode 'shots'")
        return self

    @property
    def block(self):
        return getattr(self, self.experiment)


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data: dict, seed: int | None = None) -> ExperimentConfig:
    """Validate a config mapping; ``seed`` overrides the document's seed."""
    if seed is not None:
        data = {**data, "seed": seed}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise UsageError(f"invalid config: {_describe(exc)}") from None


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be an object")
    return parse_config(data, seed)


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON of the fully-defaulted config."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
