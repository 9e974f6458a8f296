import json
import os
from decimal import Decimal
from fractions import Fraction
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from toda_cft.core.errors import InputError
from toda_cft.core.lie_structure import (
    AlgebraData,
    Basis,
    CartanVector,
    CouplingParams,
    build_algebra,
    parse_algebra,
)
from toda_cft.core.sphere_geometry import BumpFactor, ConformalFactor, ConstantFactor, MobiusMap

TASKS = (
    "algebra-info",
    "seiberg",
    "correlate",
    "covariance-test",
    "weyl-test",
    "gmc-stats",
    "verify",
)
Task = Literal[
    "algebra-info",
    "seiberg",
    "correlate",
    "covariance-test",
    "weyl-test",
    "gmc-stats",
    "verify",
]
NEEDS_GAMMA = {"seiberg", "correlate", "covariance-test", "weyl-test", "gmc-stats"}
NEEDS_INSERTIONS = {"seiberg", "correlate", "covariance-test", "weyl-test"}
NEEDS_MU = {"correlate", "covariance-test", "weyl-test"}


def _exact(value: Decimal | int) -> Fraction:
    return Fraction(value)


def _finite(value: Decimal, name: str) -> Decimal:
    if isinstance(value, Decimal) and not value.is_finite():
        raise ValueError(f"{name} must be finite, got {value}")
    return value


# ---------------------------------------------------------------------------
# Nested job sections
# ---------------------------------------------------------------------------


class AlphaSpec(BaseModel):
    model_config = {"extra": "forbid"}

    basis: Literal["root", "weight"] = "root"
    coords: list[Decimal]

    @field_validator("coords")
    @classmethod
    def finite_coords(cls, v):
        return [_finite(c, "alpha coordinate") for c in v]


class InsertionSpec(BaseModel):
    model_config = {"extra": "forbid"}

    z: list[Decimal] = Field(min_length=2, max_length=2)
    alpha: AlphaSpec

    @field_validator("z")
    @classmethod
    def finite_point(cls, v):
        return [_finite(c, "insertion point") for c in v]

    @property
    def point(self) -> complex:
        return complex(float(self.z[0]), float(self.z[1]))


class PhiSpec(BaseModel):
    model_config = {"extra": "forbid"}

    family: Literal["constant", "bump"]
    amplitude: Decimal

    @field_validator("amplitude")
    @classmethod
    def finite_amplitude(cls, v):
        return _finite(v, "phi amplitude")

    def factor(self) -> ConformalFactor:
        if self.family == "constant":
            return ConstantFactor(float(self.amplitude))
        return BumpFactor(float(self.amplitude))


# ---------------------------------------------------------------------------
# Job
# ---------------------------------------------------------------------------


class JobConfig(BaseModel):
    """A validated job; every range is checked before any computation starts."""

    model_config = {"extra": "forbid"}

    task: Task
    algebra: str = "A1"
    gamma: Optional[Decimal] = None
    mu: list[Decimal] = Field(default_factory=list)
    insertions: list[InsertionSpec] = Field(default_factory=list)
    grid_n: int = Field(default=1024, ge=256, le=8192)
    epsilon: Optional[Decimal] = Field(default=None, gt=0)
    replicas: int = Field(default=1000, ge=2)
    seed: int = Field(default=0, ge=0, le=2**64 - 1)
    workers: Optional[int] = Field(default=None, ge=1)
    out: Optional[str] = None
    traces: Optional[str] = None
    psi: Optional[str] = None
    phi: Optional[PhiSpec] = None
    clearance: Decimal = Field(default=Decimal("0.02"), gt=0, le=1)
    probe_scale: Optional[Decimal] = Field(default=None, gt=0)

    @field_validator("algebra")
    @classmethod
    def known_algebra(cls, v):
        return parse_algebra(v).label

    @field_validator("psi")
    @classmethod
    def parseable_psi(cls, v):
        if v is not None:
            MobiusMap.parse(v)
        return v

    @field_validator("gamma", "epsilon", "probe_scale", "clearance")
    @classmethod
    def finite_scalars(cls, v):
        return None if v is None else _finite(v, "value")

    @model_validator(mode="after")
    def task_requirements(self):
        task = self.task
        if task in NEEDS_GAMMA and self.gamma is None:
            raise ValueError(f"task '{task}' needs gamma")
        if task in NEEDS_INSERTIONS and not self.insertions:
            raise ValueError(f"task '{task}' needs at least one insertion")
        if task in NEEDS_MU and not self.mu:
            raise ValueError(f"task '{task}' needs mu")
        if task == "covariance-test" and self.psi is None:
            raise ValueError("task 'covariance-test' needs psi")
        if task == "weyl-test" and self.phi is None:
            raise ValueError("task 'weyl-test' needs phi")
        data = self.algebra_data()
        if self.gamma is not None:
            self.coupling()
        if self.mu and len(self.mu) != data.rank:
            raise ValueError(f"mu needs {data.rank} entries for {data.label}, got {len(self.mu)}")
        for k, insertion in enumerate(self.insertions, start=1):
            if len(insertion.alpha.coords) != data.rank:
                raise ValueError(
                    f"insertion {k} needs {data.rank} coordinates for {data.label}, "
                    f"got {len(insertion.alpha.coords)}"
                )
        return self

    # -----------------------------------------------------------------------
    # Resolution into domain objects
    # -----------------------------------------------------------------------

    def algebra_data(self) -> AlgebraData:
        return build_algebra(self.algebra)

    def coupling(self) -> CouplingParams:
        if self.gamma is None:
            raise InputError("gamma is not set")
        return CouplingParams(gamma=_exact(self.gamma), mu=tuple(_exact(m) for m in self.mu))

    def insertion_list(self, data: AlgebraData) -> list[tuple[complex, CartanVector]]:
        return [
            (
                insertion.point,
                data.vector([_exact(c) for c in insertion.alpha.coords], Basis(insertion.alpha.basis)),
            )
            for insertion in self.insertions
        ]

    def mobius(self) -> MobiusMap:
        return MobiusMap.parse(self.psi) if self.psi is not None else MobiusMap.identity()

    def epsilon_value(self) -> float | None:
        return None if self.epsilon is None else float(self.epsilon)

    def with_overrides(self, **overrides) -> "JobConfig":
        updates = {k: v for k, v in overrides.items() if v is not None}
        if not updates:
            return self
        return JobConfig.model_validate({**self.model_dump(), **updates})


def load_job(filename) -> JobConfig:
    if not os.path.isfile(filename):
        raise FileNotFoundError(f"File not found: {filename}")
    with open(filename, encoding="utf-8") as handle:
        text = handle.read()
    return parse_job(text, source=str(filename))


def parse_job(text: str, source: str = "<job>") -> JobConfig:
    try:
        raw = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise InputError(
            f"Malformed job JSON in {source}: {exc.msg} at line {exc.lineno} column {exc.colno}"
        ) from exc
    if not isinstance(raw, dict):
        raise InputError(f"Job file {source} must contain a JSON object")
    return JobConfig.model_validate(raw)
