"""
Pydantic models for the experiment configuration document (JSON).
"""
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from .activation import parse_activation
from .control import TrainConfig
from .errors import ConfigError, InvalidArgumentError


class FieldSource(BaseModel):
    """A field read from a CSV file or set to a constant."""
    model_config = ConfigDict(extra="forbid")

    path: Optional[str] = None
    constant: Optional[float] = None

    @model_validator(mode="after")
    def exactly_one(self):
        if (self.path is None) == (self.constant is None):
            raise ValueError("give exactly one of 'path' or 'constant'")
        return self


class RankOneSource(BaseModel):
    """b(y, z) = psi(y) phi(z), a = a0 psi."""
    model_config = ConfigDict(extra="forbid")

    phi: FieldSource
    psi: FieldSource
    a0: float


class KernelSource(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: Optional[str] = None
    constant: Optional[float] = None
    rank_one: Optional[RankOneSource] = None

    @model_validator(mode="after")
    def exactly_one(self):
        given = sum(v is not None for v in (self.path, self.constant, self.rank_one))
        if given != 1:
            raise ValueError("give exactly one of 'path', 'constant' or 'rank_one'")
        return self


class GridConfig(BaseModel):
    n: int = Field(..., ge=2)
    y_lo: float = 0.0
    y_hi: float = 1.0

    @model_validator(mode="after")
    def non_degenerate(self):
        if not self.y_hi > self.y_lo:
            raise ValueError(f"empty domain [{self.y_lo}, {self.y_hi}]")
        return self


class TimeConfig(BaseModel):
    T: float = Field(..., gt=0)
    steps: int = Field(..., ge=1)


class ControlsConfig(BaseModel):
    a: Optional[FieldSource] = None
    b: KernelSource

    @model_validator(mode="after")
    def bias_source(self):
        if self.b.rank_one is not None and self.a is not None:
            raise ValueError("a rank_one kernel fixes the bias to a0*psi; drop 'a'")
        if self.b.rank_one is None and self.a is None:
            raise ValueError("controls need a bias source 'a'")
        return self


class ClassifierConfig(BaseModel):
    W: KernelSource
    mu: FieldSource

    @field_validator("W")
    @classmethod
    def plain_kernel(cls, v: KernelSource):
        if v.rank_one is not None:
            raise ValueError("classifier kernel cannot be given as rank_one")
        return v


class LossConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    kind: Literal["tracking", "classification"] = "tracking"
    target: Optional[FieldSource] = None
    label: Optional[FieldSource] = None
    lam: float = Field(0.0, ge=0, alias="lambda")
    classifier: Optional[ClassifierConfig] = None

    @model_validator(mode="after")
    def sources_for_kind(self):
        if self.kind == "tracking" and self.target is None:
            raise ValueError("tracking loss needs 'target'")
        if self.kind == "classification" and (self.label is None or self.classifier is None):
            raise ValueError("classification loss needs 'label' and 'classifier'")
        return self


class ExperimentConfig(BaseModel):
    grid: GridConfig
    time: TimeConfig
    activation: str = "tanh"
    initial_field: FieldSource
    controls: ControlsConfig
    loss: Optional[LossConfig] = None
    train: Optional[TrainConfig] = None
    integrator: Literal["euler", "rk4"] = "euler"
    rank_cutoff: Optional[int] = Field(None, ge=0)
    fd_step: float = Field(1e-5, gt=0)
    output: str = "out"

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @field_validator("activation")
    @classmethod
    def known_activation(cls, v: str):
        try:
            parse_activation(v)
        except InvalidArgumentError as e:
            raise ValueError(e.detail)
        return v

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def resolve(self, path: str) -> Path:
        """Relative paths are taken from the directory of the config file."""
        p = Path(path)
        return p if p.is_absolute() else self._base_dir / p

    def echo(self) -> dict:
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)


def parse_config(document: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")
    if base_dir is not None:
        cfg._base_dir = Path(base_dir)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        document = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}")
    return parse_config(document, base_dir=p.resolve().parent)
