"""
Run configuration schemas

A RunConfig fully describes an experiment; it is written next to every
output so any command can be replayed from it.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import logging
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.algorithms.schedule import dds_default_steps
from src.models.domain import PosteriorMode, SamplerType
from src.models.errors import ConfigError

logger = logging.getLogger(__name__)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScheduleSpec(_Strict):
    """Cosine schedule parameters"""
    type: Literal["cosine"] = "cosine"
    T: int = Field(default=1000, ge=2)
    s: float = Field(default=0.008, gt=0)
    clip: float = Field(default=0.999, gt=0, lt=1)


class SamplerSpec(_Strict):
    """Reverse-process sampler"""
    type: SamplerType = SamplerType.DDIM
    S: int = Field(default=50, ge=1)
    M: int = Field(default=8, ge=1)
    tau_out: float = Field(default=0.1, gt=0)
    posterior: PosteriorMode = PosteriorMode.CENTERED


class NetworkSpec(_Strict):
    """Widths of the two toy networks"""
    prior_width: int = Field(default=16, ge=1)
    prior_depth: int = Field(default=4, ge=2)
    denoiser_widths: Tuple[int, int, int] = (16, 32, 64)
    time_dim: int = Field(default=32, ge=2)
    dds_window: int = Field(default=0, ge=0)


class TrainConfig(_Strict):
    """Both training stages and the ablation switches"""
    lr: float = Field(default=1e-3, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    batch_size: int = Field(default=2, ge=1)
    dds_weight: float = Field(default=0.1, ge=0)       # lambda
    dds_tau: float = Field(default=1.0, gt=0)
    dds_steps: Optional[List[int]] = None              # None -> nearest T/4, T/2, 3T/4
    prior_steps: int = Field(default=500, ge=0)
    pgrd_steps: int = Field(default=2000, ge=0)
    plateau_window: int = Field(default=200, ge=1)
    plateau_tol: float = Field(default=0.01, ge=0)
    smoothing: int = Field(default=50, ge=1)
    prefetch: int = Field(default=0, ge=0)
    no_pgr: bool = False
    no_dds: bool = False

    @model_validator(mode="after")
    def _dds_weight_positive(self):
        if not self.no_dds and self.dds_weight <= 0:
            raise ValueError("dds_weight (lambda) must be > 0 when DDS is enabled")
        return self

    def resolved_dds_steps(self, T: int) -> List[int]:
        if self.no_dds:
            return []
        steps = sorted(self.dds_steps) if self.dds_steps is not None else dds_default_steps(T)
        if any(not 1 <= t <= T for t in steps):
            raise ConfigError(f"DDS steps {steps} outside [1, {T}]")
        return steps


class DataSpec(_Strict):
    """Synthetic benchmark parameters"""
    cases: int = Field(default=200, ge=1)
    size: int = 32
    classes: int = Field(default=2, ge=2, le=3)
    raters: int = Field(default=4, ge=1)
    ambiguity: float = Field(default=3.0, ge=0)
    noise: float = Field(default=0.15, ge=0)
    test_fraction: float = Field(default=0.2, gt=0, lt=1)

    @field_validator("size")
    @classmethod
    def _size_ok(cls, v: int) -> int:
        if v < 8 or v % 4:
            raise ValueError(f"size must be a multiple of 4 and >= 8, got {v}")
        return v


class RunConfig(_Strict):
    """Complete, serializable description of an experiment"""
    seed: int = 0
    output_dir: str = "runs/default"
    schedule: ScheduleSpec = ScheduleSpec()
    sampler: SamplerSpec = SamplerSpec()
    network: NetworkSpec = NetworkSpec()
    train: TrainConfig = TrainConfig()
    data: DataSpec = DataSpec()

    @model_validator(mode="after")
    def _sampler_within_chain(self):
        if self.sampler.S > self.schedule.T:
            raise ValueError(f"sampler.S={self.sampler.S} exceeds schedule.T={self.schedule.T}")
        return self

    @property
    def ablation(self) -> str:
        flags = [name for name in ("no_pgr", "no_dds") if getattr(self.train, name)]
        return "+".join(flags) if flags else "pgrd"

    # ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(data or {})
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """Load a .json or .yaml run configuration"""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(data)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Apply dotted-key overrides, e.g. {"sampler.S": 10, "train.no_dds": True}"""
        data = self.model_dump(mode="json")
        for key, value in overrides.items():
            if value is None:
                continue
            node = data
            parts = key.split(".")
            for part in parts[:-1]:
                if part not in node or not isinstance(node[part], dict):
                    raise ConfigError(f"unknown config section in override '{key}'")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config field in override '{key}'")
            node[parts[-1]] = value
        return RunConfig.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)
