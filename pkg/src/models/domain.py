"""
Core domain models for PGRD
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np


class SamplerType(str, Enum):
    """Reverse-process variance choices"""
    DDPM_FIXED = "ddpm-fixed"   # sigma_t^2 = 1 - rho_t
    DDPM_TILDE = "ddpm-tilde"   # sigma_t^2 = posterior variance
    DDIM = "ddim"               # sigma_t = 0

    @property
    def stochastic(self) -> bool:
        return self is not SamplerType.DDIM


class PosteriorMode(str, Enum):
    """How the posterior mean treats the prior"""
    CENTERED = "centered"
    LITERAL = "literal"


class ForwardForm(str, Enum):
    """Per-step forward transition variants"""
    CORRECTED = "corrected"     # sqrt(rho_t) on the previous state
    LITERAL = "literal"         # rho_t on the previous state


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Class-index map [B,H,W] -> one-hot field [B,C,H,W] (float32)"""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")
    eye = np.eye(num_classes, dtype=np.float32)
    return np.moveaxis(eye[labels], -1, 1)


@dataclass(frozen=True)
class LabelField:
    """Per-pixel one-hot target y* [B,C,H,W]"""
    onehot: np.ndarray

    def __post_init__(self):
        if self.onehot.ndim != 4:
            raise ValueError(f"LabelField expects [B,C,H,W], got {self.onehot.shape}")
        values_ok = np.isin(self.onehot, (0.0, 1.0)).all()
        if not values_ok or not np.all(self.onehot.sum(axis=1) == 1):
            raise ValueError("LabelField must be one-hot on every pixel")

    @classmethod
    def from_indices(cls, labels: np.ndarray, num_classes: int) -> "LabelField":
        return cls(one_hot(labels, num_classes))

    @property
    def num_classes(self) -> int:
        return self.onehot.shape[1]

    @property
    def indices(self) -> np.ndarray:
        return self.onehot.argmax(axis=1)


@dataclass(frozen=True)
class DiffusionState:
    """Noisy state s_t at step t, tied to the prior field it drifts toward"""
    s: np.ndarray
    t: int
    prior: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        """r_t = s_t - pi"""
        return self.s - self.prior


@dataclass
class SampleSet:
    """M decoded y0 samples [M,B,C,H,W] plus what is needed to replay them"""
    samples: np.ndarray
    steps: List[int]
    sampler: SamplerType
    seed: int
    injections: List[int] = field(default_factory=list)

    def __post_init__(self):
        if self.samples.ndim != 5 or self.samples.shape[0] < 1:
            raise ValueError(f"SampleSet expects [M>=1,B,C,H,W], got {self.samples.shape}")

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    @property
    def S(self) -> int:
        return len(self.steps)

    def metadata(self) -> Dict[str, Any]:
        return {
            "M": self.M,
            "S": self.S,
            "steps": list(self.steps),
            "sampler": self.sampler.value,
            "stochastic": self.sampler.stochastic,
            "seed": self.seed,
            "injections": list(self.injections),
        }


@dataclass(frozen=True)
class PredictiveDistribution:
    """Aggregated mean probability field and its argmax mask"""
    probs: np.ndarray   # [B,C,H,W]
    mask: np.ndarray    # [B,H,W]


@dataclass
class SegmentationCase:
    """One synthetic case: image plus every rater's label map"""
    case_id: int
    image: np.ndarray   # [Cx,H,W] float32
    raters: np.ndarray  # [R,H,W] uint8 class indices

    @property
    def num_raters(self) -> int:
        return self.raters.shape[0]


@dataclass
class CaseResult:
    """Per-case evaluation record"""
    case_id: int
    dsc_per_class: List[float] = field(default_factory=list)
    dsc: float = 0.0            # foreground mean
    nll: float = 0.0
    ece: float = 0.0
    corr: float = 0.0
    corr_degenerate: bool = False
    M: int = 1

    def __post_init__(self):
        if not 0.0 <= self.dsc <= 1.0:
            raise ValueError(f"dsc out of range: {self.dsc}")
        if self.nll < 0.0:
            raise ValueError(f"nll negative: {self.nll}")
        if not 0.0 <= self.ece <= 1.0:
            raise ValueError(f"ece out of range: {self.ece}")

    def to_dict(self) -> Dict[str, Any]:
        row = {
            "case_id": self.case_id,
            "dsc": self.dsc,
            "nll": self.nll,
            "ece": self.ece,
            "corr": self.corr,
            "corr_degenerate": self.corr_degenerate,
            "M": self.M,
        }
        for c, value in enumerate(self.dsc_per_class):
            row[f"dsc_c{c}"] = value
        return row


class StageStatus(str, Enum):
    """Status of an orchestrated stage"""
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass
class StageResult:
    """Outcome of one orchestrated stage (gen/train/eval/...)"""
    status: StageStatus
    message: str
    data: Dict[str, Any] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    error: Optional[str] = None

    def is_success(self) -> bool:
        return self.status is StageStatus.SUCCESS

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "message": self.message,
            "data": self.data,
            "outputs": self.outputs,
            "error": self.error,
        }
