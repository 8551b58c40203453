"""
Immutable dense tensors
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np


class Precision(str, Enum):
    """Floating point mode of a graph"""
    CHECK = "float64"   # gradient checking
    TRAIN = "float32"   # training / inference

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)


@dataclass(frozen=True, eq=False)
class Tensor:
    """
    A value recorded in a Graph

    `data` is a read-only row-major array; `node` is the id of the graph
    node that produced it.
    """
    data: np.ndarray
    node: int
    requires_grad: bool = False
    name: Optional[str] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(node={self.node}, shape={self.shape}, requires_grad={self.requires_grad})"
