"""
Parameter containers shared by the prior and denoiser networks
"""
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Mapping, Type, TypeVar, Union

import logging
import numpy as np

from src.models.errors import CheckpointError
from src.ndgrad.checkpoint import load_checkpoint, save_checkpoint
from src.ndgrad.graph import Graph
from src.ndgrad.tensor import Tensor

logger = logging.getLogger(__name__)

M = TypeVar("M", bound="Module")


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """He-uniform weights, bound sqrt(6 / fan_in)"""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def conv_params(rng: np.random.Generator, c_in: int, c_out: int, k: int = 3, zero: bool = False):
    """(weight [Co,Ci,k,k], bias [Co]) pair"""
    if zero:
        w = np.zeros((c_out, c_in, k, k), dtype=np.float32)
    else:
        w = he_uniform(rng, (c_out, c_in, k, k), fan_in=c_in * k * k)
    return w, np.zeros(c_out, dtype=np.float32)


class Module:
    """
    Named float32 parameters plus an architecture descriptor

    Parameters are plain arrays owned by the module; a forward pass binds
    them into a Graph as leaves. A frozen module binds them as constants,
    so backward never produces gradients for it.
    """

    kind: str = "module"

    def __init__(self, arch: Any):
        self.arch = arch
        self.params: Dict[str, np.ndarray] = {}
        self.frozen = False

    # ------------------------------------------------------------------

    def bind(self, graph: Graph) -> Dict[str, Tensor]:
        """Record every parameter as a leaf of `graph`"""
        return {
            name: graph.leaf(value, requires_grad=not self.frozen, name=name)
            for name, value in self.params.items()
        }

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def update(self, name: str, value: np.ndarray) -> None:
        """Replace one parameter (optimizer write path)"""
        if self.frozen:
            raise RuntimeError(f"{self.kind} is frozen; refusing to update '{name}'")
        if value.shape != self.params[name].shape:
            raise ValueError(f"shape change for '{name}': {self.params[name].shape} -> {value.shape}")
        self.params[name] = value.astype(np.float32, copy=False)

    def freeze(self: M) -> M:
        """Mark the module immutable; its arrays become read-only"""
        self.frozen = True
        for value in self.params.values():
            value.flags.writeable = False
        logger.info(f"{self.kind} frozen ({self.parameter_count()} parameters)")
        return self

    def state_bytes(self) -> bytes:
        """Concatenated parameter bytes in name order (for hashing)"""
        return b"".join(self.params[name].tobytes() for name in sorted(self.params))

    # ------------------------------------------------------------------
    # checkpoints

    def save(self, path: Union[str, Path]) -> Path:
        meta = {"kind": self.kind, "arch": asdict(self.arch), "frozen": self.frozen}
        return save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls: Type[M], path: Union[str, Path], expect_arch: Any = None) -> M:
        """
        Rebuild a module from a checkpoint

        Args:
            path: Checkpoint file
            expect_arch: If given, the stored architecture must produce the
                same parameter shapes

        Returns:
            Module with parameters restored bit-exactly
        """
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != cls.kind:
            raise CheckpointError(f"{path}: checkpoint holds '{meta.get('kind')}', expected '{cls.kind}'")
        arch = cls.arch_from_dict(meta["arch"])
        module = cls(expect_arch if expect_arch is not None else arch, seed=0)
        module.load_state(tensors)
        if meta.get("frozen"):
            module.freeze()
        return module

    def load_state(self, tensors: Mapping[str, np.ndarray]) -> None:
        for name, current in self.params.items():
            if name not in tensors:
                raise CheckpointError("missing tensor", tensor=name)
            value = tensors[name]
            if value.shape != current.shape or value.dtype != current.dtype:
                raise CheckpointError(
                    f"shape/dtype mismatch {value.shape}/{value.dtype} vs {current.shape}/{current.dtype}",
                    tensor=name,
                )
        extra = sorted(set(tensors) - set(self.params))
        if extra:
            raise CheckpointError("unexpected tensor", tensor=extra[0])
        self.params = {name: np.array(tensors[name], copy=True) for name in self.params}

    @classmethod
    def arch_from_dict(cls, data: Dict[str, Any]) -> Any:
        raise NotImplementedError
