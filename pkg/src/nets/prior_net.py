"""
Prior predictor - a deliberately weak 4-layer conv net producing the
coarse class-probability field injected into every diffusion step
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional

import logging
import numpy as np

from src.nets.layers import Module, conv_params
from src.ndgrad.graph import Graph
from src.ndgrad.tensor import Precision, Tensor
from src.models.errors import ShapeError
from src.utils.rng import RngStreams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorArch:
    """Architecture descriptor of the prior network"""
    image_channels: int = 1
    num_classes: int = 2
    width: int = 16
    depth: int = 4          # conv layers, last one maps to classes


class PriorNet(Module):
    """
    Conv stack without down/upsampling; the final layer is zero-initialized
    so an untrained prior is uniform (1/C everywhere).
    """

    kind = "prior"

    def __init__(self, arch: Optional[PriorArch] = None, seed: int = 0):
        super().__init__(arch or PriorArch())
        if self.arch.depth < 2:
            raise ValueError("prior depth must be >= 2")
        rng = RngStreams(seed).stream("init", "prior")
        channels = [self.arch.image_channels] + [self.arch.width] * (self.arch.depth - 1)
        for i in range(self.arch.depth - 1):
            self.params[f"conv{i}.w"], self.params[f"conv{i}.b"] = conv_params(rng, channels[i], channels[i + 1])
        self.params["out.w"], self.params["out.b"] = conv_params(
            rng, self.arch.width, self.arch.num_classes, zero=True
        )

    @classmethod
    def arch_from_dict(cls, data: Dict[str, Any]) -> PriorArch:
        return PriorArch(**data)

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    def logits(self, graph: Graph, image: Tensor) -> Tensor:
        if image.data.ndim != 4 or image.shape[1] != self.arch.image_channels:
            raise ShapeError("prior_forward", [image.shape], f"expected [B,{self.arch.image_channels},H,W]")
        p = self.bind(graph)
        h = image
        for i in range(self.arch.depth - 1):
            h = graph.relu(graph.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"]))
        return graph.conv2d(h, p["out.w"], p["out.b"])

    def forward(self, graph: Graph, image: Tensor) -> Tensor:
        """Probability field pi [B,C,H,W] (softmax over channels)"""
        return graph.softmax(self.logits(graph, image))

    def predict(self, image: np.ndarray) -> np.ndarray:
        """Inference-only forward on a raw array"""
        graph = Graph(Precision.TRAIN, record=False)
        return np.array(self.forward(graph, graph.leaf(image)).data)


class UniformPrior:
    """
    Degenerate prior 1/C everywhere

    Used for the w/o-PGR ablation and the vanilla-DDPM baseline: every
    prior-drift formula reduces to a standard DDPM centered at 1/C.
    """

    kind = "uniform"
    frozen = True

    def __init__(self, num_classes: int):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.num_classes = num_classes

    def predict(self, image: np.ndarray) -> np.ndarray:
        b, _, h, w = image.shape
        return np.full((b, self.num_classes, h, w), 1.0 / self.num_classes, dtype=np.float32)


def prior_forward(net, image: np.ndarray) -> np.ndarray:
    """pi_phi(X) for a batch of images [B,Cx,H,W]"""
    return net.predict(image)
