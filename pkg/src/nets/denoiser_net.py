"""
Denoiser f_theta - small encoder-decoder predicting v on the residual channel,
with auxiliary 1x1 heads for deep diffusion supervision
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import logging
import numpy as np

from src.algorithms.schedule import dds_default_steps
from src.nets.layers import Module, conv_params, he_uniform
from src.ndgrad.graph import Graph
from src.ndgrad.tensor import Precision, Tensor
from src.models.errors import ShapeError
from src.utils.rng import RngStreams

logger = logging.getLogger(__name__)

Steps = Union[int, Sequence[int], np.ndarray]


@dataclass(frozen=True)
class DenoiserArch:
    """Architecture descriptor of the denoiser"""
    num_classes: int = 2
    image_channels: int = 1
    widths: Tuple[int, int, int] = (16, 32, 64)
    time_dim: int = 32
    T: int = 1000
    dds_steps: Tuple[int, ...] = ()
    dds_window: int = 0
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "dds_steps", tuple(sorted(int(t) for t in self.dds_steps)))
        if len(self.widths) != 3:
            raise ValueError("denoiser needs exactly three stage widths")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")
        if any(not 1 <= t <= self.T for t in self.dds_steps):
            raise ValueError(f"DDS steps must lie in [1, {self.T}], got {self.dds_steps}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @classmethod
    def with_default_dds(cls, **kwargs) -> "DenoiserArch":
        T = kwargs.get("T", cls.T)
        return cls(dds_steps=tuple(dds_default_steps(T)), **kwargs)


@dataclass
class AuxLogits:
    """Logits of one DDS head and which batch items it supervises"""
    step: int
    logits: Tensor
    members: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding [B, dim] of integer steps"""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class DenoiserNet(Module):
    """
    Two downsample / two upsample stages with skip concatenations.

    Input is concat(s_t, X, pi) on channels; the projected time embedding is
    added to the bottleneck. The main head is zero-initialized (initial
    v_hat = 0). DDS heads read the decoder's final features and never feed
    back into the main path.
    """

    kind = "denoiser"

    def __init__(self, arch: Optional[DenoiserArch] = None, seed: int = 0):
        super().__init__(arch or DenoiserArch())
        a = self.arch
        w1, w2, w3 = a.widths
        c_in = 2 * a.num_classes + a.image_channels
        rng = RngStreams(seed).stream("init", "denoiser")

        layout = [
            ("enc1a", c_in, w1), ("enc1b", w1, w1),
            ("enc2a", w1, w2), ("enc2b", w2, w2),
            ("mid_a", w2, w3), ("mid_b", w3, w3),
            ("dec2a", w3 + w2, w2), ("dec2b", w2, w2),
            ("dec1a", w2 + w1, w1), ("dec1b", w1, w1),
        ]
        for name, ci, co in layout:
            self.params[f"{name}.w"], self.params[f"{name}.b"] = conv_params(rng, ci, co)
        self.params["time.w"] = he_uniform(rng, (a.time_dim, w3), fan_in=a.time_dim)
        self.params["time.b"] = np.zeros(w3, dtype=np.float32)
        self.params["out.w"], self.params["out.b"] = conv_params(rng, w1, a.num_classes, zero=True)
        for step in a.dds_steps:
            self.params[f"aux{step}.w"], self.params[f"aux{step}.b"] = conv_params(
                rng, w1, a.num_classes, k=1
            )

    @classmethod
    def arch_from_dict(cls, data: Dict[str, Any]) -> DenoiserArch:
        return DenoiserArch(**data)

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    # ------------------------------------------------------------------

    def _steps(self, t: Steps, batch: int) -> np.ndarray:
        steps = np.full(batch, int(t)) if np.isscalar(t) else np.asarray(t, dtype=np.int64).reshape(-1)
        if steps.shape != (batch,):
            raise ValueError(f"need one step per batch item, got {steps.shape} for batch {batch}")
        if np.any(steps < 1) or np.any(steps > self.arch.T):
            raise ValueError(f"steps must lie in [1, {self.arch.T}], got {steps.tolist()}")
        return steps

    def _check_inputs(self, s_t: Tensor, image: Tensor, prior: Tensor) -> None:
        a = self.arch
        ok = (
            s_t.data.ndim == 4 and s_t.shape[1] == a.num_classes
            and prior.shape == s_t.shape
            and image.data.ndim == 4 and image.shape[1] == a.image_channels
            and image.shape[0] == s_t.shape[0] and image.shape[2:] == s_t.shape[2:]
            and s_t.shape[2] % 4 == 0 and s_t.shape[3] % 4 == 0
        )
        if not ok:
            raise ShapeError(
                "denoiser_forward", [s_t.shape, image.shape, prior.shape],
                f"expected s_t/pi [B,{a.num_classes},H,W], X [B,{a.image_channels},H,W], H and W divisible by 4",
            )

    def forward(
        self, graph: Graph, s_t: Tensor, image: Tensor, prior: Tensor, t: Steps
    ) -> Tuple[Tensor, Dict[int, AuxLogits]]:
        """
        Predict v_hat and the logits of every DDS head active at t

        Args:
            graph: Graph to record into
            s_t: Noisy state [B,C,H,W]
            image: Conditioning image [B,Cx,H,W]
            prior: Prior probabilities [B,C,H,W]
            t: One step for the batch or one per item

        Returns:
            (v_hat [B,C,H,W], {step: AuxLogits}) - the map is empty when no
            item's step is a DDS step
        """
        self._check_inputs(s_t, image, prior)
        steps = self._steps(t, s_t.shape[0])
        p = self.bind(graph)

        def block(h: Tensor, name: str) -> Tensor:
            h = graph.silu(graph.conv2d(h, p[f"{name}a.w"], p[f"{name}a.b"]))
            return graph.silu(graph.conv2d(h, p[f"{name}b.w"], p[f"{name}b.b"]))

        x = graph.concat(s_t, image, prior)
        e1 = block(x, "enc1")
        e2 = block(graph.avgpool2x(e1), "enc2")

        emb = graph.leaf(timestep_embedding(steps, self.arch.time_dim), name="t_embedding")
        t_proj = graph.add(graph.matmul(emb, p["time.w"]), p["time.b"])
        m = graph.conv2d(graph.avgpool2x(e2), p["mid_a.w"], p["mid_a.b"])
        m = graph.silu(graph.add(m, t_proj))
        m = graph.silu(graph.conv2d(m, p["mid_b.w"], p["mid_b.b"]))

        d2 = block(graph.concat(graph.upsample2x(m), e2), "dec2")
        d1 = block(graph.concat(graph.upsample2x(d2), e1), "dec1")
        v_hat = graph.conv2d(d1, p["out.w"], p["out.b"])

        aux: Dict[int, AuxLogits] = {}
        for step in self.arch.dds_steps:
            members = np.abs(steps - step) <= self.arch.dds_window
            if members.any():
                logits = graph.conv2d(d1, p[f"aux{step}.w"], p[f"aux{step}.b"])
                aux[step] = AuxLogits(step=step, logits=logits, members=members)
        return v_hat, aux

    def predict_v(self, s_t: np.ndarray, image: np.ndarray, prior: np.ndarray, t: Steps) -> np.ndarray:
        """Inference-only v_hat on raw arrays"""
        graph = Graph(Precision.TRAIN, record=False)
        v_hat, _ = self.forward(graph, graph.leaf(s_t), graph.leaf(image), graph.leaf(prior), t)
        return np.array(v_hat.data, dtype=np.float64)


def denoiser_forward(
    net: DenoiserNet, graph: Graph, s_t: Tensor, image: Tensor, prior: Tensor, t: Steps
) -> Tuple[Tensor, Dict[int, AuxLogits]]:
    """f_theta(s_t, X, pi, t) -> (v_hat, aux logits map)"""
    return net.forward(graph, s_t, image, prior, t)
