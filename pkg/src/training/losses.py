"""
Training losses recorded into an ndgrad Graph
"""
from typing import Iterable, Mapping, Optional

import numpy as np

from src.nets.denoiser_net import AuxLogits
from src.ndgrad.graph import Graph
from src.ndgrad.tensor import Tensor
from src.models.errors import ShapeError


def loss_vel(graph: Graph, v_hat: Tensor, v: Tensor) -> Tensor:
    """Mean squared error over all elements: E||v - v_hat||^2"""
    if v_hat.shape != v.shape:
        raise ShapeError("loss_vel", [v_hat.shape, v.shape])
    return graph.mse(v, v_hat)


def loss_dds(
    graph: Graph,
    aux: Mapping[int, AuxLogits],
    y_star: Tensor,
    tau: float,
    dds_steps: Optional[Iterable[int]] = None,
) -> Tensor:
    """
    Sum over DDS steps of CE(softmax(psi_t / tau), y*)

    CE is averaged over the pixels of the batch items each head supervises.

    Args:
        graph: Graph holding the aux logits
        aux: Step -> AuxLogits from the denoiser forward
        y_star: One-hot target [B,C,H,W] (constant)
        tau: DDS temperature
        dds_steps: The configured step set; every key of `aux` must belong to it
    """
    if not aux:
        raise ValueError("loss_dds called with an empty aux map while DDS is enabled")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if dds_steps is not None:
        allowed = set(int(t) for t in dds_steps)
        stray = sorted(set(aux) - allowed)
        if stray:
            raise ValueError(f"aux logits for steps {stray} not in the DDS set {sorted(allowed)}")

    total: Optional[Tensor] = None
    for step in sorted(aux):
        head = aux[step]
        scaled = head.logits if tau == 1.0 else graph.scale(head.logits, 1.0 / tau)
        weights = None if head.members.all() else head.members.astype(np.float64)
        ce = graph.cross_entropy(scaled, y_star, weights=weights)
        total = ce if total is None else graph.add(total, ce)
    return total


def loss_total(graph: Graph, l_vel: Tensor, l_dds: Optional[Tensor], lam: float) -> Tensor:
    """L_vel + lambda * L_DDS (L_vel alone when DDS is absent)"""
    if l_dds is None:
        return l_vel
    return graph.add(l_vel, graph.scale(l_dds, lam))
