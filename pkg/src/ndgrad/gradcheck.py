"""
Finite-difference gradient checker

Compares the analytic gradients of `backward` against central differences
for every leaf that requires grad. Runs in 64-bit check mode only.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Union

import logging
import numpy as np

from src.ndgrad.graph import Graph, backward
from src.ndgrad.ops import OPS
from src.ndgrad.tensor import Precision, Tensor

logger = logging.getLogger(__name__)

FD_STEP = 1e-5


@dataclass
class LeafCheck:
    """Result for one leaf"""
    node: int
    name: Optional[str]
    max_rel_error: float
    checked: int
    excluded: bool = False
    reason: str = ""

    def to_dict(self) -> Dict:
        return {
            "node": self.node,
            "name": self.name,
            "max_rel_error": self.max_rel_error,
            "checked": self.checked,
            "excluded": self.excluded,
            "reason": self.reason,
        }


@dataclass
class GradCheckReport:
    """Per-leaf errors and the overall verdict"""
    tolerance: float
    leaves: List[LeafCheck] = field(default_factory=list)
    kink_nodes: List[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(l.max_rel_error <= self.tolerance for l in self.leaves if not l.excluded)

    @property
    def max_rel_error(self) -> float:
        errors = [l.max_rel_error for l in self.leaves if not l.excluded]
        return max(errors) if errors else 0.0

    def to_dict(self) -> Dict:
        return {
            "tolerance": self.tolerance,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "kink_nodes": list(self.kink_nodes),
            "leaves": [l.to_dict() for l in self.leaves],
        }


def _kink_nodes(graph: Graph, step: float) -> List[int]:
    """Nodes of kinked ops whose input lies within `step` of the kink"""
    hits = []
    for node in graph.nodes:
        if node.op != "leaf" and OPS[node.op].kink:
            x = graph.nodes[node.inputs[0]].value
            if np.any(np.abs(x) <= step):
                hits.append(node.id)
    return hits


def _ancestors(graph: Graph) -> List[Set[int]]:
    """For each node, the set of leaf ids it depends on"""
    deps: List[Set[int]] = []
    for node in graph.nodes:
        if node.op == "leaf":
            deps.append({node.id})
        else:
            merged: Set[int] = set()
            for i in node.inputs:
                merged |= deps[i]
            deps.append(merged)
    return deps


def grad_check(
    graph: Graph,
    tolerance: float = 1e-4,
    loss: Optional[Union[Tensor, int]] = None,
    step: float = FD_STEP,
    coords_per_leaf: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Check analytic gradients against central finite differences

    Args:
        graph: 64-bit recorded graph
        tolerance: Max allowed relative error per leaf
        loss: Scalar loss tensor / node id (defaults to the last node)
        step: Finite-difference step
        coords_per_leaf: Check only this many random coordinates per leaf
        seed: Coordinate sampling seed

    Returns:
        GradCheckReport listing every leaf that requires grad
    """
    if graph.precision is not Precision.CHECK:
        raise ValueError("grad_check requires a float64 (check mode) graph")
    loss_id = len(graph.nodes) - 1 if loss is None else (loss.node if isinstance(loss, Tensor) else int(loss))

    analytic = backward(graph, loss_id)
    kinks = _kink_nodes(graph, step)
    deps = _ancestors(graph) if kinks else []
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance, kink_nodes=kinks)

    for leaf in graph.leaves(requires_grad=True):
        if any(leaf.id in deps[k] for k in kinks):
            report.leaves.append(LeafCheck(
                leaf.id, leaf.name, 0.0, 0, excluded=True, reason="non-differentiable point",
            ))
            continue

        grad = analytic.get(leaf.id, np.zeros_like(leaf.value)).reshape(-1)
        flat = leaf.value.reshape(-1)
        coords = np.arange(flat.size)
        if coords_per_leaf is not None and coords_per_leaf < flat.size:
            coords = np.sort(rng.choice(flat.size, size=coords_per_leaf, replace=False))

        numeric = np.empty(coords.size)
        for j, idx in enumerate(coords):
            probe = flat.copy()
            probe[idx] = flat[idx] + step
            plus = graph.replay({leaf.id: probe.reshape(leaf.value.shape)})[loss_id]
            probe[idx] = flat[idx] - step
            minus = graph.replay({leaf.id: probe.reshape(leaf.value.shape)})[loss_id]
            numeric[j] = (float(plus) - float(minus)) / (2 * step)

        picked = grad[coords]
        scale = max(np.abs(picked).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
        error = float(np.abs(picked - numeric).max(initial=0.0) / scale)
        report.leaves.append(LeafCheck(leaf.id, leaf.name, error, int(coords.size)))

    if kinks:
        logger.info(f"grad_check: {len(kinks)} relu node(s) at a kink, dependent leaves excluded")
    logger.debug(f"grad_check: max rel error {report.max_rel_error:.3e} (tol {tolerance:g})")
    return report


# ---------------------------------------------------------------------------
# per-op probes

def _p(graph: Graph, rng: np.random.Generator, shape, name: str) -> Tensor:
    return graph.leaf(rng.standard_normal(shape), requires_grad=True, name=name)


def _probability(graph: Graph, rng: np.random.Generator, shape, name: str) -> Tensor:
    logits = rng.standard_normal(shape)
    field = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    return graph.leaf(field, requires_grad=True, name=name)


OP_PROBES: Dict[str, Callable[[Graph, np.random.Generator], Tensor]] = {
    "add": lambda g, r: g.add(_p(g, r, (2, 3, 4, 4), "a"), _p(g, r, (2, 3, 4, 4), "b")),
    "add/channel": lambda g, r: g.add(_p(g, r, (2, 3, 4, 4), "a"), _p(g, r, (2, 3), "b")),
    "add/bias": lambda g, r: g.add(_p(g, r, (2, 3), "a"), _p(g, r, (3,), "b")),
    "scale": lambda g, r: g.scale(_p(g, r, (2, 3), "x"), -1.7),
    "sum": lambda g, r: g.sum(_p(g, r, (2, 3, 4, 4), "x")),
    "concat": lambda g, r: g.concat(_p(g, r, (1, 2, 4, 4), "a"), _p(g, r, (1, 3, 4, 4), "b")),
    "matmul": lambda g, r: g.matmul(_p(g, r, (3, 4), "a"), _p(g, r, (4, 2), "b")),
    "conv2d": lambda g, r: g.conv2d(_p(g, r, (2, 2, 4, 4), "x"), _p(g, r, (3, 2, 3, 3), "w"), _p(g, r, (3,), "b")),
    "conv2d/1x1": lambda g, r: g.conv2d(_p(g, r, (1, 2, 4, 4), "x"), _p(g, r, (3, 2, 1, 1), "w")),
    "relu": lambda g, r: g.relu(_p(g, r, (2, 2, 4, 4), "x")),
    "silu": lambda g, r: g.silu(_p(g, r, (2, 2, 4, 4), "x")),
    "upsample2x": lambda g, r: g.upsample2x(_p(g, r, (1, 2, 2, 2), "x")),
    "avgpool2x": lambda g, r: g.avgpool2x(_p(g, r, (1, 2, 4, 4), "x")),
    "softmax": lambda g, r: g.softmax(_p(g, r, (1, 3, 2, 2), "x")),
    "cross_entropy": lambda g, r: g.cross_entropy(
        _p(g, r, (2, 3, 2, 2), "logits"), _probability(g, r, (2, 3, 2, 2), "target")
    ),
    "cross_entropy/weighted": lambda g, r: g.cross_entropy(
        _p(g, r, (2, 3, 2, 2), "logits"), _probability(g, r, (2, 3, 2, 2), "target"), weights=[1.0, 0.0]
    ),
    "mse": lambda g, r: g.mse(_p(g, r, (2, 3), "a"), _p(g, r, (2, 3), "b")),
}


def check_all_ops(tolerance: float = 1e-4, seed: int = 0) -> Dict[str, GradCheckReport]:
    """
    Gradient-check every registered op on small random inputs

    Non-scalar outputs are reduced with an mse against a random constant.

    Returns:
        probe name -> report; probe names are op names, optionally with a
        "/variant" suffix
    """
    covered = {name.split("/")[0] for name in OP_PROBES}
    missing = sorted(set(OPS) - covered)
    if missing:
        raise RuntimeError(f"no gradient probe for op(s) {missing}")

    reports: Dict[str, GradCheckReport] = {}
    for i, (name, build) in enumerate(OP_PROBES.items()):
        rng = np.random.default_rng([seed, i])
        graph = Graph(Precision.CHECK)
        out = build(graph, rng)
        if out.size != 1:
            out = graph.mse(out, graph.leaf(rng.standard_normal(out.shape), name="target"))
        reports[name] = grad_check(graph, tolerance=tolerance, loss=out)
    failed = [n for n, r in reports.items() if not r.passed]
    logger.info(f"check_all_ops: {len(reports) - len(failed)}/{len(reports)} probes passed")
    return reports
