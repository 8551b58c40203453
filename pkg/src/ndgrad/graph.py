"""
Operation graph with reverse-mode gradient accumulation
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from src.models.errors import NumericalError
from src.ndgrad.ops import OPS
from src.ndgrad.tensor import Precision, Tensor


@dataclass
class Node:
    """One recorded operation (leaves have op == 'leaf')"""
    id: int
    op: str
    inputs: tuple
    attrs: Dict[str, Any] = field(default_factory=dict)
    value: Optional[np.ndarray] = None
    saved: Any = None
    requires_grad: bool = False
    name: Optional[str] = None


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class Graph:
    """
    Single-writer record of tensors and the ops that produced them.

    Nodes are appended in creation order, which is a topological order;
    backward walks it in reverse. A graph built with record=False keeps
    no saved activations and cannot be differentiated (inference).
    """

    def __init__(self, precision: Union[Precision, str] = Precision.TRAIN, record: bool = True):
        self.precision = Precision(precision)
        self.dtype = self.precision.dtype
        self.record = record
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    # ------------------------------------------------------------------
    # construction

    def leaf(self, value, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
        """Add an input tensor (parameter, data or constant)"""
        array = np.array(value, dtype=self.dtype, copy=True)
        if not np.all(np.isfinite(array)):
            raise NumericalError(f"non-finite leaf value{f' {name}' if name else ''}")
        node = Node(
            id=len(self.nodes), op="leaf", inputs=(),
            value=_frozen(array), requires_grad=requires_grad and self.record, name=name,
        )
        self.nodes.append(node)
        return Tensor(node.value, node.id, node.requires_grad, name)

    def apply(self, op: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
        """Run a registered op on recorded tensors"""
        spec = OPS.get(op)
        if spec is None:
            raise ValueError(f"unknown op '{op}'")
        if spec.arity is not None and len(inputs) != spec.arity:
            raise ValueError(f"{op} takes {spec.arity} inputs, got {len(inputs)}")
        for tensor in inputs:
            if tensor.node >= len(self.nodes) or self.nodes[tensor.node].value is not tensor.data:
                raise ValueError(f"{op}: input {tensor!r} does not belong to this graph")
        values = [t.data for t in inputs]
        out, saved = self._evaluate(op, values, attrs)
        node = Node(
            id=len(self.nodes), op=op, inputs=tuple(t.node for t in inputs), attrs=dict(attrs),
            value=out, saved=saved if self.record else None,
            requires_grad=self.record and any(t.requires_grad for t in inputs),
        )
        self.nodes.append(node)
        return Tensor(out, node.id, node.requires_grad)

    def _evaluate(self, op: str, values: Sequence[np.ndarray], attrs: Mapping[str, Any]):
        spec = OPS[op]
        for v in values:
            if not np.all(np.isfinite(v)):
                raise NumericalError(f"{op}: non-finite input")
        spec.check(values, attrs)
        out, saved = spec.forward(values, attrs)
        out = np.asarray(out, dtype=self.dtype)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"{op}: produced non-finite output")
        return _frozen(out), saved

    # ------------------------------------------------------------------
    # sugar

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        return self.apply("add", [a, b])

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        return self.apply("add", [a, self.apply("scale", [b], factor=-1.0)])

    def scale(self, x: Tensor, factor: float) -> Tensor:
        return self.apply("scale", [x], factor=float(factor))

    def concat(self, *xs: Tensor) -> Tensor:
        return self.apply("concat", list(xs))

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        return self.apply("matmul", [a, b])

    def conv2d(self, x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
        return self.apply("conv2d", [x, w] if b is None else [x, w, b])

    def relu(self, x: Tensor) -> Tensor:
        return self.apply("relu", [x])

    def silu(self, x: Tensor) -> Tensor:
        return self.apply("silu", [x])

    def upsample2x(self, x: Tensor) -> Tensor:
        return self.apply("upsample2x", [x])

    def avgpool2x(self, x: Tensor) -> Tensor:
        return self.apply("avgpool2x", [x])

    def softmax(self, x: Tensor) -> Tensor:
        return self.apply("softmax", [x])

    def cross_entropy(self, logits: Tensor, target: Tensor, weights=None) -> Tensor:
        if weights is None:
            return self.apply("cross_entropy", [logits, target])
        return self.apply("cross_entropy", [logits, target], weights=tuple(float(w) for w in weights))

    def mse(self, a: Tensor, b: Tensor) -> Tensor:
        return self.apply("mse", [a, b])

    def sum(self, x: Tensor) -> Tensor:
        return self.apply("sum", [x])

    # ------------------------------------------------------------------
    # replay / gradients

    def replay(self, overrides: Mapping[int, np.ndarray]) -> List[np.ndarray]:
        """
        Re-evaluate every node with some leaf values replaced

        Returns the list of node values; the graph itself is not modified.
        """
        values: List[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                value = overrides.get(node.id, node.value)
                values.append(np.asarray(value, dtype=self.dtype))
            else:
                out, _ = OPS[node.op].forward([values[i] for i in node.inputs], node.attrs)
                values.append(np.asarray(out, dtype=self.dtype))
        return values

    def leaves(self, requires_grad: Optional[bool] = None) -> List[Node]:
        return [
            n for n in self.nodes
            if n.op == "leaf" and (requires_grad is None or n.requires_grad == requires_grad)
        ]


def backward(graph: Graph, loss: Union[Tensor, int]) -> Dict[int, np.ndarray]:
    """
    Reverse-mode gradients of a scalar loss

    Gradients are summed over fan-out. Only nodes that require grad are
    returned; constant leaves receive none.

    Args:
        graph: Recorded graph
        loss: Scalar tensor (or its node id)

    Returns:
        Mapping node id -> gradient array
    """
    loss_id = loss.node if isinstance(loss, Tensor) else int(loss)
    if not graph.record:
        raise ValueError("graph was built with record=False")
    loss_node = graph.nodes[loss_id]
    if loss_node.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss_node.value.shape}")

    grads: Dict[int, np.ndarray] = {loss_id: np.ones_like(loss_node.value)}
    for node in reversed(graph.nodes[: loss_id + 1]):
        g = grads.get(node.id)
        if g is None or node.op == "leaf" or not node.requires_grad:
            continue
        inputs = [graph.nodes[i].value for i in node.inputs]
        input_grads = OPS[node.op].backward(g, inputs, node.value, node.saved, node.attrs)
        for idx, ig in zip(node.inputs, input_grads):
            if ig is None or not graph.nodes[idx].requires_grad:
                continue
            ig = np.asarray(ig, dtype=graph.dtype).reshape(graph.nodes[idx].value.shape)
            if idx in grads:
                grads[idx] = grads[idx] + ig
            else:
                grads[idx] = ig
    return {i: g for i, g in grads.items() if graph.nodes[i].requires_grad}
