"""
Registered differentiable operations

Each op declares a shape rule, a forward kernel and a gradient rule.
The set is fixed: it is exactly what the prior and denoiser networks and
the training losses need.

Shape rules
-----------
add            a, b                 b.shape == a.shape, or b is [B,C] / [C] shifting
                                    the channel axis of a 4D a, or b is [C] biasing a 2D a
scale          x                    any shape; attr factor (constant)
concat         x1..xn               4D, equal B,H,W; concatenated on channels
matmul         a [N,K], b [K,M]     -> [N,M]
conv2d         x [B,Ci,H,W], w [Co,Ci,k,k], optional b [Co]; k in {1,3},
                                    stride 1, zero "same" padding -> [B,Co,H,W]
relu, silu     x                    elementwise
upsample2x     x [B,C,H,W]          nearest -> [B,C,2H,2W]
avgpool2x      x [B,C,H,W]          H, W even -> [B,C,H/2,W/2]
softmax        x [B,C,H,W]          over channels
cross_entropy  logits, target       both [B,C,H,W] -> scalar mean over weighted pixels;
                                    attr weights [B] (optional, constant)
mse            a, b                 equal shapes -> scalar mean
sum            x                    -> scalar
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax, softmax

from src.models.errors import ShapeError

Arrays = Sequence[np.ndarray]
Attrs = Dict[str, Any]
Grads = List[Optional[np.ndarray]]


@dataclass(frozen=True)
class OpSpec:
    """Forward kernel, gradient rule and shape rule of one op"""
    name: str
    check: Callable[[Arrays, Attrs], None]
    forward: Callable[[Arrays, Attrs], Tuple[np.ndarray, Any]]
    backward: Callable[[np.ndarray, Arrays, np.ndarray, Any, Attrs], Grads]
    arity: Optional[int] = None    # None = variadic
    kink: bool = False             # non-differentiable at input == 0


OPS: Dict[str, OpSpec] = {}


def register(spec: OpSpec) -> OpSpec:
    OPS[spec.name] = spec
    return spec


def _require(cond: bool, op: str, values: Arrays, rule: str) -> None:
    if not cond:
        raise ShapeError(op, [v.shape for v in values], rule)


# ---------------------------------------------------------------------------
# add / scale / sum

def _add_check(values, attrs):
    a, b = values
    ok = (
        b.shape == a.shape
        or (a.ndim == 4 and b.shape in (a.shape[:2], (a.shape[1],)))
        or (a.ndim == 2 and b.shape == (a.shape[1],))
    )
    _require(ok, "add", values, "b must equal a, or broadcast over the channel axis")


def _add_forward(values, attrs):
    a, b = values
    if b.shape == a.shape:
        return a + b, None
    if a.ndim == 4 and b.ndim == 2:
        return a + b[:, :, None, None], None
    if a.ndim == 4:
        return a + b[None, :, None, None], None
    return a + b[None, :], None


def _add_backward(g, values, out, saved, attrs):
    a, b = values
    if b.shape == a.shape:
        return [g, g]
    if a.ndim == 4 and b.ndim == 2:
        return [g, g.sum(axis=(2, 3))]
    if a.ndim == 4:
        return [g, g.sum(axis=(0, 2, 3))]
    return [g, g.sum(axis=0)]


register(OpSpec("add", _add_check, _add_forward, _add_backward, arity=2))


def _scale_check(values, attrs):
    if "factor" not in attrs:
        raise ValueError("scale requires attr 'factor'")


register(OpSpec(
    "scale",
    _scale_check,
    lambda values, attrs: (values[0] * values[0].dtype.type(attrs["factor"]), None),
    lambda g, values, out, saved, attrs: [g * g.dtype.type(attrs["factor"])],
    arity=1,
))

register(OpSpec(
    "sum",
    lambda values, attrs: None,
    lambda values, attrs: (np.asarray(values[0].sum(), dtype=values[0].dtype), None),
    lambda g, values, out, saved, attrs: [np.full(values[0].shape, g, dtype=values[0].dtype)],
    arity=1,
))


# ---------------------------------------------------------------------------
# concat / matmul

def _concat_check(values, attrs):
    _require(len(values) >= 1, "concat", values, "at least one input")
    first = values[0]
    ok = all(v.ndim == 4 for v in values) and all(
        v.shape[0] == first.shape[0] and v.shape[2:] == first.shape[2:] for v in values
    )
    _require(ok, "concat", values, "4D inputs with equal B,H,W")


def _concat_backward(g, values, out, saved, attrs):
    bounds = np.cumsum([v.shape[1] for v in values])[:-1]
    return list(np.split(g, bounds, axis=1))


register(OpSpec(
    "concat",
    _concat_check,
    lambda values, attrs: (np.concatenate(values, axis=1), None),
    _concat_backward,
))


def _matmul_check(values, attrs):
    a, b = values
    _require(a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0], "matmul", values, "[N,K] @ [K,M]")


register(OpSpec(
    "matmul",
    _matmul_check,
    lambda values, attrs: (values[0] @ values[1], None),
    lambda g, values, out, saved, attrs: [g @ values[1].T, values[0].T @ g],
    arity=2,
))


# ---------------------------------------------------------------------------
# conv2d

def _conv_check(values, attrs):
    _require(len(values) in (2, 3), "conv2d", values, "inputs (x, w) or (x, w, b)")
    x, w = values[0], values[1]
    ok = (
        x.ndim == 4 and w.ndim == 4
        and w.shape[2] == w.shape[3] and w.shape[2] in (1, 3)
        and w.shape[1] == x.shape[1]
    )
    if len(values) == 3:
        ok = ok and values[2].shape == (w.shape[0],)
    _require(ok, "conv2d", values, "x [B,Ci,H,W], w [Co,Ci,k,k] k in {1,3}, b [Co]")


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    """[B,C,H,W] -> zero-padded k x k windows [B,C,H,W,k,k]"""
    p = k // 2
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    return sliding_window_view(x, (k, k), axis=(2, 3))


def _conv_forward(values, attrs):
    x, w = values[0], values[1]
    k = w.shape[2]
    cols = _windows(x, k)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))    # [B,H,W,Co]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if len(values) == 3:
        out += values[2][None, :, None, None]
    return out, cols


def _conv_backward(g, values, out, cols, attrs):
    x, w = values[0], values[1]
    k = w.shape[2]
    grad_w = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # [Co,Ci,k,k]
    flipped = w[:, :, ::-1, ::-1]
    grad_x = np.tensordot(_windows(g, k), flipped, axes=([1, 4, 5], [0, 2, 3]))  # [B,H,W,Ci]
    grads = [np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2)), grad_w]
    if len(values) == 3:
        grads.append(g.sum(axis=(0, 2, 3)))
    return grads


register(OpSpec("conv2d", _conv_check, _conv_forward, _conv_backward))


# ---------------------------------------------------------------------------
# activations

register(OpSpec(
    "relu",
    lambda values, attrs: None,
    lambda values, attrs: (np.maximum(values[0], 0), None),
    # subgradient at 0 is 0
    lambda g, values, out, saved, attrs: [g * (values[0] > 0)],
    arity=1,
    kink=True,
))


def _silu_forward(values, attrs):
    x = values[0]
    sig = expit(x)
    return x * sig, sig


def _silu_backward(g, values, out, sig, attrs):
    x = values[0]
    return [g * (sig + x * sig * (1 - sig))]


register(OpSpec("silu", lambda values, attrs: None, _silu_forward, _silu_backward, arity=1))


# ---------------------------------------------------------------------------
# resampling

def _spatial_check(name: str, even: bool):
    def check(values, attrs):
        x = values[0]
        ok = x.ndim == 4 and (not even or (x.shape[2] % 2 == 0 and x.shape[3] % 2 == 0))
        _require(ok, name, values, "[B,C,H,W]" + (" with even H, W" if even else ""))
    return check


def _pool_forward(values, attrs):
    x = values[0]
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)), None


def _pool_backward(g, values, out, saved, attrs):
    spread = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
    return [spread * spread.dtype.type(0.25)]


def _upsample_backward(g, values, out, saved, attrs):
    b, c, h, w = g.shape
    return [g.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))]


register(OpSpec(
    "upsample2x",
    _spatial_check("upsample2x", even=False),
    lambda values, attrs: (np.repeat(np.repeat(values[0], 2, axis=2), 2, axis=3), None),
    _upsample_backward,
    arity=1,
))
register(OpSpec("avgpool2x", _spatial_check("avgpool2x", even=True), _pool_forward, _pool_backward, arity=1))


# ---------------------------------------------------------------------------
# softmax / losses

def _softmax_backward(g, values, out, saved, attrs):
    return [out * (g - (g * out).sum(axis=1, keepdims=True))]


register(OpSpec(
    "softmax",
    _spatial_check("softmax", even=False),
    lambda values, attrs: (softmax(values[0], axis=1).astype(values[0].dtype, copy=False), None),
    _softmax_backward,
    arity=1,
))


def _pixel_weights(logits: np.ndarray, attrs: Attrs) -> np.ndarray:
    """Per-pixel weights [B,1,H,W] normalized to sum 1"""
    b, _, h, w = logits.shape
    weights = attrs.get("weights")
    per_item = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)
    if per_item.shape != (b,) or per_item.sum() <= 0:
        raise ValueError(f"cross_entropy weights must be [B] with positive sum, got {per_item}")
    per_item = per_item / (per_item.sum() * h * w)
    return per_item.astype(logits.dtype)[:, None, None, None]


def _ce_check(values, attrs):
    logits, target = values
    _require(logits.ndim == 4 and target.shape == logits.shape, "cross_entropy", values, "[B,C,H,W] pair")


def _ce_forward(values, attrs):
    logits, target = values
    logp = log_softmax(logits, axis=1).astype(logits.dtype, copy=False)
    wpix = _pixel_weights(logits, attrs)
    loss = -(wpix * target * logp).sum()
    return np.asarray(loss, dtype=logits.dtype), (logp, wpix)


def _ce_backward(g, values, out, saved, attrs):
    logits, target = values
    logp, wpix = saved
    probs = np.exp(logp)
    grad_logits = g * wpix * (probs * target.sum(axis=1, keepdims=True) - target)
    grad_target = -g * wpix * logp
    return [grad_logits, grad_target]


register(OpSpec("cross_entropy", _ce_check, _ce_forward, _ce_backward, arity=2))


def _mse_check(values, attrs):
    a, b = values
    _require(a.shape == b.shape, "mse", values, "equal shapes")


def _mse_forward(values, attrs):
    a, b = values
    diff = a - b
    return np.asarray((diff * diff).mean(), dtype=a.dtype), diff


def _mse_backward(g, values, out, diff, attrs):
    grad = diff * diff.dtype.type(2.0 / diff.size) * g
    return [grad, -grad]


register(OpSpec("mse", _mse_check, _mse_forward, _mse_backward, arity=2))
