"""
Probabilistic quality of a predictive distribution: NLL, ECE and the
correlation between predictive entropy and errors

Probability fields are [B,C,H,W] (or [C,H,W]); truth is a class-index map
[B,H,W] (or [H,W]) or a LabelField.
"""
from typing import Dict, List, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from src.models.domain import LabelField
from src.models.errors import ShapeError

PROB_FLOOR = 1e-12
SIMPLEX_TOL = 1e-4

Truth = Union[np.ndarray, LabelField]


def _prepare(p_bar: np.ndarray, truth: Truth, op: str) -> Tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(p_bar, dtype=np.float64)
    labels = truth.indices if isinstance(truth, LabelField) else np.asarray(truth)
    if probs.ndim == 3:
        probs = probs[None]
    if labels.ndim == 2:
        labels = labels[None]
    if probs.ndim != 4 or labels.shape != probs.shape[:1] + probs.shape[2:]:
        raise ShapeError(op, [np.shape(p_bar), np.shape(labels)], "expected p [B,C,H,W] and truth [B,H,W]")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= probs.shape[1]:
        raise ValueError(f"{op}: truth labels outside [0, {probs.shape[1]})")
    return probs, labels.astype(np.int64)


def nll(p_bar: np.ndarray, truth: Truth) -> float:
    """
    Mean over pixels of -log p_bar[true class], probabilities floored at 1e-12

    Raises:
        ValueError: If any pixel's channel sum is off 1 by more than 1e-4
    """
    probs, labels = _prepare(p_bar, truth, "nll")
    off = np.abs(probs.sum(axis=1) - 1.0).max()
    if off > SIMPLEX_TOL:
        raise ValueError(f"nll: probabilities not normalized (max channel-sum error {off:.2e})")
    p_true = np.take_along_axis(probs, labels[:, None], axis=1)[:, 0]
    return float(-np.log(np.maximum(p_true, PROB_FLOOR)).mean())


def ece(p_bar: np.ndarray, truth: Truth, bins: int = 10, return_bins: bool = False):
    """
    Expected calibration error over equal-width confidence bins on [0, 1]

    Confidence is the max channel of p_bar, correctness is argmax == truth.
    Bin b covers (lower, upper]; the first bin also holds confidence 0.
    Empty bins contribute nothing.

    Args:
        p_bar: Predictive distribution
        truth: Reference labels
        bins: Number of bins (>= 1)
        return_bins: Also return per-bin rows

    Returns:
        ECE in [0, 1], or (ECE, rows) where each row has lower, upper,
        count, accuracy and confidence
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    probs, labels = _prepare(p_bar, truth, "ece")
    conf = probs.max(axis=1).ravel()
    correct = (probs.argmax(axis=1) == labels).ravel().astype(np.float64)
    n = conf.size

    idx = np.clip(np.ceil(conf * bins).astype(np.int64) - 1, 0, bins - 1)
    edges = np.linspace(0.0, 1.0, bins + 1)
    total = 0.0
    rows: List[Dict[str, float]] = []
    for b in range(bins):
        members = idx == b
        count = int(members.sum())
        acc = float(correct[members].mean()) if count else 0.0
        avg_conf = float(conf[members].mean()) if count else 0.0
        if count:
            total += count / n * abs(acc - avg_conf)
        rows.append({
            "lower": float(edges[b]),
            "upper": float(edges[b + 1]),
            "count": count,
            "accuracy": acc,
            "confidence": avg_conf,
        })
    total = float(min(max(total, 0.0), 1.0))
    return (total, rows) if return_bins else total


def predictive_entropy(p_bar: np.ndarray) -> np.ndarray:
    """Per-pixel entropy -sum_c p log p (nats); [B,C,H,W] -> [B,H,W], [C,H,W] -> [H,W]"""
    probs = np.asarray(p_bar, dtype=np.float64)
    if probs.ndim not in (3, 4):
        raise ShapeError("predictive_entropy", [probs.shape], "expected [B,C,H,W] or [C,H,W]")
    return -(probs * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=-3)


def err_uncert_corr(p_bar: np.ndarray, truth: Truth) -> Tuple[float, bool]:
    """
    Spearman correlation between predictive entropy and the 0/1 error map

    Ties take average ranks.

    Returns:
        (rho, degenerate) - degenerate is True, and rho 0.0, when either side
        has zero variance
    """
    probs, labels = _prepare(p_bar, truth, "err_uncert_corr")
    entropy = predictive_entropy(probs).ravel()
    errors = (probs.argmax(axis=1) != labels).ravel().astype(np.float64)
    if entropy.size < 2:
        raise ValueError("err_uncert_corr needs at least two pixels")
    ra = rankdata(entropy, method="average")
    rb = rankdata(errors, method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if denom == 0.0:
        return 0.0, True
    return float((ra * rb).sum() / denom), False
