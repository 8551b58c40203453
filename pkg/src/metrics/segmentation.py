"""
Overlap metrics on class-index masks
"""
import numpy as np

from src.models.errors import ShapeError


def dice(pred: np.ndarray, truth: np.ndarray, c: int) -> float:
    """
    Dice similarity 2|P n G| / (|P| + |G|) for class c

    Both masks empty for c counts as perfect agreement (1.0).
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError("dice", [pred.shape, truth.shape])
    p = pred == c
    g = truth == c
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


def per_class_dice(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    return np.array([dice(pred, truth, c) for c in range(num_classes)])


def foreground_dice(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> float:
    """Mean Dice over the non-background classes 1..C-1"""
    return float(per_class_dice(pred, truth, num_classes)[1:].mean())


def majority_vote(raters: np.ndarray, num_classes: int) -> np.ndarray:
    """
    Per-pixel most frequent class over raters [R,H,W] -> [H,W]

    Ties go to the lowest class index.
    """
    raters = np.asarray(raters)
    counts = np.stack([(raters == c).sum(axis=0) for c in range(num_classes)])
    return counts.argmax(axis=0).astype(raters.dtype)
