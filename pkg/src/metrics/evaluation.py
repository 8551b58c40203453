"""
Per-case evaluation of an aggregated predictive distribution
"""
from typing import List, Tuple

import logging
import numpy as np

from src.metrics.calibration import ece, err_uncert_corr, nll
from src.metrics.segmentation import foreground_dice, majority_vote, per_class_dice
from src.models.domain import CaseResult

logger = logging.getLogger(__name__)


def evaluate_case(
    case_id: int,
    probs: np.ndarray,
    raters: np.ndarray,
    M: int,
    bins: int = 10,
) -> Tuple[CaseResult, List[dict]]:
    """
    Score one case against the raters' majority vote

    Args:
        case_id: Case identifier
        probs: Mean predictive probabilities [C,H,W]
        raters: Rater labels [R,H,W]
        M: Number of samples behind `probs`
        bins: ECE bin count

    Returns:
        (CaseResult, reliability rows of this case)
    """
    probs = np.asarray(probs, dtype=np.float64)
    C = probs.shape[0]
    truth = majority_vote(raters, C)
    mask = probs.argmax(axis=0)
    per_class = per_class_dice(mask, truth, C)
    ece_value, rows = ece(probs, truth, bins=bins, return_bins=True)
    corr, degenerate = err_uncert_corr(probs, truth)
    result = CaseResult(
        case_id=case_id,
        dsc_per_class=[float(v) for v in per_class],
        dsc=foreground_dice(mask, truth, C),
        nll=nll(probs, truth),
        ece=ece_value,
        corr=corr,
        corr_degenerate=degenerate,
        M=M,
    )
    logger.info(
        f"  case {case_id}: DSC {result.dsc:.3f} NLL {result.nll:.3f} ECE {result.ece:.3f} corr {result.corr:.3f}"
    )
    return result, rows


def pool_reliability(rows_per_case: List[List[dict]]) -> List[dict]:
    """Merge per-case reliability rows into dataset-level bins (count-weighted)"""
    if not rows_per_case:
        return []
    pooled: List[dict] = []
    for b, template in enumerate(rows_per_case[0]):
        count = sum(rows[b]["count"] for rows in rows_per_case)
        acc = sum(rows[b]["accuracy"] * rows[b]["count"] for rows in rows_per_case)
        conf = sum(rows[b]["confidence"] * rows[b]["count"] for rows in rows_per_case)
        pooled.append({
            "lower": template["lower"],
            "upper": template["upper"],
            "count": count,
            "accuracy": acc / count if count else 0.0,
            "confidence": conf / count if count else 0.0,
        })
    return pooled
