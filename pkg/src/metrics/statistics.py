"""
Across-case aggregation and paired significance tests
"""
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from src.models.domain import CaseResult

SUMMARY_METRICS = ("dsc", "nll", "ece", "corr")


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """
    Paired t-test on per-case differences a - b

    Args:
        a: Metric per case for run A
        b: Same cases, same order, for run B

    Returns:
        (t statistic, two-sided p) with n - 1 degrees of freedom. All-zero
        differences give (0.0, 1.0); a constant nonzero difference gives an
        infinite t and p = 0.0
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired_t_test needs equal-length 1-D inputs, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("paired_t_test needs at least two pairs")
    d = a - b
    if not np.any(d):
        return 0.0, 1.0
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        return float(np.copysign(np.inf, mean)), 0.0
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), df=n - 1)
    return float(t), float(min(p, 1.0))


def summarize(results: Sequence[CaseResult]) -> Dict[str, Dict[str, float]]:
    """
    Mean and sample std (n - 1 denominator; 0 for a single case) of
    dsc, nll, ece and corr, in that order
    """
    if not results:
        raise ValueError("summarize needs at least one case")
    frame = pd.DataFrame([r.to_dict() for r in results])
    report: Dict[str, Dict[str, float]] = {}
    for metric in SUMMARY_METRICS:
        column = frame[metric].astype(np.float64)
        std = float(column.std(ddof=1)) if len(column) > 1 else 0.0
        report[metric] = {"mean": float(column.mean()), "std": std}
    return report
