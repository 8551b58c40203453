"""Segmentation accuracy, calibration and significance testing"""
from src.metrics.segmentation import dice, per_class_dice, foreground_dice, majority_vote
from src.metrics.calibration import nll, ece, err_uncert_corr, predictive_entropy
from src.metrics.statistics import paired_t_test, summarize
from src.metrics.evaluation import evaluate_case, pool_reliability

__all__ = [
    "dice",
    "per_class_dice",
    "foreground_dice",
    "majority_vote",
    "nll",
    "ece",
    "err_uncert_corr",
    "predictive_entropy",
    "paired_t_test",
    "summarize",
    "evaluate_case",
    "pool_reliability",
]
