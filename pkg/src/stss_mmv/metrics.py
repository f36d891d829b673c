"""Reconstruction error and support-recovery scores."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class ScoreReport:
    nmse: float
    precision: float
    recall: float
    f_measure: float


def nmse(X_true, X_hat):
    """``sum (X - X_hat)^2 / sum X^2`` over all entries."""
    X_true = np.asarray(X_true, float)
    denom = float(np.sum(X_true ** 2))
    if denom == 0.0:
        raise ConfigurationError("NMSE undefined for an all-zero signal")
    return float(np.sum((X_true - np.asarray(X_hat, float)) ** 2)) / denom


def support_f_measure(Z_true, support_prob, threshold=0.5, X_true=None, X_hat=None):
    """Precision, recall and F-measure of the MAP support ``prob > threshold``.

    Conventions when a ratio is 0/0: an empty estimate scores precision 1,
    an empty truth scores recall 1; F is 1 when both supports are empty and
    0 when only one is. If `X_true` and `X_hat` are given the NMSE is filled
    in, otherwise it is NaN.
    """
    Z = np.asarray(Z_true).astype(bool)
    Zhat = np.asarray(support_prob) > threshold
    tp = int(np.count_nonzero(Z & Zhat))
    fp = int(np.count_nonzero(~Z & Zhat))
    fn = int(np.count_nonzero(Z & ~Zhat))
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    if tp + fp == 0 and tp + fn == 0:
        f = 1.0
    elif tp == 0:
        f = 0.0
    else:
        f = 2.0 * precision * recall / (precision + recall)
    err = nmse(X_true, X_hat) if X_true is not None else float("nan")
    return ScoreReport(err, precision, recall, f)
