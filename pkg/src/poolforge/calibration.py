"""Contextual-prior calibration and entropy uncertainty.

Pre-trained mask-fillers over-predict some label words regardless of the
input, so raw label-word probabilities are divided by a prior estimated
from the pool itself: for every label, take the samples most confident
in that label, union them into a support set, and average their rows.
Dividing by the per-word prior and renormalizing yields the calibrated
class distribution whose entropy is the uncertainty score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DegenerateSampleError, ValidationError
from .validation import as_matrix, as_vector

__all__ = [
    "SupportSet",
    "build_support_set",
    "estimate_prior",
    "calibrate",
    "calibrate_matrix",
    "uncertainty",
    "entropy_rows",
    "ContextualCalibrator",
]

logger = logging.getLogger(__name__)

DEFAULT_SUPPORT_K = 100
DEFAULT_PRIOR_FLOOR = 1e-12


@dataclass(frozen=True)
class SupportSet:
    """Per-label top-k contributors plus their deduplicated union.

    ``per_label[j]`` holds the row indices whose column-j probability is
    largest (ties to the lower index), ``ids`` the sorted union. A row
    confident under several labels still contributes to the prior once.
    """

    ids: tuple[int, ...]
    per_label: tuple[tuple[int, ...], ...]


def build_support_set(word_probs: np.ndarray, k: int) -> SupportSet:
    """Select the top-``k`` rows per label column and union them."""
    if k <= 0:
        raise ValidationError(f"k: must be positive, got {k}")
    probs = as_matrix(word_probs, "word_probs")
    n, c = probs.shape
    if n < 1:
        raise ValidationError("word_probs: need at least one row")
    take = min(k, n)
    per_label = []
    for j in range(c):
        # np.lexsort's last key is primary: descending prob, then row index.
        order = np.lexsort((np.arange(n), -probs[:, j]))
        per_label.append(tuple(int(i) for i in order[:take]))
    union = sorted(set().union(*per_label))
    return SupportSet(ids=tuple(union), per_label=tuple(per_label))


def estimate_prior(word_probs: np.ndarray, support: SupportSet) -> np.ndarray:
    """Per-word prior: mean of the support rows."""
    if not support.ids:
        raise ValidationError("support set: empty")
    probs = as_matrix(word_probs, "word_probs")
    return probs[np.asarray(support.ids, dtype=np.int64)].mean(axis=0)


def _floored(prior: np.ndarray, floor: float) -> np.ndarray:
    if np.any(prior < floor):
        logger.warning(
            "prior floor applied: %d entries below %.3g", int((prior < floor).sum()), floor
        )
    return np.maximum(prior, floor)


def calibrate(
    raw: np.ndarray, prior: np.ndarray, *, floor: float = DEFAULT_PRIOR_FLOOR
) -> np.ndarray:
    """Calibrated class distribution: normalized raw-to-prior ratios."""
    raw = as_vector(raw, "raw")
    prior = as_vector(prior, "prior")
    if raw.shape != prior.shape:
        raise ValidationError(f"prior: shape {prior.shape} != raw shape {raw.shape}")
    ratios = raw / _floored(prior, floor)
    total = ratios.sum()
    if total <= 0.0:
        raise DegenerateSampleError("calibrate: all raw probabilities are zero")
    return ratios / total


def calibrate_matrix(
    word_probs: np.ndarray, prior: np.ndarray, *, floor: float = DEFAULT_PRIOR_FLOOR
) -> np.ndarray:
    """Row-wise :func:`calibrate` over a pool's probability matrix."""
    probs = as_matrix(word_probs, "word_probs")
    prior = as_vector(prior, "prior")
    if probs.shape[1] != prior.shape[0]:
        raise ValidationError(
            f"prior: {prior.shape[0]} entries, word_probs has {probs.shape[1]} columns"
        )
    ratios = probs / _floored(prior, floor)[None, :]
    totals = ratios.sum(axis=1)
    dead = np.flatnonzero(totals <= 0.0)
    if dead.size:
        raise DegenerateSampleError(
            f"calibrate: all raw probabilities are zero for row {int(dead[0])}"
        )
    return ratios / totals[:, None]


def uncertainty(dist: np.ndarray) -> float:
    """Entropy (natural log) of one calibrated distribution; 0*ln 0 := 0."""
    return float(entropy_rows(as_vector(dist, "dist")[None, :])[0])


def entropy_rows(dists: np.ndarray) -> np.ndarray:
    """Row-wise entropy in nats."""
    p = np.asarray(dists, dtype=np.float64)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


class ContextualCalibrator(BaseEstimator, TransformerMixin):
    """Estimator wrapper: fit the pool prior, transform rows to distributions.

    Parameters
    ----------
    k : top-k rows per label used to build the support set.
    prior_floor : lower bound applied to prior entries before division.
    """

    def __init__(self, k: int = DEFAULT_SUPPORT_K, prior_floor: float = DEFAULT_PRIOR_FLOOR):
        self.k = k
        self.prior_floor = prior_floor

    def fit(self, X, y=None):
        X = as_matrix(X, "word_probs")
        self.support_ = build_support_set(X, self.k)
        self.prior_ = estimate_prior(X, self.support_)
        return self

    def transform(self, X):
        if not hasattr(self, "prior_"):
            raise ValidationError("ContextualCalibrator: call fit before transform")
        return calibrate_matrix(X, self.prior_, floor=self.prior_floor)

    def uncertainty(self, X) -> np.ndarray:
        """Entropy of each calibrated row."""
        return entropy_rows(self.transform(X))
