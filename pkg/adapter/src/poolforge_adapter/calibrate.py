"""Adapter-side calibration, written independently of the engine.

Used to cross-check the engine's calibrated distributions against a
second implementation (plain Python loops over the same definitions:
per-label top-k support set, averaged prior, ratio normalization).
"""

from __future__ import annotations

import numpy as np


def calibrated_distributions(word_probs: np.ndarray, k: int = 100,
                             floor: float = 1e-12) -> np.ndarray:
    probs = np.asarray(word_probs, dtype=np.float64)
    n, c = probs.shape
    take = min(k, n)

    support: set[int] = set()
    for j in range(c):
        ranked = sorted(range(n), key=lambda i: (-probs[i, j], i))
        support.update(ranked[:take])

    prior = [0.0] * c
    for j in range(c):
        prior[j] = sum(probs[i, j] for i in sorted(support)) / len(support)

    out = np.empty((n, c))
    for i in range(n):
        ratios = [probs[i, j] / max(prior[j], floor) for j in range(c)]
        total = sum(ratios)
        out[i] = [r / total for r in ratios]
    return out
