"""Desk-scale synthetic pools.

Generates a Gaussian-mixture pool with oracle labels so the full loop
(and CI) can run hermetically: one well-separated component per class in
knowledge-feature space, a rotated noisy copy as encoder features, and
label-word probabilities produced by the toy mask readout over a linear
head, including a per-word bias so contextual calibration has real work
to do.
"""

from __future__ import annotations

import numpy as np

from .artifacts import PoolArtifacts
from .errors import ConfigError
from .fusion import synthetic_forward
from .rng import stream

__all__ = ["make_synthetic_pool"]


def make_synthetic_pool(
    seed: int,
    classes: int = 4,
    per_class: int = 500,
    d: int = 16,
    separation: float = 10.0,
    with_texts: bool = True,
) -> PoolArtifacts:
    """Build a labeled Gaussian-mixture pool of ``classes * per_class`` samples.

    Component centers sit on coordinate axes at distance ``separation``
    from the origin with unit spread, so components are recoverable by
    clustering whenever ``separation`` clearly exceeds the spread.
    """
    if classes < 2:
        raise ConfigError(f"classes: need at least 2, got {classes}")
    if per_class < 1:
        raise ConfigError(f"per_class: need at least 1, got {per_class}")
    if d < classes:
        raise ConfigError(f"d: need d >= classes to place centers, got d={d}")

    rng = stream(seed, "synth")
    n = classes * per_class
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)

    centers = np.zeros((classes, d))
    centers[np.arange(classes), np.arange(classes)] = separation

    knowledge = centers[labels] + rng.normal(0.0, 1.0, size=(n, d))

    rotation, _ = np.linalg.qr(rng.normal(size=(d, d)))
    encoder = knowledge @ rotation + rng.normal(0.0, 0.1, size=(n, d))

    # Linear head aligned with the centers, plus a fixed per-word bias the
    # calibration stage is expected to divide back out.
    head = centers.T * (3.0 / separation**2)
    bias = rng.normal(0.0, 0.75, size=classes)
    word_probs = np.empty((n, classes))
    logits_head = np.vstack([head, bias[None, :]])
    for i in range(n):
        template = np.concatenate([knowledge[i], [1.0]])[None, :]
        word_probs[i] = synthetic_forward(template, logits_head)

    texts = None
    if with_texts:
        texts = [f"synthetic sample {i} from component {labels[i]}" for i in range(n)]

    pool = PoolArtifacts(
        sample_ids=np.arange(n, dtype=np.int64),
        knowledge_features=knowledge.astype(np.float32),
        encoder_features=encoder.astype(np.float32),
        word_probs=word_probs.astype(np.float32),
        label_words=[f"word_{c}" for c in range(classes)],
        texts=texts,
        oracle_labels=labels,
    )
    return pool.validate()
