"""Selected-batch analysis metrics.

Quantifies what a query strategy actually picked: class balance (ratio
and KL divergence against the pool's label frequencies), feature-space
diversity and representativeness, mean predictive entropy, and a
Jensen-Shannon alignment measure between predictive distributions.

Degenerate inputs (a class with zero picks, identical points) map to an
explicit overflow sentinel rather than a silent infinity; JSON exports
spell it as the string ``"overflow"``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import load_artifacts
from .calibration import (
    DEFAULT_SUPPORT_K,
    build_support_set,
    calibrate_matrix,
    entropy_rows,
    estimate_prior,
)
from .errors import ValidationError
from .validation import as_matrix, as_vector, check_distribution

__all__ = [
    "OVERFLOW",
    "SelectionAnalysis",
    "imbalance",
    "label_divergence",
    "batch_diversity",
    "representativeness",
    "batch_uncertainty",
    "js_divergence",
    "metric_to_json",
    "analyze_run",
]

OVERFLOW = float("inf")


def metric_to_json(value: float) -> float | str:
    """JSON-safe rendering: the overflow sentinel becomes ``"overflow"``."""
    return "overflow" if value == OVERFLOW else float(value)


@dataclass
class SelectionAnalysis:
    """Metric bundle for one selected batch."""

    imb: float
    ldd: float
    div: float
    rep: float
    unc: float
    counts: list[int]

    def to_json(self) -> dict:
        return {
            "imb": metric_to_json(self.imb),
            "ldd": metric_to_json(self.ldd),
            "div": metric_to_json(self.div),
            "rep": metric_to_json(self.rep),
            "unc": metric_to_json(self.unc),
            "counts": list(self.counts),
        }


def imbalance(counts) -> float:
    """Largest-to-smallest class count ratio; sentinel when a class is empty."""
    arr = np.asarray(counts, dtype=np.int64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValidationError("counts: need per-class counts for at least 2 classes")
    if arr.min() < 0:
        raise ValidationError("counts: negative count")
    if arr.sum() == 0:
        raise ValidationError("counts: all counts are zero")
    if arr.min() == 0:
        return OVERFLOW
    return float(arr.max()) / float(arr.min())


def label_divergence(q, p) -> float:
    """KL divergence of selected frequencies from true frequencies (nats)."""
    q = check_distribution(q, "q")
    p = as_vector(p, "p")
    if p.shape != q.shape:
        raise ValidationError(f"p: shape {p.shape} != q shape {q.shape}")
    if np.any(p <= 0.0):
        raise ValidationError("p: true frequencies must be entrywise positive")
    terms = np.where(q > 0.0, q * np.log(np.where(q > 0.0, q, 1.0) / p), 0.0)
    return float(terms.sum())


def _min_dists_to(selected: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """For each pool point, distance to its nearest selected point."""
    mins = np.full(pool.shape[0], np.inf)
    for row in selected:
        diff = pool - row[None, :]
        mins = np.minimum(mins, np.sqrt(np.einsum("ij,ij->i", diff, diff)))
    return mins


def batch_diversity(selected_features, pool_features) -> float:
    """Reciprocal of the pool's mean distance to the nearest selected point."""
    selected = as_matrix(selected_features, "selected_features")
    pool = as_matrix(pool_features, "pool_features")
    if selected.shape[0] == 0:
        raise ValidationError("selected_features: empty selection")
    if pool.shape[0] == 0:
        raise ValidationError("pool_features: empty pool")
    if selected.shape[1] != pool.shape[1]:
        raise ValidationError("selected_features: dimension mismatch with pool")
    mean_dist = float(_min_dists_to(selected, pool).mean())
    if mean_dist == 0.0:
        return OVERFLOW
    return 1.0 / mean_dist


def representativeness(selected_features, pool_features, k: int = 10) -> float:
    """Mean inverse distance from each selected point to its pool neighborhood.

    Each selected point contributes 1 over the mean Euclidean distance to
    its ``k`` most similar pool points; one exact zero-distance match (the
    point itself, when the selection comes from the pool) is excluded.
    A zero mean distance yields the overflow sentinel.
    """
    selected = as_matrix(selected_features, "selected_features")
    pool = as_matrix(pool_features, "pool_features")
    if selected.shape[0] == 0:
        raise ValidationError("selected_features: empty selection")
    if k < 1:
        raise ValidationError(f"k: must be >= 1, got {k}")
    if pool.shape[0] <= k:
        raise ValidationError(f"pool_features: need more than k={k} points")
    inv = []
    for row in selected:
        diff = pool - row[None, :]
        dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        dists = np.sort(dists)
        if dists[0] == 0.0:
            dists = dists[1:]
        mean_dist = float(dists[:k].mean())
        if mean_dist == 0.0:
            return OVERFLOW
        inv.append(1.0 / mean_dist)
    return float(np.mean(inv))


def batch_uncertainty(dists) -> float:
    """Mean entropy (nats) of the selected samples' distributions."""
    matrix = as_matrix(dists, "dists")
    if matrix.shape[0] == 0:
        raise ValidationError("dists: empty batch")
    return float(entropy_rows(matrix).mean())


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence (natural log), symmetric and in [0, ln 2]."""
    p = check_distribution(p, "p")
    q = check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValidationError(f"q: support size {q.shape} != p support {p.shape}")
    m = 0.5 * (p + q)

    def kl(a: np.ndarray) -> float:
        # a > 0 implies m >= a/2 > 0, so the guard value 1.0 is never used
        # where the term survives.
        terms = np.where(
            a > 0.0,
            a * (np.log(np.where(a > 0.0, a, 1.0)) - np.log(np.where(m > 0.0, m, 1.0))),
            0.0,
        )
        return float(terms.sum())

    return 0.5 * kl(p) + 0.5 * kl(q)


# ---------------------------------------------------------------------------
# run-level analysis
# ---------------------------------------------------------------------------

_TABLE_COLUMNS = ("round", "imb", "ldd", "div", "rep", "unc", "js")


def _cell(value) -> str:
    if value is None:
        return "n/a"
    if value == OVERFLOW:
        return "overflow"
    return f"{value:.6f}" if isinstance(value, float) else str(value)


def analyze_run(run_dir: str | Path, reference_path: str | Path,
                k: int = 10) -> list[dict]:
    """Per-round selection analysis against a reference artifact set.

    Feature-space metrics (div, rep) and batch uncertainty are measured
    in the reference artifacts (the fully-trained stand-in); class-
    balance metrics use the labels assigned during the run, with true
    frequencies taken from the round snapshot's oracle labels when
    present. ``js`` is the mean Jensen-Shannon divergence between each
    round snapshot's predictive distributions and the reference's, over
    their common ids.

    Results are appended under a ``metrics`` key in each round's
    ``summary.json`` and tabulated in ``analysis.tsv``.
    """
    from .loop import ALState  # local import keeps module deps one-way

    run_dir = Path(run_dir)
    state = ALState.load(run_dir)
    if state.round_index == 0:
        raise ValidationError("analyze: run has no completed rounds")
    reference = load_artifacts(reference_path)
    ref_lookup = reference.row_of()

    ref_probs = reference.word_probs.astype(np.float64)
    prior = estimate_prior(ref_probs, build_support_set(ref_probs, DEFAULT_SUPPORT_K))
    ref_dists = calibrate_matrix(ref_probs, prior)
    row_sums = ref_probs.sum(axis=1, keepdims=True)
    if np.any(row_sums <= 0.0):
        raise ValidationError("reference word_probs: all-zero row")
    ref_pred = ref_probs / row_sums

    assigned = state.labeled.labels_by_id()
    rows = []
    for i in range(state.round_index):
        snapshot = load_artifacts(state.artifacts_dir(i))
        summary_path = state.round_dir(i) / "summary.json"
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        selected = [int(s) for s in summary["selected_ids"]]
        labeled_before = {
            e.sample_id
            for e in state.labeled.entries[: state.initial_size + i * state.cfg.b]
        }
        candidates = sorted(set(int(s) for s in snapshot.sample_ids) - labeled_before)

        counts = np.bincount(
            [assigned[sid] for sid in selected], minlength=snapshot.c
        )
        imb = imbalance(counts)
        ldd = None
        if snapshot.oracle_labels is not None:
            true_counts = np.bincount(snapshot.oracle_labels, minlength=snapshot.c)
            if true_counts.min() > 0:
                ldd = label_divergence(counts / counts.sum(),
                                       true_counts / true_counts.sum())

        def ref_rows(ids):
            missing = [sid for sid in ids if sid not in ref_lookup]
            if missing:
                raise ValidationError(
                    f"reference artifacts: missing id {missing[0]}"
                )
            return np.array([ref_lookup[sid] for sid in ids], dtype=np.int64)

        sel_rows = ref_rows(selected)
        cand_rows = ref_rows(candidates)
        sel_enc = reference.encoder_features[sel_rows].astype(np.float64)
        cand_enc = reference.encoder_features[cand_rows].astype(np.float64)
        div = batch_diversity(sel_enc, cand_enc)
        rep = representativeness(sel_enc, cand_enc, k)
        unc = batch_uncertainty(ref_dists[sel_rows])

        snap_probs = snapshot.word_probs.astype(np.float64)
        snap_sums = snap_probs.sum(axis=1)
        common = [sid for sid in snapshot.sample_ids if int(sid) in ref_lookup]
        snap_lookup = snapshot.row_of()
        js_values = []
        for sid in common:
            r = snap_lookup[int(sid)]
            if snap_sums[r] <= 0.0:
                raise ValidationError(f"snapshot word_probs: all-zero row for id {sid}")
            js_values.append(
                js_divergence(snap_probs[r] / snap_sums[r], ref_pred[ref_lookup[int(sid)]])
            )
        js = float(np.mean(js_values))

        record = {
            "round": i,
            "imb": imb,
            "ldd": ldd,
            "div": div,
            "rep": rep,
            "unc": unc,
            "js": js,
            "counts": [int(x) for x in counts],
        }
        rows.append(record)

        summary["metrics"] = {
            "imb": metric_to_json(imb),
            "ldd": None if ldd is None else metric_to_json(ldd),
            "div": metric_to_json(div),
            "rep": metric_to_json(rep),
            "unc": metric_to_json(unc),
            "js": metric_to_json(js),
            "counts": [int(x) for x in counts],
            "feature_space": "reference.encoder_features",
        }
        summary_path.write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    table_lines = ["\t".join(_TABLE_COLUMNS)]
    for record in rows:
        table_lines.append(
            "\t".join(_cell(record[col]) for col in _TABLE_COLUMNS)
        )
    (run_dir / "analysis.tsv").write_text(
        "".join(line + "\n" for line in table_lines), encoding="utf-8"
    )
    return rows
