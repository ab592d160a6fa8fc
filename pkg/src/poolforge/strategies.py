"""Batch query strategies.

Every strategy consumes one pool snapshot plus the current labeled set
and returns a :class:`BatchReport` naming exactly ``b`` previously
unlabeled samples. Unlabeled candidates are the snapshot ids minus the
labeled ids; the labeled rows stay in the snapshot so distance-based
strategies can see their features.

The joint strategy scores each candidate with a weighted sum of
calibrated-entropy uncertainty and mean-KNN-distance local diversity,
clusters the candidates' knowledge features into ``b`` groups, and takes
the top-scoring member of each group. Baselines: calibrated entropy,
least confidence, k-means over L2-normalized encoder features, and
uniform random.

Determinism contract: identical (snapshot, labeled set, config) produce
identical reports; every ranking tie breaks toward the lower sample id.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .artifacts import LabeledSet, PoolArtifacts
from .calibration import (
    DEFAULT_PRIOR_FLOOR,
    DEFAULT_SUPPORT_K,
    build_support_set,
    calibrate_matrix,
    entropy_rows,
    estimate_prior,
)
from .diversity import (
    DEFAULT_KMEANS_MAX_ITERS,
    DEFAULT_KMEANS_TOL,
    build_neighbor_index,
    kmeans_pp,
    local_diversity,
)
from .errors import ConfigError, StrategyError
from .fusion import ATTN_SCALES
from .rng import derive_seed, stream

__all__ = [
    "StrategyConfig",
    "ScoreRecord",
    "BatchReport",
    "joint_score",
    "QueryStrategy",
    "JointStrategy",
    "EntropyStrategy",
    "LeastConfidenceStrategy",
    "EncoderKMeansStrategy",
    "RandomStrategy",
    "STRATEGIES",
    "make_strategy",
]


@dataclass
class StrategyConfig:
    """Knobs shared by the selection pipeline.

    ``lam`` weighs uncertainty against local diversity in the joint
    score; ``k`` sizes the calibration support set; ``k_prime`` is the
    labeled-neighbor count for local diversity.
    """

    strategy: str = "joint"
    b: int = 32
    lam: float = 0.9
    k: int = DEFAULT_SUPPORT_K
    k_prime: int = 10
    seed: int = 0
    kmeans_tol: float = DEFAULT_KMEANS_TOL
    kmeans_max_iters: int = DEFAULT_KMEANS_MAX_ITERS
    attn_scale: str = "head_d"
    prior_floor: float = DEFAULT_PRIOR_FLOOR

    def validate(self) -> "StrategyConfig":
        if self.b < 1:
            raise ConfigError(f"b: batch size must be >= 1, got {self.b}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam: must lie in [0, 1], got {self.lam}")
        if self.k < 1:
            raise ConfigError(f"k: support size must be >= 1, got {self.k}")
        if self.k_prime < 1:
            raise ConfigError(f"k_prime: must be >= 1, got {self.k_prime}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"strategy: unknown name {self.strategy!r}; "
                f"choose from {sorted(STRATEGIES)}"
            )
        if self.attn_scale not in ATTN_SCALES:
            raise ConfigError(f"attn_scale: {self.attn_scale!r} not in {ATTN_SCALES}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StrategyConfig":
        return cls(**data).validate()


@dataclass(frozen=True)
class ScoreRecord:
    """Per-candidate audit record.

    ``s`` is the strategy's own ranking key (joint score for the joint
    strategy, entropy for entropy, max-class probability for least
    confidence, distance-to-centroid for encoder k-means; random leaves
    it null). Fields that a strategy does not compute stay null.
    """

    id: int
    u: Optional[float]
    d: Optional[float]
    s: Optional[float]
    cluster: Optional[int]


@dataclass
class BatchReport:
    """Selected batch plus every intermediate score for auditability."""

    selected_ids: list[int]
    records: list[ScoreRecord]
    strategy: str
    round_index: int
    seed: int

    def validate(self, labeled: LabeledSet, b: int) -> "BatchReport":
        if len(self.selected_ids) != b:
            raise StrategyError(
                f"batch: selected {len(self.selected_ids)} ids, expected {b}"
            )
        if len(set(self.selected_ids)) != len(self.selected_ids):
            raise StrategyError("batch: duplicate selected ids")
        overlap = set(self.selected_ids) & set(labeled.ids)
        if overlap:
            raise StrategyError(f"batch: ids already labeled: {sorted(overlap)}")
        return self

    def jsonl(self) -> str:
        lines = []
        for r in self.records:
            lines.append(json.dumps(
                {"id": r.id, "u": r.u, "d": r.d, "s": r.s, "cluster": r.cluster}
            ))
        return "".join(line + "\n" for line in lines)

    def summary(self) -> dict:
        return {
            "strategy": self.strategy,
            "round": self.round_index,
            "seed": self.seed,
            "b": len(self.selected_ids),
            "selected_ids": list(self.selected_ids),
        }

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "batch_report.jsonl").write_text(self.jsonl(), encoding="utf-8")
        (directory / "summary.json").write_text(
            json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @staticmethod
    def read_summary(directory: str | Path) -> dict:
        return json.loads((Path(directory) / "summary.json").read_text(encoding="utf-8"))


def joint_score(u: float, d_local: float, lam: float) -> float:
    """Weighted mix of uncertainty and local diversity."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lam: must lie in [0, 1], got {lam}")
    return lam * u + (1.0 - lam) * d_local


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------

class QueryStrategy(BaseEstimator):
    """Base class: candidate bookkeeping shared by all strategies."""

    name = ""

    def select(self, pool: PoolArtifacts, labeled: LabeledSet,
               round_index: int = 0) -> BatchReport:
        raise NotImplementedError

    def _candidate_rows(self, pool: PoolArtifacts, labeled: LabeledSet,
                        b: int) -> np.ndarray:
        """Rows of unlabeled candidates, in ascending sample-id order."""
        if pool.n == 0:
            raise StrategyError("pool: empty snapshot")
        labeled_ids = set(labeled.ids)
        order = np.argsort(pool.sample_ids, kind="stable")
        rows = np.array(
            [r for r in order if int(pool.sample_ids[r]) not in labeled_ids],
            dtype=np.int64,
        )
        if rows.size < b:
            raise StrategyError(
                f"pool: {rows.size} unlabeled candidates, need b={b}"
            )
        return rows

    @staticmethod
    def _pick_top(ids: np.ndarray, key_desc: np.ndarray, b: int) -> list[int]:
        """Top-``b`` ids by descending key; ties to the lower id."""
        order = np.lexsort((ids, -key_desc))
        return sorted(int(i) for i in ids[order[:b]])


class JointStrategy(QueryStrategy):
    """Cluster candidates globally, take each cluster's best joint score."""

    name = "joint"

    def __init__(self, b: int = 32, lam: float = 0.9, k: int = DEFAULT_SUPPORT_K,
                 k_prime: int = 10, seed: int = 0,
                 kmeans_tol: float = DEFAULT_KMEANS_TOL,
                 kmeans_max_iters: int = DEFAULT_KMEANS_MAX_ITERS,
                 prior_floor: float = DEFAULT_PRIOR_FLOOR):
        self.b = b
        self.lam = lam
        self.k = k
        self.k_prime = k_prime
        self.seed = seed
        self.kmeans_tol = kmeans_tol
        self.kmeans_max_iters = kmeans_max_iters
        self.prior_floor = prior_floor

    def select(self, pool, labeled, round_index=0):
        if len(labeled) == 0:
            raise StrategyError("joint: labeled set is empty; seed the run first")
        labeled.check_against(pool)
        rows = self._candidate_rows(pool, labeled, self.b)
        ids = pool.sample_ids[rows]

        word_probs = pool.word_probs[rows].astype(np.float64)
        support = build_support_set(word_probs, self.k)
        prior = estimate_prior(word_probs, support)
        dists = calibrate_matrix(word_probs, prior, floor=self.prior_floor)
        u = entropy_rows(dists)

        labeled_rows = pool.rows_for(sorted(labeled.ids))
        index = build_neighbor_index(pool.knowledge_features[labeled_rows])
        knowledge = pool.knowledge_features[rows].astype(np.float64)
        d = np.array(
            [local_diversity(index, knowledge[i], self.k_prime)
             for i in range(rows.size)]
        )
        s = self.lam * u + (1.0 - self.lam) * d

        clustering = kmeans_pp(
            knowledge, self.b, derive_seed(self.seed, "kmeans"),
            tol=self.kmeans_tol, max_iters=self.kmeans_max_iters,
        )
        selected = []
        for j in range(self.b):
            members = np.flatnonzero(clustering.assignments == j)
            best = members[np.lexsort((ids[members], -s[members]))[0]]
            selected.append(int(ids[best]))

        records = [
            ScoreRecord(int(ids[i]), float(u[i]), float(d[i]), float(s[i]),
                        int(clustering.assignments[i]))
            for i in range(rows.size)
        ]
        report = BatchReport(sorted(selected), records, self.name, round_index, self.seed)
        return report.validate(labeled, self.b)


class EntropyStrategy(QueryStrategy):
    """Highest calibrated-entropy candidates."""

    name = "entropy"

    def __init__(self, b: int = 32, k: int = DEFAULT_SUPPORT_K, seed: int = 0,
                 prior_floor: float = DEFAULT_PRIOR_FLOOR):
        self.b = b
        self.k = k
        self.seed = seed
        self.prior_floor = prior_floor

    def select(self, pool, labeled, round_index=0):
        rows = self._candidate_rows(pool, labeled, self.b)
        ids = pool.sample_ids[rows]
        word_probs = pool.word_probs[rows].astype(np.float64)
        prior = estimate_prior(word_probs, build_support_set(word_probs, self.k))
        u = entropy_rows(calibrate_matrix(word_probs, prior, floor=self.prior_floor))
        selected = self._pick_top(ids, u, self.b)
        records = [
            ScoreRecord(int(ids[i]), float(u[i]), None, float(u[i]), None)
            for i in range(rows.size)
        ]
        report = BatchReport(selected, records, self.name, round_index, self.seed)
        return report.validate(labeled, self.b)


class LeastConfidenceStrategy(QueryStrategy):
    """Lowest max-class probability of the calibrated distribution."""

    name = "least_confidence"

    def __init__(self, b: int = 32, k: int = DEFAULT_SUPPORT_K, seed: int = 0,
                 prior_floor: float = DEFAULT_PRIOR_FLOOR):
        self.b = b
        self.k = k
        self.seed = seed
        self.prior_floor = prior_floor

    def select(self, pool, labeled, round_index=0):
        rows = self._candidate_rows(pool, labeled, self.b)
        ids = pool.sample_ids[rows]
        word_probs = pool.word_probs[rows].astype(np.float64)
        prior = estimate_prior(word_probs, build_support_set(word_probs, self.k))
        maxprob = calibrate_matrix(
            word_probs, prior, floor=self.prior_floor
        ).max(axis=1)
        selected = self._pick_top(ids, -maxprob, self.b)
        records = [
            ScoreRecord(int(ids[i]), None, None, float(maxprob[i]), None)
            for i in range(rows.size)
        ]
        report = BatchReport(selected, records, self.name, round_index, self.seed)
        return report.validate(labeled, self.b)


class EncoderKMeansStrategy(QueryStrategy):
    """k-means over L2-normalized encoder features; nearest to each centroid."""

    name = "kmeans_encoder"

    def __init__(self, b: int = 32, seed: int = 0,
                 kmeans_tol: float = DEFAULT_KMEANS_TOL,
                 kmeans_max_iters: int = DEFAULT_KMEANS_MAX_ITERS):
        self.b = b
        self.seed = seed
        self.kmeans_tol = kmeans_tol
        self.kmeans_max_iters = kmeans_max_iters

    def select(self, pool, labeled, round_index=0):
        rows = self._candidate_rows(pool, labeled, self.b)
        ids = pool.sample_ids[rows]
        enc = pool.encoder_features[rows].astype(np.float64)
        norms = np.sqrt((enc ** 2).sum(axis=1))
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise StrategyError(
                f"encoder_features: zero-norm row for id {int(ids[zero[0]])}"
            )
        normalized = enc / norms[:, None]
        clustering = kmeans_pp(
            normalized, self.b, derive_seed(self.seed, "kmeans"),
            tol=self.kmeans_tol, max_iters=self.kmeans_max_iters,
        )
        diff = normalized - clustering.centroids[clustering.assignments]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        selected = []
        for j in range(self.b):
            members = np.flatnonzero(clustering.assignments == j)
            best = members[np.lexsort((ids[members], dist[members]))[0]]
            selected.append(int(ids[best]))
        records = [
            ScoreRecord(int(ids[i]), None, None, float(dist[i]),
                        int(clustering.assignments[i]))
            for i in range(rows.size)
        ]
        report = BatchReport(sorted(selected), records, self.name, round_index, self.seed)
        return report.validate(labeled, self.b)


class RandomStrategy(QueryStrategy):
    """Uniform draw without replacement from the candidates."""

    name = "random"

    def __init__(self, b: int = 32, seed: int = 0):
        self.b = b
        self.seed = seed

    def select(self, pool, labeled, round_index=0):
        rows = self._candidate_rows(pool, labeled, self.b)
        ids = pool.sample_ids[rows]
        rng = stream(self.seed, "random-strategy")
        picked = rng.choice(ids, size=self.b, replace=False)
        records = [ScoreRecord(int(i), None, None, None, None) for i in ids]
        report = BatchReport(
            sorted(int(i) for i in picked), records, self.name, round_index, self.seed
        )
        return report.validate(labeled, self.b)


STRATEGIES: dict[str, type[QueryStrategy]] = {
    cls.name: cls
    for cls in (JointStrategy, EntropyStrategy, LeastConfidenceStrategy,
                EncoderKMeansStrategy, RandomStrategy)
}


def make_strategy(cfg: StrategyConfig) -> QueryStrategy:
    """Instantiate the configured strategy with the fields it uses."""
    cfg.validate()
    common = {"b": cfg.b, "seed": cfg.seed}
    if cfg.strategy == "joint":
        return JointStrategy(
            lam=cfg.lam, k=cfg.k, k_prime=cfg.k_prime,
            kmeans_tol=cfg.kmeans_tol, kmeans_max_iters=cfg.kmeans_max_iters,
            prior_floor=cfg.prior_floor, **common,
        )
    if cfg.strategy in ("entropy", "least_confidence"):
        return STRATEGIES[cfg.strategy](
            k=cfg.k, prior_floor=cfg.prior_floor, **common
        )
    if cfg.strategy == "kmeans_encoder":
        return EncoderKMeansStrategy(
            kmeans_tol=cfg.kmeans_tol, kmeans_max_iters=cfg.kmeans_max_iters, **common
        )
    return RandomStrategy(**common)
