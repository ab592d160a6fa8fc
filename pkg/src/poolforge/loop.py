"""Active-learning loop orchestration.

Drives the round cycle: query a batch with the configured strategy,
obtain labels (stored oracle labels or a human annotation session), fold
the batch into the labeled set, refresh the model artifacts (external
adapter subprocess, or the built-in synthetic backend), persist
everything, advance.

Persistence layout under the run directory::

    state.json               round counter, labeled set, remaining pool ids
    artifacts/<i>/           snapshot consumed by round i (0 = initial)
    rounds/<i>/              batch_report.jsonl + summary.json
    run_summary.json         written when the loop finishes

``state.json`` is written last via write-new-then-rename, so a crash
mid-round leaves the previous round intact and re-running resumes
deterministically from there.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .artifacts import (
    LabeledSet,
    PoolArtifacts,
    load_artifacts,
    write_artifacts,
)
from .errors import AdapterError, AnnotationError, ConfigError, StrategyError
from .fusion import synthetic_forward
from .rng import derive_seed, stream
from .strategies import BatchReport, StrategyConfig, make_strategy

__all__ = [
    "ALState",
    "AdapterHandle",
    "init_run",
    "run_round",
    "run_loop",
    "oracle_label",
    "refresh_word_probs",
]

logger = logging.getLogger(__name__)

STATE_NAME = "state.json"


@dataclass
class AdapterHandle:
    """How to invoke the external model adapter.

    The command is executed with the exchange directory appended as its
    final argument; the adapter must leave ``response.json`` and a fresh
    ``artifacts/`` directory there.
    """

    command: str
    exchange_dir: Path
    timeout_s: float = 600.0


@dataclass
class ALState:
    """Mutable loop state; persisted as ``state.json``."""

    round_index: int
    total_rounds: int
    initial_size: int
    seed: int
    labeled: LabeledSet
    pool_ids: list[int]
    cfg: StrategyConfig
    run_dir: Path
    accuracies: list = field(default_factory=list)

    def artifacts_dir(self, round_index: int) -> Path:
        return self.run_dir / "artifacts" / str(round_index)

    def round_dir(self, round_index: int) -> Path:
        return self.run_dir / "rounds" / str(round_index)

    def to_json(self) -> dict:
        return {
            "round": self.round_index,
            "total_rounds": self.total_rounds,
            "initial_size": self.initial_size,
            "seed": self.seed,
            "labeled": self.labeled.to_json(),
            "pool_ids": list(self.pool_ids),
            "config": self.cfg.to_dict(),
            "accuracies": list(self.accuracies),
        }

    def persist(self) -> None:
        """Atomic state write: new file, then rename over the old one."""
        path = self.run_dir / STATE_NAME
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(
            json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        os.replace(tmp, path)

    @classmethod
    def load(cls, run_dir: str | os.PathLike) -> "ALState":
        run_dir = Path(run_dir)
        data = json.loads((run_dir / STATE_NAME).read_text(encoding="utf-8"))
        return cls(
            round_index=int(data["round"]),
            total_rounds=int(data["total_rounds"]),
            initial_size=int(data["initial_size"]),
            seed=int(data["seed"]),
            labeled=LabeledSet.from_json(data["labeled"]),
            pool_ids=[int(i) for i in data["pool_ids"]],
            cfg=StrategyConfig.from_dict(data["config"]),
            run_dir=run_dir,
            accuracies=list(data["accuracies"]),
        )


def init_run(
    pool_path: str | os.PathLike,
    cfg: StrategyConfig,
    t: int,
    initial_size: int,
    seed: int,
    run_dir: str | os.PathLike,
    seed_entries: list[tuple[int, int]] | None = None,
) -> ALState:
    """Create a run directory with a seeded labeled set.

    The initial labeled ids are drawn uniformly (stream ``init``) when the
    pool carries oracle labels; otherwise ``seed_entries`` must supply
    (id, label) pairs.
    """
    cfg.validate()
    if t < 0:
        raise ConfigError(f"rounds: must be >= 0, got {t}")
    if initial_size < 1:
        raise ConfigError(f"initial: must be >= 1, got {initial_size}")
    artifacts = load_artifacts(pool_path)
    needed = initial_size + t * cfg.b
    if artifacts.n < needed:
        raise ConfigError(
            f"pool: {artifacts.n} samples cannot cover initial={initial_size} "
            f"plus {t} rounds of b={cfg.b} (need {needed})"
        )

    labeled = LabeledSet()
    if artifacts.oracle_labels is not None:
        rng = stream(seed, "init")
        all_ids = np.sort(artifacts.sample_ids)
        chosen = np.sort(rng.choice(all_ids, size=initial_size, replace=False))
        lookup = artifacts.row_of()
        for sid in chosen:
            labeled.add(int(sid), int(artifacts.oracle_labels[lookup[int(sid)]]), "seed")
    elif seed_entries is not None:
        if len(seed_entries) != initial_size:
            raise ConfigError(
                f"seed labels: got {len(seed_entries)} entries, expected {initial_size}"
            )
        for sid, label in seed_entries:
            labeled.add(int(sid), int(label), "seed")
        labeled.check_against(artifacts)
    else:
        raise ConfigError(
            "pool has no oracle labels and no seed labels were provided"
        )

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    state = ALState(
        round_index=0,
        total_rounds=t,
        initial_size=initial_size,
        seed=seed,
        labeled=labeled,
        pool_ids=sorted(set(int(i) for i in artifacts.sample_ids) - set(labeled.ids)),
        cfg=cfg,
        run_dir=run_dir,
    )
    write_artifacts(artifacts, state.artifacts_dir(0))
    state.persist()
    return state


def oracle_label(artifacts: PoolArtifacts, ids: list[int]) -> list[tuple[int, int]]:
    """Ground-truth lookup, returned in ascending id order."""
    if artifacts.oracle_labels is None:
        raise AnnotationError("oracle labels: not present in artifacts")
    lookup = artifacts.row_of()
    out = []
    for sid in sorted(int(i) for i in ids):
        if sid not in lookup:
            raise AnnotationError(f"oracle labels: unknown id {sid}")
        out.append((sid, int(artifacts.oracle_labels[lookup[sid]])))
    return out


def refresh_word_probs(artifacts: PoolArtifacts, labeled: LabeledSet) -> PoolArtifacts:
    """Synthetic model update: least-squares head refit, mask readout per row.

    Fits a linear head from labeled knowledge features onto one-hot
    labels (closed form, minimum-norm), then regenerates every sample's
    label-word probabilities through the toy mask readout. Features, ids,
    texts, and oracle labels pass through unchanged.
    """
    if len(labeled) == 0:
        raise StrategyError("synthetic refresh: labeled set is empty")
    rows = artifacts.rows_for(sorted(labeled.ids))
    h = artifacts.knowledge_features[rows].astype(np.float64)
    labels_by_id = labeled.labels_by_id()
    y = np.zeros((rows.size, artifacts.c))
    for i, sid in enumerate(sorted(labeled.ids)):
        y[i, labels_by_id[sid]] = 1.0
    head, *_ = np.linalg.lstsq(h, y, rcond=None)

    knowledge = artifacts.knowledge_features.astype(np.float64)
    word_probs = np.empty((artifacts.n, artifacts.c))
    for i in range(artifacts.n):
        word_probs[i] = synthetic_forward(knowledge[i][None, :], head)

    refreshed = PoolArtifacts(
        sample_ids=artifacts.sample_ids.copy(),
        knowledge_features=artifacts.knowledge_features.copy(),
        encoder_features=artifacts.encoder_features.copy(),
        word_probs=word_probs.astype(np.float32),
        label_words=list(artifacts.label_words),
        texts=None if artifacts.texts is None else list(artifacts.texts),
        oracle_labels=None if artifacts.oracle_labels is None
        else artifacts.oracle_labels.copy(),
    )
    return refreshed.validate()


def _invoke_adapter(
    adapter: AdapterHandle, state: ALState, report: BatchReport
) -> tuple[Path, float | None]:
    """File-based adapter protocol: request.json in, artifacts + response.json out."""
    exchange = Path(adapter.exchange_dir)
    exchange.mkdir(parents=True, exist_ok=True)
    request = {
        "round": state.round_index,
        "labeled": [[e.sample_id, e.label] for e in state.labeled.entries],
        "artifacts_out": "artifacts",
    }
    (exchange / "request.json").write_text(
        json.dumps(request, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    response_path = exchange / "response.json"
    if response_path.exists():
        response_path.unlink()
    argv = shlex.split(adapter.command) + [str(exchange)]
    try:
        proc = subprocess.run(
            argv, capture_output=True, text=True, timeout=adapter.timeout_s
        )
    except FileNotFoundError as exc:
        raise AdapterError(f"adapter: command not found: {argv[0]}") from exc
    except subprocess.TimeoutExpired as exc:
        raise AdapterError(f"adapter: timed out after {adapter.timeout_s}s") from exc
    if proc.returncode != 0:
        raise AdapterError(
            f"adapter: exit code {proc.returncode}; stderr: {proc.stderr.strip()[:500]}"
        )
    if not response_path.is_file():
        raise AdapterError("adapter: no response.json produced")
    response = json.loads(response_path.read_text(encoding="utf-8"))
    if response.get("status") != "ok":
        raise AdapterError(f"adapter: status {response.get('status')!r}")
    accuracy = response.get("eval_accuracy")
    return exchange / "artifacts", None if accuracy is None else float(accuracy)


def run_round(state: ALState, labels_source: str = "oracle",
              adapter: AdapterHandle | None = None, session=None) -> ALState:
    """Execute one query-label-update round and persist it."""
    if state.round_index >= state.total_rounds:
        raise StrategyError(
            f"round {state.round_index}: run already has {state.total_rounds} rounds"
        )
    if labels_source not in ("oracle", "service"):
        raise ConfigError(f"labels_source: unknown {labels_source!r}")
    i = state.round_index
    artifacts = load_artifacts(state.artifacts_dir(i))

    round_cfg = replace(state.cfg, seed=derive_seed(state.seed, "round", i))
    strategy = make_strategy(round_cfg)
    report = strategy.select(artifacts, state.labeled, round_index=i)

    if labels_source == "oracle":
        assignments = oracle_label(artifacts, report.selected_ids)
        provenance = "oracle"
    else:
        if session is None:
            raise AnnotationError("service labeling requested but no session given")
        items = session.publish(i, report.selected_ids, artifacts)
        logger.info("round %d: waiting for %d human labels", i, len(items))
        assignments = session.wait_for_labels()
        provenance = "human"

    for sid, label in assignments:
        state.labeled.add(sid, label, provenance)
    selected = set(report.selected_ids)
    state.pool_ids = [sid for sid in state.pool_ids if sid not in selected]

    accuracy = None
    if adapter is not None:
        fresh_dir, accuracy = _invoke_adapter(adapter, state, report)
        fresh = load_artifacts(fresh_dir)
    else:
        fresh = refresh_word_probs(artifacts, state.labeled)
    write_artifacts(fresh, state.artifacts_dir(i + 1))

    report.write(state.round_dir(i))
    state.accuracies.append(accuracy)
    state.round_index = i + 1
    state.persist()
    return state


def run_loop(state: ALState, labels_source: str = "oracle",
             adapter: AdapterHandle | None = None, session=None) -> ALState:
    """Run remaining rounds and write the final summary."""
    while state.round_index < state.total_rounds:
        state = run_round(state, labels_source, adapter=adapter, session=session)
    summary = {
        "rounds": state.total_rounds,
        "initial_size": state.initial_size,
        "labeled_size": len(state.labeled),
        "pool_size": len(state.pool_ids),
        "strategy": state.cfg.strategy,
        "seed": state.seed,
        "accuracies": state.accuracies,
        "selected_per_round": [
            BatchReport.read_summary(state.round_dir(i))["selected_ids"]
            for i in range(state.total_rounds)
        ],
    }
    (state.run_dir / "run_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return state
