"""Pool artifact storage.

A pool snapshot is a directory holding one ``manifest.json`` plus raw
binary blobs: little-endian IEEE-754 32-bit floats, row-major, one file
per matrix. Sample ids and oracle labels are little-endian 32-bit
unsigned integers. Texts, when present, live in ``texts.jsonl`` with one
JSON-encoded string per line in id order.

Numbers are stored in 32-bit for compactness; every consumer in this
package converts to 64-bit before accumulating. Writes are
deterministic: identical artifacts produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ArtifactError, ValidationError

__all__ = [
    "PoolArtifacts",
    "LabeledEntry",
    "LabeledSet",
    "load_artifacts",
    "write_artifacts",
    "subset",
    "digest_artifacts",
    "read_blob",
    "write_blob",
]

MANIFEST_NAME = "manifest.json"
PROVENANCES = ("seed", "oracle", "human")

_DTYPES = {"f32": np.dtype("<f4"), "u32": np.dtype("<u4")}


# ---------------------------------------------------------------------------
# blob primitives (shared with the fusion-parameter store)
# ---------------------------------------------------------------------------

def write_blob(path: Path, arr: np.ndarray, dtype: str) -> None:
    """Write ``arr`` as a raw little-endian row-major blob."""
    np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tofile(path)


def read_blob(path: Path, dtype: str, shape: Sequence[int], field_name: str) -> np.ndarray:
    """Read a raw blob, checking byte length against the declared shape."""
    if not path.is_file():
        raise ArtifactError(f"{field_name}: missing blob file {path.name}")
    expected = int(np.prod(shape, dtype=np.int64)) * _DTYPES[dtype].itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise ArtifactError(
            f"{field_name}: blob {path.name} holds {actual} bytes, "
            f"manifest shape {tuple(shape)} needs {expected}"
        )
    data = np.fromfile(path, dtype=_DTYPES[dtype])
    return data.reshape(shape)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# pool artifacts
# ---------------------------------------------------------------------------

@dataclass
class PoolArtifacts:
    """One model-produced snapshot of the sample pool.

    ``knowledge_features`` holds the mask-position hidden vector of each
    sample, ``encoder_features`` the encoder's summary vector, and
    ``word_probs`` the per-label-word probabilities. Rows of
    ``word_probs`` need not sum to one: entries are probabilities of
    individual label words, not a distribution over them.
    """

    sample_ids: np.ndarray          # (n,) int64, unique, nonnegative
    knowledge_features: np.ndarray  # (n, d) float32
    encoder_features: np.ndarray    # (n, d) float32
    word_probs: np.ndarray          # (n, c) float32, entries in [0, 1]
    label_words: list[str]
    texts: list[str] | None = None
    oracle_labels: np.ndarray | None = None  # (n,) int64 in [0, c)

    @property
    def n(self) -> int:
        return int(self.sample_ids.shape[0])

    @property
    def d(self) -> int:
        return int(self.knowledge_features.shape[1])

    @property
    def c(self) -> int:
        return len(self.label_words)

    def validate(self) -> "PoolArtifacts":
        """Check every invariant; freeze arrays against accidental writes."""
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.sample_ids.ndim != 1:
            raise ArtifactError("sample_ids: expected a 1-D id sequence")
        n = self.n
        if self.sample_ids.size and self.sample_ids.min() < 0:
            raise ArtifactError("sample_ids: negative id")
        if np.unique(self.sample_ids).size != n:
            raise ArtifactError("sample_ids: duplicate ids")

        for name in ("knowledge_features", "encoder_features", "word_probs"):
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.ndim != 2:
                raise ArtifactError(f"{name}: expected a matrix")
            if arr.shape[0] != n:
                raise ArtifactError(f"{name}: {arr.shape[0]} rows, expected {n}")
            if arr.size and not np.all(np.isfinite(arr)):
                raise ArtifactError(f"{name}: non-finite value")
            setattr(self, name, arr)

        d = self.knowledge_features.shape[1]
        if d <= 0:
            raise ArtifactError("knowledge_features: feature dimension must be positive")
        if self.encoder_features.shape[1] != d:
            raise ArtifactError(
                f"encoder_features: dimension {self.encoder_features.shape[1]} != {d}"
            )
        c = self.word_probs.shape[1]
        if c < 2:
            raise ArtifactError("word_probs: need at least 2 label columns")
        if len(self.label_words) != c:
            raise ArtifactError(
                f"label_words: {len(self.label_words)} entries, word_probs has {c} columns"
            )
        if self.word_probs.size and (
            self.word_probs.min() < 0.0 or self.word_probs.max() > 1.0
        ):
            raise ArtifactError("word_probs: entry outside [0, 1]")

        if self.texts is not None:
            if len(self.texts) != n:
                raise ArtifactError(f"texts: {len(self.texts)} entries, expected {n}")
            if not all(isinstance(t, str) for t in self.texts):
                raise ArtifactError("texts: non-string entry")
        if self.oracle_labels is not None:
            labels = np.asarray(self.oracle_labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ArtifactError(f"oracle_labels: shape {labels.shape}, expected ({n},)")
            if labels.size and (labels.min() < 0 or labels.max() >= c):
                raise ArtifactError("oracle_labels: class index outside [0, C)")
            self.oracle_labels = labels

        for arr in (self.sample_ids, self.knowledge_features,
                    self.encoder_features, self.word_probs, self.oracle_labels):
            if arr is not None:
                arr.flags.writeable = False
        return self

    # -- id helpers -------------------------------------------------------

    def row_of(self) -> dict[int, int]:
        """Map sample id -> row index."""
        return {int(sid): i for i, sid in enumerate(self.sample_ids)}

    def rows_for(self, ids: Iterable[int]) -> np.ndarray:
        """Row indices for ``ids`` in the given order; unknown ids raise."""
        lookup = self.row_of()
        rows = []
        for sid in ids:
            try:
                rows.append(lookup[int(sid)])
            except KeyError:
                raise ArtifactError(f"sample_ids: unknown id {sid}") from None
        return np.asarray(rows, dtype=np.int64)

    def equals(self, other: "PoolArtifacts") -> bool:
        """Bit-exact equality of every field."""
        same = (
            np.array_equal(self.sample_ids, other.sample_ids)
            and np.array_equal(self.knowledge_features, other.knowledge_features)
            and np.array_equal(self.encoder_features, other.encoder_features)
            and np.array_equal(self.word_probs, other.word_probs)
            and self.label_words == other.label_words
            and self.texts == other.texts
        )
        if not same:
            return False
        if (self.oracle_labels is None) != (other.oracle_labels is None):
            return False
        if self.oracle_labels is not None:
            return np.array_equal(self.oracle_labels, other.oracle_labels)
        return True


_BLOBS = (
    # (field, dtype, filename, shape getter)
    ("sample_ids", "u32", "sample_ids.u32", lambda a: [a.n]),
    ("knowledge_features", "f32", "knowledge_features.f32", lambda a: [a.n, a.d]),
    ("encoder_features", "f32", "encoder_features.f32", lambda a: [a.n, a.d]),
    ("word_probs", "f32", "word_probs.f32", lambda a: [a.n, a.c]),
)


def write_artifacts(artifacts: PoolArtifacts, path: str | os.PathLike) -> None:
    """Write a validated snapshot; byte output is deterministic."""
    artifacts.validate()
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactError(f"cannot create artifact directory {out}: {exc}") from exc

    blobs = []
    for fname, dtype, filename, shape_fn in _BLOBS:
        arr = getattr(artifacts, fname)
        shape = shape_fn(artifacts)
        write_blob(out / filename, arr, dtype)
        blobs.append({"name": fname, "dtype": dtype, "shape": shape, "filename": filename})

    manifest = {
        "n": artifacts.n,
        "d": artifacts.d,
        "c": artifacts.c,
        "label_words": list(artifacts.label_words),
        "has_texts": artifacts.texts is not None,
        "has_oracle_labels": artifacts.oracle_labels is not None,
        "blobs": blobs,
    }
    if artifacts.texts is not None:
        lines = [json.dumps(t, ensure_ascii=False) for t in artifacts.texts]
        (out / "texts.jsonl").write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8"
        )
    if artifacts.oracle_labels is not None:
        write_blob(out / "oracle_labels.u32", artifacts.oracle_labels, "u32")
    _dump_json(out / MANIFEST_NAME, manifest)


def load_artifacts(path: str | os.PathLike) -> PoolArtifacts:
    """Load and validate a snapshot written by :func:`write_artifacts`."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ArtifactError(f"manifest: missing file {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"manifest: invalid JSON ({exc})") from exc

    for key in ("n", "d", "c", "label_words", "has_texts", "has_oracle_labels", "blobs"):
        if key not in manifest:
            raise ArtifactError(f"manifest: missing field {key!r}")

    declared = {b["name"]: b for b in manifest["blobs"]}
    arrays = {}
    for fname, dtype, filename, _shape_fn in _BLOBS:
        if fname not in declared:
            raise ArtifactError(f"manifest: blob list missing {fname!r}")
        entry = declared[fname]
        if entry.get("dtype") != dtype:
            raise ArtifactError(f"{fname}: dtype {entry.get('dtype')!r}, expected {dtype!r}")
        arrays[fname] = read_blob(root / entry["filename"], dtype, entry["shape"], fname)

    texts = None
    if manifest["has_texts"]:
        texts_path = root / "texts.jsonl"
        if not texts_path.is_file():
            raise ArtifactError("texts: manifest declares texts but texts.jsonl is missing")
        texts = []
        with texts_path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                try:
                    value = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ArtifactError(f"texts: line {lineno} invalid JSON") from exc
                if not isinstance(value, str):
                    raise ArtifactError(f"texts: line {lineno} is not a string")
                texts.append(value)

    oracle_labels = None
    if manifest["has_oracle_labels"]:
        oracle_labels = read_blob(
            root / "oracle_labels.u32", "u32", [manifest["n"]], "oracle_labels"
        ).astype(np.int64)

    artifacts = PoolArtifacts(
        sample_ids=arrays["sample_ids"].astype(np.int64),
        knowledge_features=arrays["knowledge_features"],
        encoder_features=arrays["encoder_features"],
        word_probs=arrays["word_probs"],
        label_words=[str(w) for w in manifest["label_words"]],
        texts=texts,
        oracle_labels=oracle_labels,
    )
    artifacts.validate()
    if artifacts.d != int(manifest["d"]):
        raise ArtifactError(f"manifest: d={manifest['d']} but blobs have d={artifacts.d}")
    if artifacts.c != int(manifest["c"]):
        raise ArtifactError(f"manifest: c={manifest['c']} but blobs have c={artifacts.c}")
    if artifacts.n != int(manifest["n"]):
        raise ArtifactError(f"manifest: n={manifest['n']} but blobs have n={artifacts.n}")
    return artifacts


def subset(artifacts: PoolArtifacts, ids: Iterable[int]) -> PoolArtifacts:
    """Snapshot restricted to ``ids``, rows ordered by ascending id."""
    wanted = sorted(int(i) for i in ids)
    if len(set(wanted)) != len(wanted):
        raise ArtifactError("sample_ids: duplicate ids in subset request")
    rows = artifacts.rows_for(wanted)
    out = PoolArtifacts(
        sample_ids=artifacts.sample_ids[rows],
        knowledge_features=artifacts.knowledge_features[rows],
        encoder_features=artifacts.encoder_features[rows],
        word_probs=artifacts.word_probs[rows],
        label_words=list(artifacts.label_words),
        texts=None if artifacts.texts is None else [artifacts.texts[r] for r in rows],
        oracle_labels=None if artifacts.oracle_labels is None
        else artifacts.oracle_labels[rows],
    )
    return out.validate()


def digest_artifacts(path: str | os.PathLike) -> str:
    """SHA-256 over the directory's files (sorted by name) for run manifests."""
    root = Path(path)
    h = hashlib.sha256()
    for file in sorted(p for p in root.iterdir() if p.is_file()):
        h.update(file.name.encode("utf-8"))
        h.update(b"\0")
        h.update(file.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# labeled set
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledEntry:
    sample_id: int
    label: int
    provenance: str  # "seed" | "oracle" | "human"


@dataclass
class LabeledSet:
    """Accumulated labeled samples with per-entry provenance."""

    entries: list[LabeledEntry] = field(default_factory=list)

    def __post_init__(self):
        self._check()

    def _check(self) -> None:
        ids = [e.sample_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("labeled set: duplicate sample id")
        for e in self.entries:
            if e.provenance not in PROVENANCES:
                raise ValidationError(f"labeled set: unknown provenance {e.provenance!r}")
            if e.label < 0:
                raise ValidationError(f"labeled set: negative label for id {e.sample_id}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return [e.sample_id for e in self.entries]

    def labels_by_id(self) -> dict[int, int]:
        return {e.sample_id: e.label for e in self.entries}

    def add(self, sample_id: int, label: int, provenance: str) -> None:
        self.entries.append(LabeledEntry(int(sample_id), int(label), provenance))
        self._check()

    def check_against(self, artifacts: PoolArtifacts) -> None:
        """Validate ids exist in the snapshot and labels are in range."""
        known = set(int(s) for s in artifacts.sample_ids)
        for e in self.entries:
            if e.sample_id not in known:
                raise ValidationError(f"labeled set: id {e.sample_id} not in artifacts")
            if e.label >= artifacts.c:
                raise ValidationError(
                    f"labeled set: label {e.label} out of range for C={artifacts.c}"
                )

    def to_json(self) -> list[list]:
        return [[e.sample_id, e.label, e.provenance] for e in self.entries]

    @classmethod
    def from_json(cls, data) -> "LabeledSet":
        return cls([LabeledEntry(int(i), int(l), str(p)) for i, l, p in data])
