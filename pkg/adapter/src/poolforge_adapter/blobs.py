"""Artifact directory I/O.

Implements the engine's on-disk exchange format directly (manifest.json
plus little-endian f32/u32 blobs) so this package stays decoupled from
the engine's Python API: everything crosses the boundary as files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPES = {"f32": np.dtype("<f4"), "u32": np.dtype("<u4")}


def write_blob(path: Path, arr: np.ndarray, dtype: str) -> None:
    np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tofile(path)


def read_blob(path: Path, dtype: str, shape) -> np.ndarray:
    return np.fromfile(path, dtype=_DTYPES[dtype]).reshape(shape)


def read_pool_ids_and_texts(pool_dir: str | Path):
    """Ids, texts, label words, and optional oracle labels from a pool dir."""
    pool_dir = Path(pool_dir)
    manifest = json.loads((pool_dir / "manifest.json").read_text(encoding="utf-8"))
    blob = {b["name"]: b for b in manifest["blobs"]}["sample_ids"]
    ids = read_blob(pool_dir / blob["filename"], blob["dtype"], blob["shape"])
    texts = None
    if manifest["has_texts"]:
        texts = [json.loads(line) for line in
                 (pool_dir / "texts.jsonl").read_text(encoding="utf-8").splitlines()]
    oracle = None
    if manifest["has_oracle_labels"]:
        oracle = read_blob(pool_dir / "oracle_labels.u32", "u32", [manifest["n"]])
    return ids.astype(np.int64), texts, list(manifest["label_words"]), oracle


def write_artifacts_dir(
    out_dir: str | Path,
    sample_ids: np.ndarray,
    knowledge: np.ndarray,
    encoder: np.ndarray,
    word_probs: np.ndarray,
    label_words: list[str],
    texts: list[str] | None,
    oracle_labels: np.ndarray | None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, d = knowledge.shape
    c = word_probs.shape[1]
    blobs = []
    for name, arr, dtype, shape in (
        ("sample_ids", sample_ids, "u32", [n]),
        ("knowledge_features", knowledge, "f32", [n, d]),
        ("encoder_features", encoder, "f32", [n, d]),
        ("word_probs", word_probs, "f32", [n, c]),
    ):
        filename = f"{name}.{dtype}"
        write_blob(out / filename, arr, dtype)
        blobs.append({"name": name, "dtype": dtype, "shape": shape,
                      "filename": filename})
    manifest = {
        "n": n, "d": d, "c": c,
        "label_words": list(label_words),
        "has_texts": texts is not None,
        "has_oracle_labels": oracle_labels is not None,
        "blobs": blobs,
    }
    if texts is not None:
        (out / "texts.jsonl").write_text(
            "".join(json.dumps(t, ensure_ascii=False) + "\n" for t in texts),
            encoding="utf-8",
        )
    if oracle_labels is not None:
        write_blob(out / "oracle_labels.u32", oracle_labels, "u32")
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_fusion_dir(out_dir: str | Path, arrays: dict[str, np.ndarray],
                     m: int, n: int, d: int, l: int, heads: int) -> None:
    out = Path(out_dir) / "fusion"
    out.mkdir(parents=True, exist_ok=True)
    blobs = []
    for name, arr in arrays.items():
        filename = f"{name}.f32"
        write_blob(out / filename, arr, "f32")
        blobs.append({"name": name, "dtype": "f32", "shape": list(arr.shape),
                      "filename": filename})
    manifest = {"m": m, "n": n, "d": d, "l": l, "heads": heads, "blobs": blobs}
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
