import json
import pathlib
import sys

import numpy as np
import pytest
import torch
from transformers import BertConfig, BertForMaskedLM, BertTokenizer

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from poolforge_adapter.blobs import write_artifacts_dir

LABEL_WORDS = ["alpha", "beta"]

# Two word families so a tiny model can actually separate the classes.
_CLASS_WORDS = [
    ["stormy", "rain", "cloud", "thunder", "wind"],
    ["sunny", "beach", "warm", "light", "calm"],
]
_SHARED = ["the", "day", "was", "very", "quite"]


def toy_texts(n_per_class=10, seed=0):
    rng = np.random.default_rng(seed)
    texts, labels = [], []
    for c, words in enumerate(_CLASS_WORDS):
        for _ in range(n_per_class):
            picks = [words[rng.integers(len(words))] for _ in range(3)]
            filler = [_SHARED[rng.integers(len(_SHARED))] for _ in range(2)]
            order = [filler[0], picks[0], picks[1], filler[1], picks[2]]
            texts.append(" ".join(order))
            labels.append(c)
    return texts, np.array(labels, dtype=np.int64)


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A local randomly initialized masked LM small enough for CPU tests."""
    root = tmp_path_factory.mktemp("tiny-mlm")
    vocab = (["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
             + LABEL_WORDS + sum(_CLASS_WORDS, []) + _SHARED)
    (root / "vocab.txt").write_text("\n".join(vocab), encoding="utf-8")
    tokenizer = BertTokenizer(str(root / "vocab.txt"), do_lower_case=True)
    config = BertConfig(
        vocab_size=len(vocab), hidden_size=32, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=64,
        max_position_embeddings=64,
    )
    torch.manual_seed(1234)
    model = BertForMaskedLM(config)
    model.save_pretrained(root / "model")
    tokenizer.save_pretrained(root / "model")
    return root / "model"


@pytest.fixture(scope="session")
def toy_pool_dir(tmp_path_factory):
    """A 20-sample pool directory with texts, oracle labels, placeholder features."""
    root = tmp_path_factory.mktemp("toy-pool") / "pool"
    texts, labels = toy_texts()
    n, d = len(texts), 32
    rng = np.random.default_rng(7)
    write_artifacts_dir(
        root,
        sample_ids=np.arange(n, dtype=np.int64),
        knowledge=rng.normal(size=(n, d)),
        encoder=rng.normal(size=(n, d)),
        word_probs=np.full((n, 2), 0.5),
        label_words=LABEL_WORDS,
        texts=texts,
        oracle_labels=labels,
    )
    return root


@pytest.fixture(scope="session")
def adapter_config_path(tmp_path_factory, tiny_model_dir, toy_pool_dir):
    cfg = {
        "model_path": str(tiny_model_dir),
        "pool_dir": str(toy_pool_dir),
        "label_words": LABEL_WORDS,
        "epochs": 4,
        "batch_size": 8,
        "task_prompt_rows": 2,
        "sample_prompt_rows": 1,
        "generator_hidden": 8,
        "attention_heads": 2,
        "max_text_tokens": 16,
        "seed": 5,
    }
    path = tmp_path_factory.mktemp("cfg") / "adapter.json"
    path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
    return path
