"""Round runner: train the prompt machinery, export pool artifacts.

Each invocation realizes one model-update step of the loop protocol:
read ``request.json`` from the exchange directory, re-train from the
original checkpoint on the accumulated labeled set, run inference over
the entire pool, and write a fresh artifact directory plus
``response.json``.

Re-training always starts from the checkpoint named in the config (the
base model is reloaded and the prompt parameters are re-initialized from
the seed), which also makes re-invocation with the same request
idempotent.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from transformers import AutoModelForMaskedLM, AutoTokenizer

from .blobs import read_pool_ids_and_texts, write_artifacts_dir, write_fusion_dir
from .fusion_torch import PromptFusion

__all__ = ["AdapterConfig", "PromptedMLM", "export_artifacts", "main"]


@dataclass
class AdapterConfig:
    model_path: str
    pool_dir: str
    label_words: list[str]
    learning_rate: float = 2e-5
    batch_size: int = 8
    epochs: int = 4
    task_prompt_rows: int = 4
    sample_prompt_rows: int = 1
    generator_hidden: int = 256
    attention_heads: int = 4
    prompt_learning_rate: float = 1e-2
    train_base_model: bool = False
    max_text_tokens: int = 32
    device: str = "cpu"
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "AdapterConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f for f in cls.__dataclass_fields__ if f != "extra"}
        kwargs = {k: v for k, v in data.items() if k in known}
        kwargs["extra"] = {k: v for k, v in data.items() if k not in known}
        return cls(**kwargs)


class PromptedMLM(nn.Module):
    """Masked LM driven by a dynamic soft prompt.

    The template for a text is [fused prompt rows; token embeddings;
    mask embedding]; predictions are read from the mask position.
    """

    def __init__(self, mlm, tokenizer, fusion: PromptFusion,
                 verbalizer_ids: list[int], max_text_tokens: int = 32):
        super().__init__()
        self.mlm = mlm
        self.tokenizer = tokenizer
        self.fusion = fusion
        self.verbalizer_ids = verbalizer_ids
        self.max_text_tokens = max_text_tokens

    def encoder_feature(self, text: str) -> torch.Tensor:
        """Summary vector: first-position hidden state of the plain encoding."""
        enc = self.tokenizer(text, return_tensors="pt", truncation=True,
                             max_length=self.max_text_tokens + 2)
        with torch.no_grad():
            out = self.mlm(**enc, output_hidden_states=True)
        return out.hidden_states[-1][0, 0]

    def forward_text(self, text: str):
        """Mask-position readout for one text.

        Returns (word_probs over the verbalizer, knowledge feature,
        verbalizer logits). Gradients flow through the prompt rows; the
        encoder feature is treated as an input.
        """
        e = self.encoder_feature(text).unsqueeze(0)
        prompt = self.fusion(e)[0]  # (m+n, d)

        token_ids = self.tokenizer(text, add_special_tokens=False,
                                   truncation=True,
                                   max_length=self.max_text_tokens)["input_ids"]
        embeddings = self.mlm.get_input_embeddings()
        token_embeds = embeddings(torch.tensor(token_ids, dtype=torch.long))
        mask_embed = embeddings(
            torch.tensor([self.tokenizer.mask_token_id], dtype=torch.long)
        )
        template = torch.cat([prompt, token_embeds, mask_embed], dim=0)

        out = self.mlm(inputs_embeds=template.unsqueeze(0),
                       output_hidden_states=True)
        mask_pos = template.shape[0] - 1
        logits = out.logits[0, mask_pos]
        vocab_probs = torch.softmax(logits, dim=-1)
        word_probs = vocab_probs[self.verbalizer_ids]
        knowledge = out.hidden_states[-1][0, mask_pos]
        return word_probs, knowledge, logits[self.verbalizer_ids]


def _verbalizer_ids(tokenizer, label_words: list[str]) -> list[int]:
    ids = []
    for word in label_words:
        pieces = tokenizer.tokenize(word)
        if len(pieces) != 1:
            raise ValueError(
                f"label word {word!r} is not a single token ({pieces})"
            )
        ids.append(tokenizer.convert_tokens_to_ids(pieces[0]))
    return ids


def _train(model: PromptedMLM, labeled: list[tuple[str, int]],
           cfg: AdapterConfig) -> float:
    params = [
        {"params": model.fusion.parameters(), "lr": cfg.prompt_learning_rate}
    ]
    if cfg.train_base_model:
        params.append({"params": model.mlm.parameters(), "lr": cfg.learning_rate})
    else:
        model.mlm.requires_grad_(False)
    optimizer = torch.optim.AdamW(params)

    generator = torch.Generator().manual_seed(cfg.seed)
    model.train()
    for _ in range(cfg.epochs):
        order = torch.randperm(len(labeled), generator=generator).tolist()
        for start in range(0, len(order), cfg.batch_size):
            batch = [labeled[i] for i in order[start:start + cfg.batch_size]]
            optimizer.zero_grad()
            losses = []
            for text, label in batch:
                _, _, verb_logits = model.forward_text(text)
                target = torch.tensor(label, dtype=torch.long)
                losses.append(nn.functional.cross_entropy(
                    verb_logits.unsqueeze(0), target.unsqueeze(0)
                ))
            loss = torch.stack(losses).mean()
            loss.backward()
            optimizer.step()

    model.eval()
    with torch.no_grad():
        hits = sum(
            int(model.forward_text(text)[2].argmax().item() == label)
            for text, label in labeled
        )
    return hits / len(labeled)


def build_model(cfg: AdapterConfig, round_index: int = 0) -> PromptedMLM:
    """Fresh model from the original checkpoint with seeded prompt params."""
    torch.manual_seed(cfg.seed + round_index)
    tokenizer = AutoTokenizer.from_pretrained(cfg.model_path)
    mlm = AutoModelForMaskedLM.from_pretrained(cfg.model_path)
    mlm.to(cfg.device)
    d = mlm.config.hidden_size
    generator = torch.Generator().manual_seed(cfg.seed + round_index)
    fusion = PromptFusion(
        d, m=cfg.task_prompt_rows, n=cfg.sample_prompt_rows,
        l=cfg.generator_hidden, heads=cfg.attention_heads, generator=generator,
    )
    return PromptedMLM(mlm, tokenizer, fusion,
                       _verbalizer_ids(tokenizer, cfg.label_words),
                       cfg.max_text_tokens)


def export_artifacts(cfg: AdapterConfig, labeled_pairs: list[tuple[int, int]],
                     out_dir: str | Path, round_index: int = 0) -> dict:
    """Train on the labeled pairs and export a full pool artifact directory."""
    ids, texts, pool_words, oracle = read_pool_ids_and_texts(cfg.pool_dir)
    if texts is None:
        raise ValueError("pool has no texts; the adapter needs raw text input")
    if len(pool_words) != len(cfg.label_words):
        raise ValueError(
            f"verbalizer size {len(cfg.label_words)} != pool classes {len(pool_words)}"
        )
    text_of = {int(sid): texts[i] for i, sid in enumerate(ids)}
    for sid, label in labeled_pairs:
        if int(sid) not in text_of:
            raise ValueError(f"labeled id {sid} not present in the pool")
        if not 0 <= int(label) < len(cfg.label_words):
            raise ValueError(f"label {label} out of range for id {sid}")

    model = build_model(cfg, round_index)
    accuracy = _train(
        model, [(text_of[int(sid)], int(label)) for sid, label in labeled_pairs], cfg
    )

    model.eval()
    n, d = len(ids), model.mlm.config.hidden_size
    word_probs = np.empty((n, len(cfg.label_words)), dtype=np.float64)
    knowledge = np.empty((n, d), dtype=np.float64)
    encoder = np.empty((n, d), dtype=np.float64)
    with torch.no_grad():
        for i, sid in enumerate(ids):
            probs, h, _ = model.forward_text(text_of[int(sid)])
            word_probs[i] = probs.numpy()
            knowledge[i] = h.numpy()
            encoder[i] = model.encoder_feature(text_of[int(sid)]).numpy()

    write_artifacts_dir(out_dir, ids, knowledge, encoder, word_probs,
                        cfg.label_words, texts, oracle)
    write_fusion_dir(out_dir, model.fusion.export_arrays(),
                     m=model.fusion.m, n=model.fusion.n, d=d,
                     l=model.fusion.l, heads=model.fusion.heads)
    return {"train_accuracy": accuracy, "n": n, "d": d}


def run_exchange(config_path: str | Path, exchange_dir: str | Path) -> dict:
    """File protocol: request.json in, artifacts/ + response.json out."""
    exchange = Path(exchange_dir)
    cfg = AdapterConfig.load(config_path)
    request = json.loads((exchange / "request.json").read_text(encoding="utf-8"))
    labeled = [(int(sid), int(label)) for sid, label in request["labeled"]]
    out_dir = exchange / request.get("artifacts_out", "artifacts")
    stats = export_artifacts(cfg, labeled, out_dir,
                             round_index=int(request.get("round", 0)))
    response = {"status": "ok", "eval_accuracy": stats["train_accuracy"]}
    (exchange / "response.json").write_text(
        json.dumps(response, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return response


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="poolforge-adapter",
        description="Train the soft-prompt model and export pool artifacts",
    )
    parser.add_argument("--config", required=True, help="adapter config JSON")
    parser.add_argument("exchange_dir", help="protocol exchange directory")
    args = parser.parse_args(argv)
    try:
        run_exchange(args.config, args.exchange_dir)
    except Exception as exc:  # pragma: no cover - protocol error path
        response = {"status": "error", "error": str(exc)}
        try:
            (Path(args.exchange_dir) / "response.json").write_text(
                json.dumps(response, indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
        except OSError:
            pass
        print(f"adapter error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
