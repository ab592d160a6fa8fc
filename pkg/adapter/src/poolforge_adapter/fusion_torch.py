"""Trainable dynamic soft-prompt fusion (PyTorch).

Mirrors the engine's reference math exactly: a two-layer tanh MLP maps
the encoder feature to sample-prompt rows, the task prompt is stacked on
top, and per-head query/key/value projections (width d/heads each) run
row-wise softmax attention before head concatenation and an output
projection. Weight layout matches the exported blob format so the
engine can replay the forward pass from the exported parameters.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn


class PromptFusion(nn.Module):
    def __init__(self, d: int, m: int = 4, n: int = 1, l: int = 256,
                 heads: int = 4, init_scale: float = 0.2,
                 generator: torch.Generator | None = None):
        super().__init__()
        if d % heads != 0:
            raise ValueError(f"hidden size {d} not divisible by {heads} heads")
        self.d, self.m, self.n, self.l, self.heads = d, m, n, l, heads
        d_h = d // heads

        def init(*shape):
            return torch.normal(0.0, init_scale, size=shape, generator=generator)

        self.task_prompt = nn.Parameter(init(m, d))
        self.gen_w1 = nn.Parameter(init(d, l))
        self.gen_b1 = nn.Parameter(init(l))
        self.gen_w2 = nn.Parameter(init(l, n * d))
        self.gen_b2 = nn.Parameter(init(n * d))
        self.w_q = nn.Parameter(init(heads, d, d_h))
        self.w_k = nn.Parameter(init(heads, d, d_h))
        self.w_v = nn.Parameter(init(heads, d, d_h))
        self.out_proj = nn.Parameter(init(d, d))

    def sample_prompt(self, encoder_feature: torch.Tensor) -> torch.Tensor:
        """(B, d) -> (B, n, d) sample-specific prompt rows."""
        hidden = torch.tanh(encoder_feature @ self.gen_w1 + self.gen_b1)
        flat = hidden @ self.gen_w2 + self.gen_b2
        return flat.view(-1, self.n, self.d)

    def forward(self, encoder_feature: torch.Tensor) -> torch.Tensor:
        """(B, d) -> (B, m+n, d) fused dynamic prompt."""
        batch = encoder_feature.shape[0]
        task = self.task_prompt.unsqueeze(0).expand(batch, -1, -1)
        stacked = torch.cat([task, self.sample_prompt(encoder_feature)], dim=1)
        scale = math.sqrt(self.d // self.heads)
        outs = []
        for i in range(self.heads):
            q = stacked @ self.w_q[i]
            k = stacked @ self.w_k[i]
            v = stacked @ self.w_v[i]
            weights = torch.softmax(q @ k.transpose(-1, -2) / scale, dim=-1)
            outs.append(weights @ v)
        return torch.cat(outs, dim=-1) @ self.out_proj

    def export_arrays(self) -> dict[str, np.ndarray]:
        """Parameter tensors in the blob layout the engine loads."""
        return {
            name: getattr(self, name).detach().cpu().numpy()
            for name in ("task_prompt", "gen_w1", "gen_b1", "gen_w2", "gen_b2",
                         "w_q", "w_k", "w_v", "out_proj")
        }
