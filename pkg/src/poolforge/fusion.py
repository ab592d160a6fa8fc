"""Reference forward math for the sample-aware dynamic soft prompt.

The dynamic prompt for a sample is built in three steps: a two-layer
tanh MLP turns the sample's encoder feature into sample-specific prompt
rows, those rows are stacked under the shared task-prompt rows, and the
stack is fused by multi-head self-attention (per-head query/key/value
projections, row-wise softmax, head concatenation, output projection).

This implementation is the in-process ground truth used to verify
external model adapters and to drive the synthetic desk-scale backend.
It is forward-only; no training happens here. All functions accept
float64 input and are dtype-generic, so they also evaluate cleanly on
complex arrays (which the test suite exploits for derivative checks).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import read_blob, write_blob
from .errors import ArtifactError, ValidationError

__all__ = [
    "FusionParams",
    "generate_sample_prompt",
    "fuse",
    "assemble_template",
    "synthetic_forward",
    "random_params",
    "write_fusion_params",
    "load_fusion_params",
]

ATTN_SCALES = ("head_d", "full_d")


@dataclass
class FusionParams:
    """Learnable tensors of the prompt generator and attention fusion.

    Per-head projections are stacked: ``w_q``, ``w_k``, ``w_v`` have
    shape (heads, d, d_h) with d_h = d / heads. ``out_proj`` mixes the
    concatenated head outputs back to width d.
    """

    task_prompt: np.ndarray  # (m, d)
    gen_w1: np.ndarray       # (d, l)
    gen_b1: np.ndarray       # (l,)
    gen_w2: np.ndarray       # (l, n*d)
    gen_b2: np.ndarray       # (n*d,)
    w_q: np.ndarray          # (heads, d, d_h)
    w_k: np.ndarray          # (heads, d, d_h)
    w_v: np.ndarray          # (heads, d, d_h)
    out_proj: np.ndarray     # (d, d)

    @property
    def m(self) -> int:
        return int(self.task_prompt.shape[0])

    @property
    def d(self) -> int:
        return int(self.task_prompt.shape[1])

    @property
    def l(self) -> int:
        return int(self.gen_w1.shape[1])

    @property
    def n(self) -> int:
        return int(self.gen_w2.shape[1]) // self.d

    @property
    def heads(self) -> int:
        return int(self.w_q.shape[0])

    def validate(self) -> "FusionParams":
        for name in ("task_prompt", "gen_w1", "gen_b1", "gen_w2", "gen_b2",
                     "w_q", "w_k", "w_v", "out_proj"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name}: non-finite value")
            setattr(self, name, arr)
        m, d = self.task_prompt.shape
        if m < 1 or d < 1:
            raise ValidationError("task_prompt: need at least one row and column")
        if self.gen_w1.shape[0] != d:
            raise ValidationError(f"gen_w1: expected {d} input rows")
        l = self.gen_w1.shape[1]
        if l < 1:
            raise ValidationError("gen_w1: hidden width must be >= 1")
        if self.gen_b1.shape != (l,):
            raise ValidationError(f"gen_b1: shape {self.gen_b1.shape}, expected ({l},)")
        nd = self.gen_w2.shape[1]
        # n == 0 (generator disabled) is allowed; fusion then runs on the
        # task prompt alone.
        if self.gen_w2.shape[0] != l or nd % d != 0:
            raise ValidationError("gen_w2: shape must be (l, n*d)")
        if self.gen_b2.shape != (nd,):
            raise ValidationError(f"gen_b2: shape {self.gen_b2.shape}, expected ({nd},)")
        heads = self.w_q.shape[0]
        if heads < 1 or d % heads != 0:
            raise ValidationError(f"attention heads: d={d} not divisible by {heads}")
        d_h = d // heads
        for name in ("w_q", "w_k", "w_v"):
            if getattr(self, name).shape != (heads, d, d_h):
                raise ValidationError(
                    f"{name}: shape {getattr(self, name).shape}, expected {(heads, d, d_h)}"
                )
        if self.out_proj.shape != (d, d):
            raise ValidationError(f"out_proj: shape {self.out_proj.shape}, expected {(d, d)}")
        return self


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    # Subtracting a per-row constant leaves softmax unchanged; using the
    # max of the real part keeps exponentials bounded for any dtype.
    shift = np.max(logits.real, axis=-1, keepdims=True)
    exp = np.exp(logits - shift)
    return exp / exp.sum(axis=-1, keepdims=True)


def generate_sample_prompt(params: FusionParams, encoder_feature: np.ndarray) -> np.ndarray:
    """Sample-specific prompt rows from one encoder feature vector.

    Two dense layers with a tanh in between; the second layer's output is
    reshaped to (n, d).
    """
    e = np.asarray(encoder_feature)
    if e.shape != (params.d,):
        raise ValidationError(
            f"encoder_feature: shape {e.shape}, expected ({params.d},)"
        )
    hidden = np.tanh(e @ params.gen_w1 + params.gen_b1)
    flat = hidden @ params.gen_w2 + params.gen_b2
    return flat.reshape(params.n, params.d)


def fuse(
    params: FusionParams,
    encoder_feature: np.ndarray,
    *,
    attn_scale: str = "head_d",
    return_attention: bool = False,
):
    """Fused dynamic prompt of shape (m+n, d) for one sample.

    Stacks the task prompt over the generated sample prompt, runs
    multi-head self-attention over the rows (row-wise softmax with
    max-subtraction), concatenates head outputs along the feature axis,
    and applies the output projection.

    ``attn_scale`` picks the softmax temperature: ``head_d`` divides
    logits by sqrt(d/heads), ``full_d`` by sqrt(d).
    """
    if attn_scale not in ATTN_SCALES:
        raise ValidationError(f"attn_scale: {attn_scale!r} not in {ATTN_SCALES}")
    sample_rows = generate_sample_prompt(params, encoder_feature)
    stacked = np.concatenate([params.task_prompt, sample_rows], axis=0)

    d_h = params.d // params.heads
    scale = np.sqrt(float(d_h if attn_scale == "head_d" else params.d))
    head_outputs = []
    attention = []
    for i in range(params.heads):
        q = stacked @ params.w_q[i]
        k = stacked @ params.w_k[i]
        v = stacked @ params.w_v[i]
        weights = _softmax_rows(q @ k.T / scale)
        attention.append(weights)
        head_outputs.append(weights @ v)
    fused = np.concatenate(head_outputs, axis=1) @ params.out_proj
    if fused.dtype.kind != "c" and not np.all(np.isfinite(fused)):
        raise ValidationError("fuse: non-finite intermediate")
    if return_attention:
        return fused, np.stack(attention)
    return fused


def assemble_template(
    prompt: np.ndarray, token_embeddings: np.ndarray, mask_embedding: np.ndarray
) -> np.ndarray:
    """Stack [prompt rows; token embeddings; mask row] into one template."""
    prompt = np.asarray(prompt)
    tokens = np.asarray(token_embeddings)
    mask = np.asarray(mask_embedding)
    d = prompt.shape[1]
    if tokens.ndim != 2 or tokens.shape[1] != d:
        raise ValidationError(f"token_embeddings: shape {tokens.shape}, expected (*, {d})")
    if mask.shape != (d,):
        raise ValidationError(f"mask_embedding: shape {mask.shape}, expected ({d},)")
    return np.concatenate([prompt, tokens, mask[None, :]], axis=0)


def synthetic_forward(template: np.ndarray, head_weights: np.ndarray) -> np.ndarray:
    """Toy mask-position readout: softmax(last template row @ head_weights).

    Stands in for a real masked-language model so the loop runs at desk
    scale. The result sums to 1.
    """
    template = np.asarray(template)
    if template.ndim != 2 or template.shape[0] < 1:
        raise ValidationError("template: expected a non-empty matrix")
    head = np.asarray(head_weights)
    if head.ndim != 2 or head.shape[0] != template.shape[1]:
        raise ValidationError(
            f"head_weights: shape {head.shape}, expected ({template.shape[1]}, C)"
        )
    logits = template[-1] @ head
    return _softmax_rows(logits[None, :])[0]


def random_params(
    d: int,
    *,
    m: int = 4,
    n: int = 1,
    l: int = 256,
    heads: int = 4,
    seed: int = 0,
    scale: float = 0.2,
) -> FusionParams:
    """Gaussian-initialized parameters (defaults mirror the shipped config)."""
    rng = np.random.default_rng(seed)
    d_h = d // heads

    def g(*shape):
        return rng.normal(0.0, scale, size=shape)

    return FusionParams(
        task_prompt=g(m, d),
        gen_w1=g(d, l),
        gen_b1=g(l),
        gen_w2=g(l, n * d),
        gen_b2=g(n * d),
        w_q=g(heads, d, d_h),
        w_k=g(heads, d, d_h),
        w_v=g(heads, d, d_h),
        out_proj=g(d, d),
    ).validate()


# ---------------------------------------------------------------------------
# on-disk format: fusion/ subdirectory with its own manifest + blobs
# ---------------------------------------------------------------------------

_FIELDS = ("task_prompt", "gen_w1", "gen_b1", "gen_w2", "gen_b2",
           "w_q", "w_k", "w_v", "out_proj")


def write_fusion_params(params: FusionParams, path: str | os.PathLike) -> None:
    """Serialize under ``<path>/fusion/`` in the shared blob format."""
    params.validate()
    out = Path(path) / "fusion"
    out.mkdir(parents=True, exist_ok=True)
    blobs = []
    for name in _FIELDS:
        arr = getattr(params, name)
        filename = f"{name}.f32"
        write_blob(out / filename, arr, "f32")
        blobs.append({
            "name": name, "dtype": "f32",
            "shape": list(arr.shape), "filename": filename,
        })
    manifest = {
        "m": params.m, "n": params.n, "d": params.d,
        "l": params.l, "heads": params.heads, "blobs": blobs,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_fusion_params(path: str | os.PathLike) -> FusionParams:
    """Load parameters written by :func:`write_fusion_params`."""
    root = Path(path) / "fusion"
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ArtifactError(f"fusion manifest: missing file {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    declared = {b["name"]: b for b in manifest["blobs"]}
    arrays = {}
    for name in _FIELDS:
        if name not in declared:
            raise ArtifactError(f"fusion manifest: blob list missing {name!r}")
        entry = declared[name]
        arrays[name] = read_blob(
            root / entry["filename"], entry["dtype"], entry["shape"], name
        ).astype(np.float64)
    return FusionParams(**arrays).validate()
