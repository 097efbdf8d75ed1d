"""Genomic reconstruction from selected visual prompts.

Learnable query tokens attend over the visual prompt embeddings; the
attended tokens are trained to match the patient's genomic embedding
under a configurable divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import DimensionError

LOSS_KINDS = ("kl", "mse", "l1", "cosine")
_COSINE_EPS = 1e-12


class CrossAttentionParams:
    """Learnable tokens, QKV projections, and the post-attention MLP."""

    def __init__(self, d: int, n_tokens: int = 16, d_hidden: int | None = None,
                 rng: np.random.Generator | None = None, prefix: str = "vga"):
        if n_tokens < 1:
            raise DimensionError(f"n_tokens must be >= 1, got {n_tokens}")
        rng = rng or np.random.default_rng(0)
        d_hidden = d_hidden or 2 * d
        init = lambda shape: rng.normal(0.0, 0.02, size=shape)
        self.tokens = Parameter(init((n_tokens, d)), f"{prefix}.tokens")
        self.w_q = Parameter(init((d, d)), f"{prefix}.w_q")
        self.w_k = Parameter(init((d, d)), f"{prefix}.w_k")
        self.w_v = Parameter(init((d, d)), f"{prefix}.w_v")
        self.mlp_w1 = Parameter(init((d, d_hidden)), f"{prefix}.mlp_w1")
        self.mlp_b1 = Parameter(np.zeros((1, d_hidden)), f"{prefix}.mlp_b1")
        self.mlp_w2 = Parameter(init((d_hidden, d)), f"{prefix}.mlp_w2")
        self.mlp_b2 = Parameter(np.zeros((1, d)), f"{prefix}.mlp_b2")
        self.d = d
        self.n_tokens = n_tokens

    def parameters(self) -> list[Parameter]:
        return [self.tokens, self.w_q, self.w_k, self.w_v,
                self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2]


@dataclass
class CoattentionOutput:
    tokens: Tensor          # (N_L, d) reconstructed token sequence
    attention: Tensor       # (N_L, N_S), rows sum to 1
    attn_product: Tensor    # (N_L, d) attention-weighted values, pre-GELU/MLP


def coattention(prompts: Tensor, params: CrossAttentionParams) -> CoattentionOutput:
    """Cross-attention of learnable tokens over visual prompts."""
    if prompts.shape[1] != params.d:
        raise DimensionError(
            f"prompts d={prompts.shape[1]} vs params d={params.d}")
    scale = 1.0 / math.sqrt(params.d)
    q = params.tokens @ params.w_q
    k = prompts @ params.w_k
    v = prompts @ params.w_v
    attention = ad.softmax_rows((q @ k.T) * ad.constant(scale))
    attn_product = attention @ v
    h = ad.gelu(attn_product)
    mlp = ad.gelu(h @ params.mlp_w1 + params.mlp_b1) @ params.mlp_w2 + params.mlp_b2
    return CoattentionOutput(h + mlp, attention, attn_product)


def reconstruction_loss(tokens: Tensor, genomic, kind: str = "kl") -> Tensor:
    """Divergence between mean-pooled reconstructed tokens and the genomic
    embedding. For ``kl`` both vectors pass through a softmax over the
    feature axis first."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    target = genomic if isinstance(genomic, Tensor) else ad.constant(np.reshape(genomic, (1, -1)))
    if target.shape[1] != tokens.shape[1]:
        raise DimensionError(
            f"genomic d={target.shape[1]} vs tokens d={tokens.shape[1]}")
    pooled = ad.mean_rows(tokens)
    if kind == "kl":
        r = ad.softmax_rows(pooled)
        g = ad.softmax_rows(target)
        return ad.kl_divergence(r, g, validate=False)
    diff = pooled - target
    d = pooled.shape[1]
    if kind == "mse":
        return ad.tsum(diff * diff) * ad.constant(1.0 / d)
    if kind == "l1":
        return ad.tsum(ad.absval(diff)) * ad.constant(1.0 / d)
    # cosine: 1 - cos(pooled, target), with zero-vector guard
    norm_p = math.sqrt(float(np.sum(pooled.data**2)))
    norm_t = math.sqrt(float(np.sum(target.data**2)))
    if norm_p < _COSINE_EPS or norm_t < _COSINE_EPS:
        return ad.constant(1.0)
    dot = ad.tsum(pooled * target)
    denom = ad.sqrt(ad.tsum(pooled * pooled)) * ad.sqrt(ad.tsum(target * target))
    return ad.constant(1.0) - dot / denom
