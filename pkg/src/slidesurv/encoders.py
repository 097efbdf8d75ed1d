"""Token encoders with a CLS aggregation token.

The pathology encoder is self-attention -> pyramid positional convolution
-> self-attention; the genomic encoder is two self-attention layers with
no positional stage (and is therefore permutation invariant).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import EncodingError

PPEG_KERNEL_SIZES = (7, 5, 3)


class SelfAttentionLayer:
    """Pre-norm residual single-head self-attention."""

    def __init__(self, d: int, rng: np.random.Generator, prefix: str):
        init = lambda shape: rng.normal(0.0, 0.02, size=shape)
        self.w_q = Parameter(init((d, d)), f"{prefix}.w_q")
        self.w_k = Parameter(init((d, d)), f"{prefix}.w_k")
        self.w_v = Parameter(init((d, d)), f"{prefix}.w_v")
        self.w_o = Parameter(init((d, d)), f"{prefix}.w_o")
        self.ln_gain = Parameter(np.ones((1, d)), f"{prefix}.ln_gain")
        self.ln_bias = Parameter(np.zeros((1, d)), f"{prefix}.ln_bias")
        self.d = d

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.w_k, self.w_v, self.w_o, self.ln_gain, self.ln_bias]

    def forward(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (output tokens, attention matrix)."""
        h = ad.layer_norm(tokens, self.ln_gain, self.ln_bias)
        q = h @ self.w_q
        k = h @ self.w_k
        v = h @ self.w_v
        attention = ad.softmax_rows((q @ k.T) * ad.constant(1.0 / math.sqrt(self.d)))
        out = (attention @ v) @ self.w_o + tokens
        return out, attention


class _BaseEncoder:
    def __init__(self, d: int, rng: np.random.Generator, prefix: str):
        self.d = d
        # zero CLS start; gradient reaches it immediately through residuals
        self.cls = Parameter(np.zeros((1, d)), f"{prefix}.cls")
        self.layer1 = SelfAttentionLayer(d, rng, f"{prefix}.layer1")
        self.layer2 = SelfAttentionLayer(d, rng, f"{prefix}.layer2")

    def parameters(self) -> list[Parameter]:
        return [self.cls] + self.layer1.parameters() + self.layer2.parameters()


class PathologyEncoder(_BaseEncoder):
    def __init__(self, d: int, rng: np.random.Generator, prefix: str = "path_enc"):
        super().__init__(d, rng, prefix)
        self.kernels = [
            Parameter(rng.normal(0.0, 0.02, size=(d, s * s)), f"{prefix}.conv{s}")
            for s in PPEG_KERNEL_SIZES
        ]

    def parameters(self) -> list[Parameter]:
        return super().parameters() + self.kernels

    def encode(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        """CLS embedding and the final layer's CLS attention row."""
        if tokens.shape[0] < 1:
            raise EncodingError("empty feature bag")
        e0 = ad.concat_rows([self.cls, tokens])
        e1, _ = self.layer1.forward(e0)
        e2 = ad.pyramid_positional_conv(e1, self.kernels)
        e3, attention = self.layer2.forward(e2)
        return ad.slice_rows(e3, 0, 1), ad.slice_rows(attention, 0, 1)


class GenomicEncoder(_BaseEncoder):
    def __init__(self, d: int, rng: np.random.Generator, prefix: str = "gen_enc"):
        super().__init__(d, rng, prefix)

    def encode(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        if tokens.shape[0] < 1:
            raise EncodingError("empty token sequence")
        e0 = ad.concat_rows([self.cls, tokens])
        e1, _ = self.layer1.forward(e0)
        e2, attention = self.layer2.forward(e1)
        return ad.slice_rows(e2, 0, 1), ad.slice_rows(attention, 0, 1)
