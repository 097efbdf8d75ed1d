"""Full network: selection-fed reconstruction + encoders + survival head.

The computational path is identical in training and inference; the real
genomic embedding is touched only by the reconstruction loss, so deleting
genomic data never changes predicted risks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoders import GenomicEncoder, PathologyEncoder
from .errors import DimensionError
from .reconstruct import CoattentionOutput, CrossAttentionParams, coattention, reconstruction_loss
from .survival import HazardProfile, SurvivalHead, hazard_profile


class SurvivalNet:
    """All trainable parameters and the per-patient forward pass.

    With ``use_vga=False`` the reconstruction branch is absent and the
    head consumes the pathology CLS alone (the WSI-only baseline).
    """

    def __init__(self, d: int, n_tokens: int = 16, use_vga: bool = True, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.d = d
        self.use_vga = use_vga
        self.vga = CrossAttentionParams(d, n_tokens, rng=rng) if use_vga else None
        self.path_enc = PathologyEncoder(d, rng)
        self.gen_enc = GenomicEncoder(d, rng) if use_vga else None
        head_in = 2 * d if use_vga else d
        self.head = SurvivalHead(head_in, 2 * d, rng)

    def parameters(self) -> list[Parameter]:
        params = []
        if self.vga is not None:
            params += self.vga.parameters()
        params += self.path_enc.parameters()
        if self.gen_enc is not None:
            params += self.gen_enc.parameters()
        params += self.head.parameters()
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for p in self.parameters():
            if p.name not in state:
                raise DimensionError(f"missing parameter {p.name!r} in state")
            if state[p.name].shape != p.data.shape:
                raise DimensionError(
                    f"{p.name}: shape {state[p.name].shape} vs {p.data.shape}")
            p.data[...] = state[p.name]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, features: np.ndarray, selected_indices,
                genomic: np.ndarray | None = None,
                loss_kind: str = "kl") -> "ForwardOutput":
        """Run one patient. ``genomic`` only enables the reconstruction
        loss; it never feeds the risk path."""
        if features.shape[1] != self.d:
            raise DimensionError(f"features d={features.shape[1]} vs model d={self.d}")
        bag = ad.constant(features)
        path_cls, path_attention = self.path_enc.encode(bag)

        coatt = None
        recon_loss = None
        if self.use_vga:
            prompts = ad.constant(features[np.asarray(selected_indices, dtype=np.int64)])
            coatt = coattention(prompts, self.vga)
            gen_cls, _ = self.gen_enc.encode(coatt.tokens)
            fused = ad.concat_cols([path_cls, gen_cls])
            if genomic is not None:
                recon_loss = reconstruction_loss(coatt.tokens, genomic, loss_kind)
        else:
            fused = path_cls

        profile = hazard_profile(self.head.forward(fused))
        return ForwardOutput(profile, recon_loss, coatt, path_attention)


@dataclass
class ForwardOutput:
    profile: HazardProfile
    recon_loss: Tensor | None
    coatt: CoattentionOutput | None
    path_attention: Tensor  # (1, N_p + 1) CLS attention row of the last layer

    @property
    def risk(self) -> float:
        return self.profile.risk_value

    def patch_attention(self) -> np.ndarray:
        """Per-patch attention values (CLS column dropped)."""
        return self.path_attention.data[0, 1:].copy()
