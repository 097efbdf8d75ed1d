"""Discrete-time survival head: hazards, survival function, NLL, risk.

Four time bins; the head maps a fused embedding to four hazard logits.
Risk is the negative sum of the survival function over bins (higher =
worse prognosis), which makes median-split stratification well defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .dataio import N_BINS, SurvivalRecord
from .errors import DimensionError, LossError


class SurvivalHead:
    """Two-layer MLP from the fused embedding to hazard logits."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator,
                 prefix: str = "head"):
        init = lambda shape: rng.normal(0.0, 0.02, size=shape)
        self.w1 = Parameter(init((in_dim, hidden)), f"{prefix}.w1")
        self.b1 = Parameter(np.zeros((1, hidden)), f"{prefix}.b1")
        self.w2 = Parameter(init((hidden, N_BINS)), f"{prefix}.w2")
        self.b2 = Parameter(np.zeros((1, N_BINS)), f"{prefix}.b2")
        self.in_dim = in_dim

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, fused: Tensor) -> Tensor:
        if fused.shape != (1, self.in_dim):
            raise DimensionError(f"head expects (1, {self.in_dim}), got {fused.shape}")
        return ad.gelu(fused @ self.w1 + self.b1) @ self.w2 + self.b2


@dataclass
class HazardProfile:
    hazards: Tensor    # (1, 4), sigmoid of logits
    survival: Tensor   # (1, 4), S(r) = prod_{u<=r} (1 - h(u))
    risk: Tensor       # (1, 1), -sum_r S(r)

    @property
    def hazard_values(self) -> np.ndarray:
        return self.hazards.data[0]

    @property
    def survival_values(self) -> np.ndarray:
        return self.survival.data[0]

    @property
    def risk_value(self) -> float:
        return self.risk.item()


def hazard_profile(logits: Tensor) -> HazardProfile:
    if logits.shape != (1, N_BINS):
        raise DimensionError(f"expected (1, {N_BINS}) logits, got {logits.shape}")
    hazards = ad.sigmoid(logits)
    parts = []
    running = ad.constant(1.0)
    for r in range(N_BINS):
        running = running * (ad.constant(1.0) - ad.slice_cols(hazards, r, r + 1))
        parts.append(running)
    survival = ad.concat_cols(parts)
    risk = -ad.tsum(survival)
    return HazardProfile(hazards, survival, risk)


def nll_loss(profile: HazardProfile, record: SurvivalRecord) -> Tensor:
    """Discrete survival negative log-likelihood, with S(-1) := 1.

    Censored (c=1): -log S(Y). Uncensored: -log S(Y-1) - log h(Y).
    Log arguments are floored at 1e-12.
    """
    if record.bin is None:
        raise LossError(f"{record.sample_id}: record has no assigned bin")
    y = record.bin
    if record.censor == 1:
        return -ad.log(ad.slice_cols(profile.survival, y, y + 1))
    h_y = ad.slice_cols(profile.hazards, y, y + 1)
    if y == 0:
        return -ad.log(h_y)
    s_prev = ad.slice_cols(profile.survival, y - 1, y)
    return -ad.log(s_prev) - ad.log(h_y)
