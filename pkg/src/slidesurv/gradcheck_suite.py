"""Gradient-check scenarios shared by the CLI verb and the test suite.

Each scenario builds a small computation whose parameters are perturbed
entry by entry and compared against central finite differences.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Parameter, check_gradients
from .dataio import SurvivalRecord
from .model import SurvivalNet
from .reconstruct import CrossAttentionParams, coattention, reconstruction_loss
from .survival import hazard_profile, nll_loss


def _sum_sq(t):
    return ad.tsum(t * t)


def matmul_case(rng):
    a = Parameter(rng.normal(size=(3, 4)), "a")
    b = Parameter(rng.normal(size=(4, 2)), "b")
    return lambda: _sum_sq(a @ b), [a, b]


def layer_norm_case(rng):
    x = Parameter(rng.normal(size=(3, 5)), "x")
    gain = Parameter(rng.normal(1.0, 0.1, size=(1, 5)), "gain")
    bias = Parameter(rng.normal(0.0, 0.1, size=(1, 5)), "bias")
    return lambda: _sum_sq(ad.layer_norm(x, gain, bias)), [x, gain, bias]


def gelu_case(rng):
    x = Parameter(rng.normal(size=(3, 4)), "x")
    return lambda: ad.tsum(ad.gelu(x)), [x]


def softmax_case(rng):
    x = Parameter(rng.normal(size=(3, 4)), "x")
    w = Parameter(rng.normal(size=(4, 4)), "w")
    return lambda: _sum_sq(ad.softmax_rows(x @ w)), [x, w]


def ppeg_case(rng):
    d = 4
    tokens = Parameter(rng.normal(size=(6, d)), "tokens")  # CLS + 5 patches
    kernels = [Parameter(rng.normal(0, 0.1, size=(d, s * s)), f"k{s}")
               for s in (7, 5, 3)]
    return (lambda: _sum_sq(ad.pyramid_positional_conv(tokens, kernels)),
            [tokens] + kernels)


def coattention_case(rng):
    d = 6
    params = CrossAttentionParams(d, n_tokens=3, rng=rng)
    prompts = ad.constant(rng.normal(size=(5, d)))
    target = rng.normal(size=d)

    def loss():
        out = coattention(prompts, params)
        return _sum_sq(out.tokens) + reconstruction_loss(out.tokens, target, "kl")

    return loss, params.parameters()


def pathology_encoder_case(rng):
    from .encoders import PathologyEncoder
    d = 6
    enc = PathologyEncoder(d, rng)
    tokens = ad.constant(rng.normal(size=(5, d)))

    def loss():
        cls, _ = enc.encode(tokens)
        return _sum_sq(cls)

    return loss, enc.parameters()


def genomic_encoder_case(rng):
    from .encoders import GenomicEncoder
    d = 6
    enc = GenomicEncoder(d, rng)
    tokens = ad.constant(rng.normal(size=(4, d)))

    def loss():
        cls, _ = enc.encode(tokens)
        return _sum_sq(cls)

    return loss, enc.parameters()


def survival_head_case(rng):
    from .survival import SurvivalHead
    head = SurvivalHead(6, 8, rng)
    x = ad.constant(rng.normal(size=(1, 6)))
    record = SurvivalRecord("p", 1.0, 0, bin=2)

    def loss():
        profile = hazard_profile(head.forward(x))
        return nll_loss(profile, record)

    return loss, head.parameters()


def full_model_case(rng, lambda_kl=1.0):
    """Combined NLL + reconstruction loss on a 2-patient micro-batch."""
    d = 8
    net = SurvivalNet(d, n_tokens=2, use_vga=True, seed=int(rng.integers(2**31)))
    bags = [rng.normal(size=(6, d)), rng.normal(size=(5, d))]
    selections = [[0, 2, 4], [1, 3]]
    genomics = [rng.normal(size=d), rng.normal(size=d)]
    records = [SurvivalRecord("a", 1.0, 0, bin=1), SurvivalRecord("b", 2.0, 1, bin=3)]

    def loss():
        total = ad.constant(0.0)
        for feats, sel, gen, rec in zip(bags, selections, genomics, records):
            out = net.forward(feats, sel, genomic=gen, loss_kind="kl")
            total = total + nll_loss(out.profile, rec)
            total = total + ad.constant(lambda_kl) * out.recon_loss
        return total

    return loss, net.parameters()


PER_OP_CASES = [
    ("matmul", matmul_case, 1e-4),
    ("layer_norm", layer_norm_case, 1e-4),
    ("gelu", gelu_case, 1e-4),
    ("softmax", softmax_case, 1e-4),
    ("ppeg", ppeg_case, 1e-4),
    ("coattention", coattention_case, 1e-4),
    ("pathology_encoder", pathology_encoder_case, 1e-4),
    ("genomic_encoder", genomic_encoder_case, 1e-4),
    ("survival_head", survival_head_case, 1e-4),
]


def run_gradcheck_suite(seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    reports = []
    for name, case, tol in PER_OP_CASES:
        rng = np.random.default_rng(seed)
        loss_fn, params = case(rng)
        reports.append((name, check_gradients(loss_fn, params, tol=tol)))
    rng = np.random.default_rng(seed)
    loss_fn, params = full_model_case(rng)
    reports.append(("full_model", check_gradients(loss_fn, params, tol=1e-3)))
    return reports
