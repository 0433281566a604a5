"""Training objective for the instrumented model.

total = L_ori + lambda1 * (L_svd + L_info) + lambda2 * R_ortho

L_svd pulls the side branch's compressed image toward the clean image in
singular values, in the vector product U Vt (invariant to the sign ambiguity
of singular-vector pairs), and in pixels. L_info pulls the projected side
features toward their clean-branch counterparts. Clean-branch targets are
detached: they are reference signals, not trainable paths. Norms are per
sample (Frobenius), channel-summed where applicable, batch-mean reduced.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

DEGENERACY_GAP = 1e-6
JITTER = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 20.0
    lambda2: float = 1e-4

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _jitter_degenerate(mat: Tensor) -> Tensor:
    """Add a small graded diagonal to channel matrices with tiny spectrum gaps.

    SVD gradients blow up on (near-)repeated singular values. The diagonal
    entries are distinct (1e-6 .. 2e-6) so ties actually split — a constant
    diagonal would shift a repeated spectrum uniformly and leave it repeated.
    Applies only inside the loss.
    """
    if mat.shape[-1] < 2:
        return mat
    with torch.no_grad():
        sigma = torch.linalg.svdvals(mat)
        gaps = sigma[..., :-1] - sigma[..., 1:]
        degenerate = gaps.min(dim=-1).values < DEGENERACY_GAP
    if not degenerate.any():
        return mat
    n = mat.shape[-1]
    graded = torch.diag(torch.linspace(1.0, 2.0, n, dtype=mat.dtype, device=mat.device))
    return mat + JITTER * degenerate[..., None, None] * graded


def loss_svd(x_avg: Tensor, x_clean: Tensor) -> Tensor:
    """Spectrum + vector-product + pixel distance between x_avg and the clean image."""
    if x_avg.shape != x_clean.shape:
        raise ValueError(f"shape mismatch: {tuple(x_avg.shape)} vs {tuple(x_clean.shape)}")
    if not torch.isfinite(x_avg).all() or not torch.isfinite(x_clean).all():
        raise ValueError("loss_svd inputs must be finite")
    a = _jitter_degenerate(x_avg.to(torch.float64))
    with torch.no_grad():
        c = _jitter_degenerate(x_clean.detach().to(torch.float64))
        uc, sc, vtc = torch.linalg.svd(c)
        uv_c = uc @ vtc
    ua, sa, vta = torch.linalg.svd(a)
    sigma_term = torch.linalg.vector_norm(sa - sc, dim=-1)
    uv_term = torch.linalg.matrix_norm(ua @ vta - uv_c, dim=(-2, -1))
    pixel_term = torch.linalg.matrix_norm(a - c, dim=(-2, -1))
    per_sample = (sigma_term + uv_term + pixel_term).sum(dim=-1)
    return per_sample.mean().to(x_avg.dtype)


def loss_info(f_adv: list[Tensor], f_clean: list[Tensor]) -> Tensor:
    """Sum over taps of the batch-mean Frobenius distance to the clean features."""
    if len(f_adv) != len(f_clean):
        raise ValueError(f"feature list lengths differ: {len(f_adv)} vs {len(f_clean)}")
    total = None
    for fa, fc in zip(f_adv, f_clean):
        if fa.shape != fc.shape:
            raise ValueError(f"feature shape mismatch: {tuple(fa.shape)} vs {tuple(fc.shape)}")
        diff = fa - fc.detach()
        term = torch.linalg.vector_norm(diff.flatten(1), dim=1).mean()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("empty feature lists")
    return total


def total_loss(l_ori: Tensor, l_svd: Tensor, l_info: Tensor, r_ortho: Tensor, weights: LossWeights) -> Tensor:
    return l_ori + weights.lambda1 * (l_svd + l_info) + weights.lambda2 * r_ortho
