"""Per-channel singular value decomposition of images.

All routines work on a single image laid out as (channels, n, n) and compute
in float64 regardless of the caller's dtype; swap/round-trip tolerances are
too tight for float32. Channels must be square because each one is factored
as a plain matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor


@dataclass
class SVDFactors:
    """Per-channel SVD triple of one image: ``u[c] @ diag(sigma[c]) @ vt[c]``.

    u: (C, n, n) with orthonormal columns, sigma: (C, n) descending and
    non-negative, vt: (C, n, n) with orthonormal rows.
    """

    u: Tensor
    sigma: Tensor
    vt: Tensor

    @property
    def channels(self) -> int:
        return self.u.shape[0]

    @property
    def side(self) -> int:
        return self.u.shape[-1]


def _as_square_channels(image: Tensor, name: str = "image") -> Tensor:
    if image.ndim != 3:
        raise ValueError(f"{name} must be (channels, n, n), got shape {tuple(image.shape)}")
    if image.shape[-1] != image.shape[-2]:
        raise ValueError(f"{name} channels must be square, got {tuple(image.shape[-2:])}")
    if not torch.isfinite(image).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return image.to(torch.float64)


def decompose(image: Tensor) -> SVDFactors:
    """Factor each channel of a (C, n, n) image as U diag(sigma) Vt."""
    mat = _as_square_channels(image)
    u, sigma, vt = torch.linalg.svd(mat)
    return SVDFactors(u=u, sigma=sigma, vt=vt)


def reconstruct(factors: SVDFactors, clip: bool = False) -> Tensor:
    """Rebuild the (C, n, n) image from its factors.

    Raw by default; ``clip=True`` clamps the result to [0, 1].
    """
    u, sigma, vt = factors.u, factors.sigma, factors.vt
    if u.shape != vt.shape or sigma.shape != u.shape[:2]:
        raise ValueError(
            f"factor shapes disagree: u {tuple(u.shape)}, sigma {tuple(sigma.shape)}, "
            f"vt {tuple(vt.shape)}"
        )
    image = u @ torch.diag_embed(sigma) @ vt
    if clip:
        image = image.clamp(0.0, 1.0)
    return image


def swap_singular_values(adv: Tensor, clean: Tensor, clip: bool = False) -> Tensor:
    """Recombine ``adv``'s singular vectors with ``clean``'s singular values.

    Output is U_adv diag(sigma_clean) Vt_adv per channel; left unclipped by
    default so the recombination is fed to the model exactly as computed.
    """
    if adv.shape != clean.shape:
        raise ValueError(f"shape mismatch: adv {tuple(adv.shape)} vs clean {tuple(clean.shape)}")
    f_adv = decompose(adv)
    f_clean = decompose(clean)
    return reconstruct(SVDFactors(u=f_adv.u, sigma=f_clean.sigma, vt=f_adv.vt), clip=clip)


def difference_map(a: Tensor, b: Tensor) -> Tensor:
    """Affinely rescale ``a - b`` so min maps to 0 and max to 1.

    A constant difference (including a == b) maps to all 0.5.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = (a - b).to(torch.float64)
    lo, hi = diff.min(), diff.max()
    if hi - lo == 0:
        return torch.full_like(diff, 0.5)
    return (diff - lo) / (hi - lo)


def parseval_residual(image: Tensor) -> Tensor:
    """Relative gap between spectral energy and Fourier energy, per channel.

    Returns |sum(sigma_i^2) - (1/nm) sum|G(u,v)|^2| / sum(sigma_i^2) with G the
    unnormalized 2-D DFT (synthesis carries the 1/nm factor). All-zero
    channels return 0.
    """
    mat = _as_square_channels(image)
    n, m = mat.shape[-2:]
    sigma = torch.linalg.svdvals(mat)
    spectral = (sigma**2).sum(dim=-1)
    coeffs = torch.fft.fft2(mat)
    fourier = coeffs.abs().pow(2).sum(dim=(-2, -1)) / (n * m)
    residual = (spectral - fourier).abs()
    out = torch.zeros_like(spectral)
    nonzero = spectral > 0
    out[nonzero] = residual[nonzero] / spectral[nonzero]
    return out
