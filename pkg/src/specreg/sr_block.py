"""Singular regularization block.

Two branches modulate an image's singular spectrum implicitly: a 1x1 channel
transform whose weight is kept near column-orthonormal (touches singular
vectors only, since multiplying by an orthogonal matrix preserves singular
values), and a learnable per-frequency scaling of the Fourier coefficients
(touches singular values). A 1x1 convolution fuses the two branches, followed
by batch normalization.
"""

from __future__ import annotations

import torch
import torch.nn as nn
from torch import Tensor


class OrthoConv(nn.Module):
    """1x1 channel mix whose (out, in) weight starts with orthonormal columns."""

    def __init__(self, in_channels: int = 3, out_channels: int = 12):
        super().__init__()
        if out_channels < in_channels:
            raise ValueError("out_channels must be >= in_channels for orthonormal columns")
        weight = torch.empty(out_channels, in_channels)
        nn.init.orthogonal_(weight)
        self.weight = nn.Parameter(weight)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.weight.shape[1]:
            raise ValueError(f"expected {self.weight.shape[1]} input channels, got {x.shape[1]}")
        kernel = self.weight.view(*self.weight.shape, 1, 1)
        return nn.functional.conv2d(x, kernel)


def orthogonality_penalty(weight: Tensor) -> Tensor:
    """||W^T W - I||_F^2; zero exactly when the columns of W are orthonormal."""
    c = weight.shape[1]
    gram = weight.t() @ weight
    eye = torch.eye(c, dtype=weight.dtype, device=weight.device)
    return ((gram - eye) ** 2).sum()


class FourierModulator(nn.Module):
    """Learnable complex scale per frequency of the 2-D half-spectrum.

    Parameterized on the rfft2 half-spectrum so conjugate frequency pairs stay
    tied and the inverse transform is exactly real. Initialized to 1 + 0i, so
    the module is the identity at construction.
    """

    def __init__(self, channels: int = 3, size: int = 32):
        super().__init__()
        self.size = size
        self.scale_re = nn.Parameter(torch.ones(channels, size, size // 2 + 1))
        self.scale_im = nn.Parameter(torch.zeros(channels, size, size // 2 + 1))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != x.shape[-2]:
            raise ValueError(f"spatial dims must be square, got {tuple(x.shape[-2:])}")
        if x.shape[-1] != self.size:
            raise ValueError(f"modulator built for size {self.size}, got {x.shape[-1]}")
        coeffs = torch.fft.rfft2(x)
        scale = torch.complex(self.scale_re, self.scale_im).to(coeffs.dtype)
        return torch.fft.irfft2(coeffs * scale, s=(self.size, self.size))


class SRBlock(nn.Module):
    """Orthogonal branch + Fourier branch, fused by a 1x1 conv and batch norm."""

    def __init__(self, size: int, in_channels: int = 3, ortho_channels: int = 12):
        super().__init__()
        self.ortho = OrthoConv(in_channels, ortho_channels)
        self.fourier = FourierModulator(in_channels, size)
        self.fuse = nn.Conv2d(ortho_channels + in_channels, in_channels, kernel_size=1, stride=1)
        self.bn = nn.BatchNorm2d(in_channels)

    def forward(self, x: Tensor) -> Tensor:
        branches = torch.cat([self.ortho(x), self.fourier(x)], dim=1)
        return self.bn(self.fuse(branches))

    def penalty(self) -> Tensor:
        return orthogonality_penalty(self.ortho.weight)
