"""Multiscale singular-regularization side branch.

The input is resampled to each configured scale and passed through an
independent SR block; Sigmoid compresses each output into (0, 1) and the
upsampled results are averaged into ``x_avg``. A small convolutional
extractor turns ``x_avg`` into deep features, and per-tap projection
convolutions reshape those features to match backbone taps, where they are
added in. The Sigmoid squashing plus the additive skip is what bounds the
information the branch can pass through.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .sr_block import SRBlock

MAX_PROJECTIONS = 3  # deeper injection plans do not converge under adversarial training


@dataclass(frozen=True)
class MultiScaleConfig:
    resolutions: tuple[int, ...] = (32, 24, 16, 8)
    resample: str = "bilinear"

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise ValueError(f"resolutions must be strictly decreasing, got {self.resolutions}")

    def validate_native(self, native: int) -> None:
        if self.resolutions[0] != native:
            raise ValueError(
                f"first scale {self.resolutions[0]} must equal the native resolution {native}"
            )


@dataclass(frozen=True)
class FeatureInjectionPlan:
    """(backbone tap index, projection index) pairs; tap 0 is the stem output."""

    entries: tuple[tuple[int, int], ...] = ((0, 0), (1, 1), (2, 2))

    def __post_init__(self):
        taps = [t for t, _ in self.entries]
        if taps != sorted(set(taps)):
            raise ValueError(f"tap indices must be strictly increasing, got {taps}")
        if not 1 <= len(self.entries) <= MAX_PROJECTIONS:
            raise ValueError(
                f"{len(self.entries)} projections unsupported; must be 1..{MAX_PROJECTIONS}"
            )

    @property
    def taps(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.entries)


def _resample(x: Tensor, size: int, mode: str = "bilinear") -> Tensor:
    if x.shape[-1] == size and x.shape[-2] == size:
        return x
    return F.interpolate(x, size=(size, size), mode=mode, align_corners=False)


class SRSideNet(nn.Module):
    """SR blocks at every scale, feature extractor, and tap projections.

    ``tap_shapes`` gives (channels, side) for each projected backbone tap.
    Projection convolutions are zero-initialized so a freshly built module
    injects nothing and the instrumented model starts at exact base behavior.
    """

    extract_widths = (16, 32, 64)

    def __init__(
        self,
        tap_shapes: list[tuple[int, int]],
        scales: MultiScaleConfig | None = None,
        native: int = 32,
    ):
        super().__init__()
        if not 1 <= len(tap_shapes) <= MAX_PROJECTIONS:
            raise ValueError(
                f"{len(tap_shapes)} projections unsupported; must be 1..{MAX_PROJECTIONS}"
            )
        self.scales = scales or MultiScaleConfig()
        self.scales.validate_native(native)
        self.native = native
        self.tap_shapes = list(tap_shapes)
        self.blocks = nn.ModuleList(SRBlock(size=size) for size in self.scales.resolutions)
        layers: list[nn.Module] = []
        in_ch = 3
        for width in self.extract_widths:
            layers += [
                nn.Conv2d(in_ch, width, 3, 1, 1),
                nn.BatchNorm2d(width),
                nn.ReLU(inplace=True),
            ]
            in_ch = width
        self.extract = nn.Sequential(*layers)
        self.project = nn.ModuleList()
        for channels, _side in tap_shapes:
            conv = nn.Conv2d(self.extract_widths[-1], channels, 3, 1, 1)
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)
            self.project.append(conv)

    def compute_x_avg(self, x: Tensor) -> Tensor:
        """Average of Sigmoid-compressed SR outputs across scales, at native size."""
        if x.shape[-2:] != (self.native, self.native):
            raise ValueError(
                f"expected {self.native}x{self.native} input, got {tuple(x.shape[-2:])}"
            )
        mode = self.scales.resample
        parts = []
        for size, block in zip(self.scales.resolutions, self.blocks):
            down = _resample(x, size, mode)
            parts.append(_resample(torch.sigmoid(block(down)), self.native, mode))
        return torch.stack(parts).mean(dim=0)

    def extract_features(self, x_avg: Tensor) -> Tensor:
        return self.extract(x_avg)

    def project_feature(self, deep: Tensor, i: int) -> Tensor:
        """Project deep features to tap i's channel count and spatial size."""
        channels, side = self.tap_shapes[i]
        out = self.project[i](deep)
        return _resample(out, side, self.scales.resample)

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Return (x_avg, projected features in plan order)."""
        x_avg = self.compute_x_avg(x)
        deep = self.extract_features(x_avg)
        feats = [self.project_feature(deep, i) for i in range(len(self.project))]
        return x_avg, feats

    def penalty(self) -> Tensor:
        """Sum of orthogonality penalties over all SR blocks."""
        total = self.blocks[0].penalty()
        for block in list(self.blocks)[1:]:
            total = total + block.penalty()
        return total
