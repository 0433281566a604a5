"""CIFAR-resolution ResNet-18 with ordered feature taps.

The stem is a 3x3 stride-1 convolution (no max-pool), followed by four
two-block stages at widths 64/128/256/512 — the variant whose 10-class
parameter count is 11.17 M. Per-channel input normalization is the first
model operation, so attacks always act in raw [0, 1] pixel space.

Taps, in depth order: 0 = stem output, 1..4 = stage outputs. ``forward_with_taps``
optionally adds an injection tensor at a tap before deeper layers consume it.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)


class BasicBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x: Tensor) -> Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResNet18(nn.Module):
    def __init__(
        self,
        num_classes: int = 10,
        input_size: int = 32,
        mean: tuple[float, ...] = CIFAR10_MEAN,
        std: tuple[float, ...] = CIFAR10_STD,
    ):
        super().__init__()
        self.num_classes = num_classes
        self.input_size = input_size
        self.register_buffer("input_mean", torch.tensor(mean).view(1, -1, 1, 1))
        self.register_buffer("input_std", torch.tensor(std).view(1, -1, 1, 1))
        self.stem_conv = nn.Conv2d(3, 64, 3, 1, 1, bias=False)
        self.stem_bn = nn.BatchNorm2d(64)
        widths = (64, 128, 256, 512)
        strides = (1, 2, 2, 2)
        stages = []
        in_channels = 64
        for width, stride in zip(widths, strides):
            stages.append(
                nn.Sequential(
                    BasicBlock(in_channels, width, stride),
                    BasicBlock(width, width, 1),
                )
            )
            in_channels = width
        self.stages = nn.ModuleList(stages)
        self.fc = nn.Linear(512, num_classes)

    @property
    def num_taps(self) -> int:
        return 1 + len(self.stages)

    def tap_shapes(self) -> list[tuple[int, int]]:
        """(channels, side length) per tap, stem first."""
        side = self.input_size
        shapes = [(64, side)]
        for i, width in enumerate((64, 128, 256, 512)):
            if i > 0:
                side //= 2
            shapes.append((width, side))
        return shapes

    def forward_with_taps(
        self, x: Tensor, injections: dict[int, Tensor] | None = None
    ) -> tuple[Tensor, list[Tensor]]:
        """Return (logits, tap features in depth order).

        ``injections`` maps tap index -> tensor added to that tap's feature
        before deeper layers see it.
        """
        if x.shape[-2:] != (self.input_size, self.input_size):
            raise ValueError(
                f"expected {self.input_size}x{self.input_size} input, got {tuple(x.shape[-2:])}"
            )
        injections = injections or {}
        h = (x - self.input_mean) / self.input_std
        h = F.relu(self.stem_bn(self.stem_conv(h)))
        if 0 in injections:
            h = h + injections[0]
        taps = [h]
        for i, stage in enumerate(self.stages, start=1):
            h = stage(h)
            if i in injections:
                h = h + injections[i]
            taps.append(h)
        h = F.adaptive_avg_pool2d(h, 1).flatten(1)
        return self.fc(h), taps

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_with_taps(x)[0]
