"""Parameter and multiply-add accounting.

Multiply-adds are counted for convolution and linear layers from their output
dimensions (one MAdd per weight multiply), the same layers flops counters
report; normalization, activations, and FFTs are negligible at this scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def multiply_adds(model: nn.Module, input_size: int = 32, batch: int = 1) -> int:
    """Conv + linear multiply-adds for one forward pass at the given resolution."""
    total = 0
    handles = []

    def conv_hook(module: nn.Conv2d, args, output):
        nonlocal total
        out_elems = output.numel() // output.shape[0]
        per_out = module.in_channels // module.groups * module.kernel_size[0] * module.kernel_size[1]
        total += out_elems * per_out

    def linear_hook(module: nn.Linear, args, output):
        nonlocal total
        total += (output.numel() // output.shape[0]) * module.in_features

    for mod in model.modules():
        if isinstance(mod, nn.Conv2d):
            handles.append(mod.register_forward_hook(conv_hook))
        elif isinstance(mod, nn.Linear):
            handles.append(mod.register_forward_hook(linear_hook))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            model(torch.zeros(batch, 3, input_size, input_size))
    finally:
        for h in handles:
            h.remove()
        model.train(was_training)
    return total


@dataclass
class OverheadReport:
    base_params: int
    full_params: int
    base_madds: int
    full_madds: int

    @property
    def param_overhead(self) -> float:
        return (self.full_params - self.base_params) / self.base_params

    @property
    def madd_overhead(self) -> float:
        return (self.full_madds - self.base_madds) / self.base_madds

    def lines(self) -> list[str]:
        rows = [
            ("base", self.base_params, self.base_madds),
            ("with-sr", self.full_params, self.full_madds),
        ]
        out = [f"{'model':<10} {'params (M)':>12} {'madds (G)':>12}"]
        for name, p, m in rows:
            out.append(f"{name:<10} {p / 1e6:>12.2f} {m / 1e9:>12.2f}")
        out.append(
            f"overhead: params +{100 * self.param_overhead:.2f}%, "
            f"madds +{100 * self.madd_overhead:.2f}%"
        )
        return out


def count_overhead(base: nn.Module, instrumented: nn.Module, input_size: int = 32) -> OverheadReport:
    return OverheadReport(
        base_params=parameter_count(base),
        full_params=parameter_count(instrumented),
        base_madds=multiply_adds(base, input_size),
        full_madds=multiply_adds(instrumented, input_size),
    )
