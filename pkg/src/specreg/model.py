"""Residual classifier instrumented with the SR side branch."""

from __future__ import annotations

import torch.nn as nn
from torch import Tensor

from .backbone import ResNet18
from .sidenet import FeatureInjectionPlan, MultiScaleConfig, SRSideNet


class SRNet(nn.Module):
    """Backbone plus side branch; side features are added at the planned taps."""

    def __init__(self, backbone: ResNet18, side: SRSideNet, plan: FeatureInjectionPlan):
        super().__init__()
        if len(plan.entries) != len(side.project):
            raise ValueError(
                f"plan has {len(plan.entries)} entries but side net has "
                f"{len(side.project)} projections"
            )
        if max(plan.taps) >= backbone.num_taps:
            raise ValueError(f"plan references tap {max(plan.taps)} beyond backbone taps")
        self.backbone = backbone
        self.side = side
        self.plan = plan

    def side_detail(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """(x_avg, projected features) without running the backbone."""
        return self.side(x)

    def forward_detail(self, x: Tensor) -> tuple[Tensor, Tensor, list[Tensor]]:
        """(logits, x_avg, projected features)."""
        x_avg, feats = self.side(x)
        injections = {tap: feats[proj] for tap, proj in self.plan.entries}
        logits, _ = self.backbone.forward_with_taps(x, injections)
        return logits, x_avg, feats

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_detail(x)[0]


def build_model(
    with_sr: bool = True,
    num_classes: int = 10,
    input_size: int = 32,
    scales: tuple[int, ...] = (32, 24, 16, 8),
    taps: tuple[int, ...] = (0, 1, 2),
) -> ResNet18 | SRNet:
    """Build the bare backbone, or the instrumented model when ``with_sr``."""
    backbone = ResNet18(num_classes=num_classes, input_size=input_size)
    if not with_sr:
        return backbone
    all_shapes = backbone.tap_shapes()
    plan = FeatureInjectionPlan(tuple((tap, i) for i, tap in enumerate(taps)))
    side = SRSideNet(
        tap_shapes=[all_shapes[t] for t in plan.taps],
        scales=MultiScaleConfig(resolutions=tuple(scales)),
        native=input_size,
    )
    return SRNet(backbone, side, plan)


def architecture_descriptor(model: ResNet18 | SRNet) -> dict:
    """Serializable description of what the checkpoint's parameters belong to."""
    if isinstance(model, SRNet):
        backbone = model.backbone
        return {
            "backbone": "resnet18-cifar",
            "with_sr": True,
            "num_classes": backbone.num_classes,
            "input_size": backbone.input_size,
            "scales": list(model.side.scales.resolutions),
            "taps": list(model.plan.taps),
            "mean": backbone.input_mean.flatten().tolist(),
            "std": backbone.input_std.flatten().tolist(),
        }
    return {
        "backbone": "resnet18-cifar",
        "with_sr": False,
        "num_classes": model.num_classes,
        "input_size": model.input_size,
        "scales": None,
        "taps": None,
        "mean": model.input_mean.flatten().tolist(),
        "std": model.input_std.flatten().tolist(),
    }


def model_from_descriptor(descriptor: dict) -> ResNet18 | SRNet:
    if descriptor.get("backbone") != "resnet18-cifar":
        raise ValueError(f"unknown backbone variant {descriptor.get('backbone')!r}")
    kwargs = dict(
        with_sr=descriptor["with_sr"],
        num_classes=descriptor["num_classes"],
        input_size=descriptor["input_size"],
    )
    if descriptor["with_sr"]:
        kwargs["scales"] = tuple(descriptor["scales"])
        kwargs["taps"] = tuple(descriptor["taps"])
    return build_model(**kwargs)
