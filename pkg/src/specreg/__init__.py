"""Singular-spectrum analysis of adversarial examples and a singular-
regularization side branch for robust residual classifiers."""

from .attacks import AttackConfig, NonFiniteLossError, cw_margin, pgd_attack
from .backbone import ResNet18
from .complexity import count_overhead, multiply_adds, parameter_count
from .losses import LossWeights, loss_info, loss_svd, total_loss
from .model import SRNet, build_model
from .sidenet import FeatureInjectionPlan, MultiScaleConfig, SRSideNet
from .spectral import (
    SVDFactors,
    decompose,
    difference_map,
    parseval_residual,
    reconstruct,
    swap_singular_values,
)
from .sr_block import FourierModulator, OrthoConv, SRBlock, orthogonality_penalty
from .training import (
    TrainConfig,
    adversarial_train,
    evaluate_robustness,
    grey_box_sr_eval,
    svd_swap_experiment,
    train_isolated_sr,
)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "FeatureInjectionPlan",
    "FourierModulator",
    "LossWeights",
    "MultiScaleConfig",
    "NonFiniteLossError",
    "OrthoConv",
    "ResNet18",
    "SRBlock",
    "SRNet",
    "SRSideNet",
    "SVDFactors",
    "TrainConfig",
    "adversarial_train",
    "build_model",
    "count_overhead",
    "cw_margin",
    "decompose",
    "difference_map",
    "evaluate_robustness",
    "grey_box_sr_eval",
    "loss_info",
    "loss_svd",
    "multiply_adds",
    "orthogonality_penalty",
    "parameter_count",
    "parseval_residual",
    "pgd_attack",
    "reconstruct",
    "svd_swap_experiment",
    "swap_singular_values",
    "total_loss",
    "train_isolated_sr",
]
