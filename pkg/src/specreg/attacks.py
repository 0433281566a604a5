"""PGD-family white-box attacks.

L-inf steps are sign-ascent, L2 steps are normalized-gradient ascent; every
step projects back onto the epsilon ball and the [0, 1] pixel box. Objectives
cover cross-entropy, the C&W margin, and adaptive combinations that target the
side branch's own calibration terms (evaluated between the candidate's branch
internals and the clean reference).

Attacks run with the model in evaluation mode and parameters frozen, so a
fixed (x, y, config) always maps to the same adversarial example when
random_start is off.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .losses import loss_info, loss_svd
from .model import SRNet

OBJECTIVES = ("ce", "cw", "svd", "info", "ce+svd", "ce+info", "ce+svd+info")


class NonFiniteLossError(RuntimeError):
    """Attack or training objective became NaN/Inf."""

    def __init__(self, message: str, step: int | None = None, batch_index: int | None = None):
        super().__init__(message)
        self.step = step
        self.batch_index = batch_index


@dataclass(frozen=True)
class AttackConfig:
    norm: str = "linf"
    eps: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    objective: str = "ce"
    random_start: bool = True

    def __post_init__(self):
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"norm must be 'linf' or 'l2', got {self.norm!r}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.steps > 0 and not self.alpha > 0:
            raise ValueError(f"alpha must be > 0 when steps > 0, got {self.alpha}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")

    def label(self) -> str:
        name = {"ce": "pgd", "cw": "cw"}.get(self.objective, f"pgd[{self.objective}]")
        suffix = "" if self.norm == "linf" else "-l2"
        return f"{name}{self.steps}{suffix}"


# Common evaluation attacks (eps defaults from the L-inf / L2 protocols).
PGD20 = AttackConfig(steps=20)
PGD100 = AttackConfig(steps=100)
CW100 = AttackConfig(steps=100, objective="cw")


def cw_margin(logits: Tensor, y: Tensor) -> Tensor:
    """Batch-mean of max_{j != y} z_j - z_y; positive once misclassified."""
    if not torch.isfinite(logits).all():
        raise ValueError("logits must be finite")
    z_true = logits.gather(1, y.view(-1, 1)).squeeze(1)
    masked = logits.scatter(1, y.view(-1, 1), float("-inf"))
    z_other = masked.max(dim=1).values
    return (z_other - z_true).mean()


def build_objective(model, y: Tensor, selector: str, x_clean: Tensor | None = None):
    """Return a callable x -> scalar to maximize.

    Selectors with svd/info terms need an ``SRNet`` and a clean reference; the
    calibration terms compare the candidate's branch internals against the
    clean ones, exactly as during training.
    """
    if selector not in OBJECTIVES:
        raise ValueError(f"unknown objective {selector!r}")
    terms = selector.split("+")
    needs_side = any(t in ("svd", "info") for t in terms)
    if needs_side:
        if not isinstance(model, SRNet):
            raise TypeError(f"objective {selector!r} requires a model with the SR side branch")
        if x_clean is None:
            raise ValueError(f"objective {selector!r} needs the clean reference images")
        with torch.no_grad():
            x_avg_clean, f_clean = model.side_detail(x_clean)

    if selector == "ce":
        return lambda x: F.cross_entropy(model(x), y)
    if selector == "cw":
        return lambda x: cw_margin(model(x), y)

    def objective(x: Tensor) -> Tensor:
        total = None
        if "ce" in terms:
            total = F.cross_entropy(model(x), y)
        if "svd" in terms:
            if "info" in terms:
                x_avg, feats = model.side_detail(x)
            else:
                x_avg = model.side.compute_x_avg(x)
                feats = None
            term = loss_svd(x_avg, x_avg_clean)
            total = term if total is None else total + term
        if "info" in terms:
            if "svd" not in terms:
                _, feats = model.side_detail(x)
            term = loss_info(feats, f_clean)
            total = term if total is None else total + term
        return total

    return objective


@contextmanager
def frozen_eval(model):
    """Evaluation mode with parameter grads disabled, restored on exit."""
    was_training = model.training
    grad_states = [p.requires_grad for p in model.parameters()]
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    try:
        yield model
    finally:
        model.train(was_training)
        for p, state in zip(model.parameters(), grad_states):
            p.requires_grad_(state)


def _project(delta: Tensor, cfg: AttackConfig) -> Tensor:
    if cfg.norm == "linf":
        return delta.clamp(-cfg.eps, cfg.eps)
    flat = delta.flatten(1)
    norms = flat.norm(dim=1).clamp_min(1e-12)
    factor = (cfg.eps / norms).clamp(max=1.0)
    return delta * factor.view(-1, *([1] * (delta.ndim - 1)))


def _random_start(x: Tensor, cfg: AttackConfig, generator: torch.Generator | None) -> Tensor:
    if cfg.norm == "linf":
        noise = torch.empty_like(x).uniform_(-cfg.eps, cfg.eps, generator=generator)
    else:
        noise = torch.randn(x.shape, generator=generator, dtype=x.dtype, device=x.device)
        flat = noise.flatten(1)
        radius = torch.rand(x.shape[0], generator=generator, device=x.device) ** (1.0 / flat.shape[1])
        flat = flat / flat.norm(dim=1, keepdim=True).clamp_min(1e-12)
        noise = (flat * (radius * cfg.eps).unsqueeze(1)).view_as(x)
    return (x + noise).clamp(0.0, 1.0)


def pgd_attack(
    model,
    x: Tensor,
    y: Tensor,
    cfg: AttackConfig,
    generator: torch.Generator | None = None,
    on_step=None,
) -> Tensor:
    """Run the configured PGD attack and return adversarial images.

    ``on_step(k, x_adv, value)`` is called after each projection with the
    objective value observed at step k (instrumentation only).
    """
    if x.min() < 0 or x.max() > 1:
        raise ValueError("inputs must lie in [0, 1]")
    x = x.detach()
    with frozen_eval(model):
        objective = build_objective(model, y, cfg.objective, x_clean=x)
        x_adv = _random_start(x, cfg, generator) if cfg.random_start and cfg.eps > 0 else x.clone()
        for step in range(cfg.steps):
            x_cand = x_adv.clone().requires_grad_(True)
            value = objective(x_cand)
            if not torch.isfinite(value):
                raise NonFiniteLossError(
                    f"attack objective is non-finite at step {step}", step=step
                )
            (grad,) = torch.autograd.grad(value, x_cand)
            with torch.no_grad():
                if cfg.norm == "linf":
                    x_adv = x_adv + cfg.alpha * grad.sign()
                else:
                    flat = grad.flatten(1)
                    norms = flat.norm(dim=1)
                    unit = torch.where(
                        norms.view(-1, 1) > 0, flat / norms.clamp_min(1e-12).view(-1, 1), flat
                    ).view_as(grad)
                    x_adv = x_adv + cfg.alpha * unit
                x_adv = (x + _project(x_adv - x, cfg)).clamp(0.0, 1.0)
            if on_step is not None:
                on_step(step, x_adv.detach(), value.item())
    return x_adv.detach()
