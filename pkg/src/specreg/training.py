"""Adversarial training and the evaluation protocols.

Training is PGD-AT: every step attacks the current model, then optimizes the
total loss on the adversarial batch. For the instrumented model the clean
half of the batch runs through the side branch in the same forward (one
concatenated pass, so batch-norm statistics are shared) to produce the
calibration references; those are detached inside the loss terms.

Desk-scale defaults: a 4096-sample class-balanced subset, 10 epochs, learning
rate drops at 50% and 75% of the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import Tensor

from . import data as dio
from .attacks import AttackConfig, NonFiniteLossError, frozen_eval, pgd_attack
from .losses import LossWeights, loss_info, loss_svd, total_loss
from .model import SRNet
from .sidenet import SRSideNet
from .spectral import swap_singular_values

TRAIN_ATTACK = AttackConfig(norm="linf", eps=8 / 255, alpha=2 / 255, steps=10, objective="ce")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: tuple[int, ...] | None = None  # None -> (50%, 75%) of epochs
    gamma: float = 0.1
    attack: AttackConfig = TRAIN_ATTACK
    weights: LossWeights = field(default_factory=LossWeights)
    grad_clip: float | None = 5.0  # the calibration terms spike early in training
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.milestones is not None and any(m > self.epochs for m in self.milestones):
            raise ValueError(f"milestones {self.milestones} exceed epochs {self.epochs}")

    def resolved_milestones(self) -> tuple[int, ...]:
        if self.milestones is not None:
            return self.milestones
        return (max(1, round(0.5 * self.epochs)), max(1, round(0.75 * self.epochs)))


def _batches(n: int, batch_size: int, generator: torch.Generator | None = None):
    order = torch.randperm(n, generator=generator) if generator is not None else torch.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def adversarial_train(
    config: TrainConfig,
    model,
    images: Tensor,
    labels: Tensor,
    run_dir: str | Path | None = None,
) -> list[dict]:
    """Train in place; returns the per-epoch metric history.

    When ``run_dir`` is given, per-step loss terms and per-epoch summaries are
    appended to metrics.jsonl and checkpoints are written at schedule
    milestones and at the end.
    """
    run_dir = Path(run_dir) if run_dir is not None else None
    torch.manual_seed(config.seed)
    gen_data = torch.Generator().manual_seed(config.seed)
    gen_attack = torch.Generator().manual_seed(config.seed + 1)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(config.resolved_milestones()), gamma=config.gamma
    )
    with_sr = isinstance(model, SRNet)
    history: list[dict] = []
    n = len(labels)
    global_step = 0
    for epoch in range(1, config.epochs + 1):
        sums: dict[str, float] = {}
        correct = 0
        for batch_i, idx in enumerate(_batches(n, config.batch_size, gen_data)):
            x, y = images[idx], labels[idx]
            x_adv = pgd_attack(model, x, y, config.attack, generator=gen_attack)
            model.train()
            optimizer.zero_grad()
            if with_sr:
                both_avg, both_feats = model.side(torch.cat([x_adv, x]))
                x_avg = both_avg[: len(x)]
                feats = [f[: len(x)] for f in both_feats]
                f_clean = [f[len(x) :] for f in both_feats]
                injections = {tap: feats[proj] for tap, proj in model.plan.entries}
                logits, _ = model.backbone.forward_with_taps(x_adv, injections)
                l_ori = F.cross_entropy(logits, y)
                l_svd = loss_svd(x_avg, x)
                l_info = loss_info(feats, f_clean)
                r_ortho = model.side.penalty()
                loss = total_loss(l_ori, l_svd, l_info, r_ortho, config.weights)
                record = {
                    "loss_ori": l_ori.item(),
                    "loss_svd": l_svd.item(),
                    "loss_info": l_info.item(),
                    "r_ortho": r_ortho.item(),
                    "loss_total": loss.item(),
                }
            else:
                logits = model(x_adv)
                loss = F.cross_entropy(logits, y)
                record = {"loss_ori": loss.item(), "loss_total": loss.item()}
            if not torch.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite training loss at epoch {epoch} batch {batch_i} "
                    f"(terms: {record})",
                    batch_index=batch_i,
                )
            loss.backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            correct += int((logits.argmax(dim=1) == y).sum())
            for k, v in record.items():
                sums[k] = sums.get(k, 0.0) + v * len(x)
            if run_dir is not None:
                dio.append_jsonl(
                    run_dir / "metrics.jsonl",
                    {"kind": "step", "epoch": epoch, "step": global_step, **record},
                )
            global_step += 1
        summary = {
            "kind": "epoch",
            "epoch": epoch,
            "lr": optimizer.param_groups[0]["lr"],
            "train_robust_acc": 100.0 * correct / n,
            **{k: v / n for k, v in sums.items()},
        }
        history.append(summary)
        scheduler.step()
        if run_dir is not None:
            dio.append_jsonl(run_dir / "metrics.jsonl", summary)
            if epoch in config.resolved_milestones():
                dio.save_checkpoint(
                    run_dir / "checkpoints" / f"epoch_{epoch:03d}.pt",
                    model,
                    optimizer,
                    epoch=epoch,
                    seed=config.seed,
                )
    if run_dir is not None:
        dio.save_checkpoint(
            run_dir / "checkpoints" / "final.pt",
            model,
            optimizer,
            epoch=config.epochs,
            seed=config.seed,
        )
    model.eval()
    return history


def accuracy(model, images: Tensor, labels: Tensor, batch_size: int = 256) -> float:
    """Evaluation-mode accuracy in percent."""
    correct = 0
    with frozen_eval(model), torch.no_grad():
        for idx in _batches(len(labels), batch_size):
            pred = model(images[idx]).argmax(dim=1)
            correct += int((pred == labels[idx]).sum())
    return 100.0 * correct / len(labels)


def evaluate_robustness(
    model,
    attacks: list[AttackConfig],
    images: Tensor,
    labels: Tensor,
    batch_size: int = 256,
    seed: int = 0,
) -> dict[str, float]:
    """Clean accuracy plus robust accuracy per attack, all in [0, 100]."""
    results = {"clean": accuracy(model, images, labels, batch_size)}
    for cfg in attacks:
        generator = torch.Generator().manual_seed(seed)
        correct = 0
        for idx in _batches(len(labels), batch_size):
            x, y = images[idx], labels[idx]
            x_adv = pgd_attack(model, x, y, cfg, generator=generator)
            with frozen_eval(model), torch.no_grad():
                correct += int((model(x_adv).argmax(dim=1) == y).sum())
        results[cfg.label()] = 100.0 * correct / len(labels)
    return results


@dataclass
class SwapResult:
    robust_acc: float
    swapped_acc: float

    @property
    def gain(self) -> float:
        return self.swapped_acc - self.robust_acc


def svd_swap_experiment(
    model,
    attack: AttackConfig,
    images: Tensor,
    labels: Tensor,
    batch_size: int = 256,
    seed: int = 0,
    clip: bool = False,
) -> SwapResult:
    """Robust accuracy on x_adv versus on x_adv with clean singular values."""
    generator = torch.Generator().manual_seed(seed)
    correct_adv = 0
    correct_swap = 0
    for idx in _batches(len(labels), batch_size):
        x, y = images[idx], labels[idx]
        x_adv = pgd_attack(model, x, y, attack, generator=generator)
        swapped = torch.stack(
            [swap_singular_values(a, c, clip=clip) for a, c in zip(x_adv, x)]
        ).to(x.dtype)
        with frozen_eval(model), torch.no_grad():
            correct_adv += int((model(x_adv).argmax(dim=1) == y).sum())
            correct_swap += int((model(swapped).argmax(dim=1) == y).sum())
    n = len(labels)
    return SwapResult(100.0 * correct_adv / n, 100.0 * correct_swap / n)


def grey_box_sr_eval(
    side: SRSideNet,
    backbone,
    attack: AttackConfig,
    images: Tensor,
    labels: Tensor,
    batch_size: int = 256,
    seed: int = 0,
) -> tuple[float, float]:
    """Attack the bare backbone, then defend with the isolated side branch.

    Returns (accuracy on x_adv, accuracy on x_avg(x_adv)). The adversary never
    sees the side branch. Use a 0-step attack for the clean comparison.
    """
    generator = torch.Generator().manual_seed(seed)
    correct_adv = 0
    correct_reg = 0
    side.eval()
    for idx in _batches(len(labels), batch_size):
        x, y = images[idx], labels[idx]
        x_adv = pgd_attack(backbone, x, y, attack, generator=generator)
        with frozen_eval(backbone), torch.no_grad():
            regularized = side.compute_x_avg(x_adv)
            correct_adv += int((backbone(x_adv).argmax(dim=1) == y).sum())
            correct_reg += int((backbone(regularized).argmax(dim=1) == y).sum())
    n = len(labels)
    return 100.0 * correct_adv / n, 100.0 * correct_reg / n


def train_isolated_sr(
    backbone,
    images: Tensor,
    labels: Tensor,
    config: TrainConfig,
) -> SRSideNet:
    """Fit a side branch alone on the backbone's adversarial examples.

    Minimizes the spectral calibration term between x_avg(x_adv) and the clean
    image, plus the orthogonality penalty; the backbone stays frozen.
    """
    side = SRSideNet(tap_shapes=backbone.tap_shapes()[:1], native=backbone.input_size)
    torch.manual_seed(config.seed)
    gen_data = torch.Generator().manual_seed(config.seed)
    gen_attack = torch.Generator().manual_seed(config.seed + 1)
    optimizer = torch.optim.SGD(
        side.parameters(), lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay
    )
    n = len(labels)
    for epoch in range(config.epochs):
        for idx in _batches(n, config.batch_size, gen_data):
            x, y = images[idx], labels[idx]
            x_adv = pgd_attack(backbone, x, y, config.attack, generator=gen_attack)
            side.train()
            optimizer.zero_grad()
            x_avg = side.compute_x_avg(x_adv)
            loss = loss_svd(x_avg, x) + config.weights.lambda2 * side.penalty()
            if not torch.isfinite(loss):
                raise NonFiniteLossError(f"non-finite isolated-SR loss at epoch {epoch}")
            loss.backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(side.parameters(), config.grad_clip)
            optimizer.step()
    side.eval()
    return side
