"""Shared test utilities: finite-difference oracles and tiny models."""

import torch
import torch.nn as nn


def finite_diff_grad(fn, x: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Central finite differences of scalar fn(x), elementwise. Mutates a copy."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        f_plus = float(fn(x))
        flat[i] = orig - h
        f_minus = float(fn(x))
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2 * h)
    return grad


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


def finite_diff_param_grad(scalar_fn, param: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Central differences of scalar_fn() with respect to one parameter tensor."""

    def eval_at(value: torch.Tensor) -> float:
        old = param.data.clone()
        param.data.copy_(value)
        try:
            with torch.no_grad():
                return float(scalar_fn())
        finally:
            param.data.copy_(old)

    return finite_diff_grad(eval_at, param.data, h)


def check_param_grads_fd(module: nn.Module, scalar_fn, h: float = 1e-6, tol: float = 1e-3):
    """Autograd parameter gradients of scalar_fn() vs central differences.

    The module must be in float64 (and eval mode if it has batch norm);
    scalar_fn closes over it and returns a scalar tensor with grad. Relative
    tolerance with an absolute floor of 1e-6 for genuinely zero gradients
    (finite differences bottom out at ~1e-9 rounding noise).
    """
    for p in module.parameters():
        p.grad = None
    scalar_fn().backward()
    for name, p in module.named_parameters():
        auto = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        fd = finite_diff_param_grad(scalar_fn, p, h)
        err = float((auto - fd).norm())
        bound = max(tol * float(fd.norm()), 1e-6)
        assert err <= bound, f"gradient mismatch for {name}: |diff| {err:.2e} > {bound:.2e}"


class TinyLinearModel(nn.Module):
    """Two-class linear model with known weights for closed-form attack math."""

    def __init__(self, weight: torch.Tensor, bias: torch.Tensor):
        super().__init__()
        self.linear = nn.Linear(weight.shape[1], weight.shape[0])
        with torch.no_grad():
            self.linear.weight.copy_(weight)
            self.linear.bias.copy_(bias)

    def forward(self, x):
        return self.linear(x.flatten(1))


class TinyConvNet(nn.Module):
    """Small convnet for attack tests; cheap enough for 100-step attacks."""

    def __init__(self, num_classes: int = 10):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 8, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(8, 16, 3, 2, 1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(4), nn.Flatten(),
            nn.Linear(16 * 16, num_classes),
        )

    def forward(self, x):
        return self.net(x)
