"""Synthetic 10-class corpus in CIFAR-10 binary format.

Stands in for the real dataset on machines without it. Images are smooth
shaded backgrounds with one class-specific motif (shape or texture) at a
random position/size/color, lightly blurred — piecewise-smooth content with
decaying singular spectra, so spectral experiments behave like they do on
natural images, and classes are learnable in a few epochs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

SIDE = 32
RECORDS_PER_FILE = 10000

_GRID = np.stack(
    np.meshgrid(np.linspace(0, 1, SIDE), np.linspace(0, 1, SIDE), indexing="ij"), axis=0
)  # (2, H, W): [0] = y, [1] = x


def _backgrounds(n: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _GRID
    base = rng.uniform(0.2, 0.8, size=(n, 3, 1, 1))
    angle = rng.uniform(0, 2 * np.pi, size=(n, 1, 1))
    slope = rng.uniform(-0.3, 0.3, size=(n, 1, 1))
    ramp = slope * (np.cos(angle) * xx + np.sin(angle) * yy)
    freq = rng.uniform(0.5, 1.5, size=(n, 1, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(n, 1, 1))
    amp = rng.uniform(0.0, 0.12, size=(n, 1, 1))
    wobble = amp * np.cos(2 * np.pi * freq * (xx + 0.7 * yy) + phase)
    shade = (ramp + wobble)[:, None, :, :]
    return np.clip(base + shade, 0.0, 1.0)


def _motif_mask(cls: int, n: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _GRID
    cy = rng.uniform(0.35, 0.65, size=(n, 1, 1))
    cx = rng.uniform(0.35, 0.65, size=(n, 1, 1))
    r = rng.uniform(0.24, 0.34, size=(n, 1, 1))
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    cheb = np.maximum(np.abs(yy - cy), np.abs(xx - cx))
    freq = rng.uniform(2.0, 3.5, size=(n, 1, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(n, 1, 1))
    if cls == 0:
        return dist < r
    if cls == 1:
        return cheb < r
    if cls == 2:
        return np.sin(2 * np.pi * freq * yy + phase) > 0.3
    if cls == 3:
        return np.sin(2 * np.pi * freq * xx + phase) > 0.3
    if cls == 4:
        return np.sin(2 * np.pi * freq * (xx + yy) + phase) > 0.3
    if cls == 5:
        return (dist < r) & (dist > 0.55 * r)
    if cls == 6:
        theta = rng.uniform(0, 2 * np.pi, size=(n, 1, 1))
        half = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta) > 0
        return half & (dist < 1.3 * r)
    if cls == 7:
        g = np.floor(4.5 * freq * xx) + np.floor(4.5 * freq * yy)
        return (g % 2 == 0) & (cheb < 1.4 * r)
    if cls == 8:
        off = rng.uniform(0.18, 0.3, size=(n, 1, 1))
        d2 = np.sqrt((yy - cy + off) ** 2 + (xx - cx - off) ** 2)
        return (dist < 0.55 * r) | (d2 < 0.55 * r)
    if cls == 9:
        return (cheb < 1.3 * r) & (cheb > 0.85 * r)
    raise ValueError(f"class {cls} out of range")


def _blur(images: np.ndarray) -> np.ndarray:
    kernel = torch.tensor([1.0, 2.0, 1.0])
    k2 = (kernel[:, None] * kernel[None, :]) / 16.0
    weight = k2.expand(3, 1, 3, 3).clone()
    x = torch.from_numpy(images.astype(np.float32))
    out = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), weight, groups=3)
    return out.numpy()


def synthetic_batch(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Return (uint8 images (n, 3, 32, 32), labels (n,)), classes interleaved."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    images = np.empty((n, 3, SIDE, SIDE), dtype=np.float64)
    for cls in range(10):
        idx = np.nonzero(labels == cls)[0]
        if idx.size == 0:
            continue
        bg = _backgrounds(idx.size, rng)
        mask = _motif_mask(cls, idx.size, rng)[:, None, :, :]
        color = rng.uniform(0.0, 1.0, size=(idx.size, 3, 1, 1))
        # keep the motif visibly distinct from its own background
        color = np.where(np.abs(color - bg.mean(axis=(2, 3), keepdims=True)) < 0.35, 1.0 - color, color)
        images[idx] = np.where(mask, color, bg)
    images = _blur(images)
    images += rng.normal(0.0, 0.01, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    quantized = (images * 255.0).round().astype(np.uint8)
    perm = np.random.default_rng(seed + 1).permutation(n)
    return quantized[perm], labels[perm].astype(np.uint8)


def write_synthetic_cifar(root, n_train: int = 12800, n_test: int = 2000, seed: int = 0) -> Path:
    """Write a synthetic corpus to ``root`` in CIFAR-10 binary layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    train_x, train_y = synthetic_batch(n_train, seed)
    test_x, test_y = synthetic_batch(n_test, seed + 1000)

    def _write(path: Path, xs: np.ndarray, ys: np.ndarray) -> None:
        records = np.concatenate([ys[:, None], xs.reshape(len(xs), -1)], axis=1).astype(np.uint8)
        records.tofile(path)

    for i in range(0, len(train_x), RECORDS_PER_FILE):
        chunk = slice(i, i + RECORDS_PER_FILE)
        _write(root / f"data_batch_{i // RECORDS_PER_FILE + 1}.bin", train_x[chunk], train_y[chunk])
    _write(root / "test_batch.bin", test_x, test_y)
    return root
