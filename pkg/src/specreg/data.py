"""Dataset ingestion and persistence.

CIFAR-10 binary format: each record is 1 label byte followed by 3072 image
bytes (3x32x32, row-major, channel-planar), 10000 records per file. Images
map to [0, 1] via /255.

Checkpoints are versioned; loading onto a mismatched architecture descriptor
fails loudly rather than silently coercing. Metrics are line-delimited JSON
records; run configs are flat ``key = value`` text files; adversarial-example
archives are a .npy array file (shape header built in) plus a paired label
file, so externally generated attacks can be evaluated here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor

from .model import architecture_descriptor, model_from_descriptor

CHECKPOINT_VERSION = 1
RECORD_BYTES = 3073
NUM_CLASSES = 10


@dataclass(frozen=True)
class DatasetSpec:
    root: str
    split: str = "train"
    subset_size: int | None = None
    balanced: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.balanced and self.subset_size is not None and self.subset_size % NUM_CLASSES:
            raise ValueError(
                f"balanced subset size must be divisible by {NUM_CLASSES}, got {self.subset_size}"
            )


def _read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise ValueError(f"{path} is truncated: {raw.size} bytes is not a multiple of {RECORD_BYTES}")
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0]
    if labels.max(initial=0) >= NUM_CLASSES:
        raise ValueError(f"{path} contains label byte {labels.max()} > {NUM_CLASSES - 1}")
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def balanced_indices(labels: np.ndarray, size: int, seed: int) -> np.ndarray:
    """Deterministic class-balanced subset: exactly size/10 indices per class."""
    per_class = size // NUM_CLASSES
    rng = np.random.default_rng(seed)
    picks = []
    for c in range(NUM_CLASSES):
        pool = np.nonzero(labels == c)[0]
        if pool.size < per_class:
            raise ValueError(f"class {c} has only {pool.size} samples, need {per_class}")
        picks.append(rng.permutation(pool)[:per_class])
    return np.sort(np.concatenate(picks))


def load_cifar10(spec: DatasetSpec) -> tuple[Tensor, Tensor]:
    """Load (images, labels) per the spec; images float32 in [0, 1]."""
    root = Path(spec.root)
    if spec.split == "train":
        files = sorted(root.glob("data_batch_*.bin"))
    else:
        files = [root / "test_batch.bin"]
    if not files or not all(f.exists() for f in files):
        raise FileNotFoundError(f"no {spec.split} .bin files under {root}")
    parts = [_read_cifar_file(f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    if spec.subset_size is not None:
        if spec.subset_size > len(labels):
            raise ValueError(f"subset size {spec.subset_size} > split size {len(labels)}")
        if spec.balanced:
            idx = balanced_indices(labels, spec.subset_size, spec.seed)
        else:
            idx = np.random.default_rng(spec.seed).permutation(len(labels))[: spec.subset_size]
            idx = np.sort(idx)
        images, labels = images[idx], labels[idx]
    x = torch.from_numpy(images.astype(np.float32) / 255.0)
    y = torch.from_numpy(labels.astype(np.int64))
    return x, y


# --- checkpoints ---


def save_checkpoint(path, model, optimizer=None, epoch: int = 0, seed: int = 0) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "descriptor": architecture_descriptor(model),
            "model_state": model.state_dict(),
            "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
            "epoch": epoch,
            "seed": seed,
        },
        path,
    )


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    version = ckpt.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})")
    for key in ("descriptor", "model_state", "epoch", "seed"):
        if key not in ckpt:
            raise ValueError(f"checkpoint {path} is missing field {key!r}")
    return ckpt


def restore_model(ckpt: dict):
    """Build a fresh model from the checkpoint's descriptor and load its weights."""
    model = model_from_descriptor(ckpt["descriptor"])
    model.load_state_dict(ckpt["model_state"])
    model.eval()
    return model


def load_into(model, ckpt: dict) -> None:
    """Load weights onto an existing model, requiring an exact descriptor match."""
    expected = architecture_descriptor(model)
    if ckpt["descriptor"] != expected:
        raise ValueError(
            f"checkpoint descriptor {ckpt['descriptor']} does not match model {expected}"
        )
    model.load_state_dict(ckpt["model_state"])


# --- metrics / configs / results ---


def append_jsonl(path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as f:
        f.write(json.dumps(record) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_config(path, values: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {values[k]}" for k in values]
    path.write_text("\n".join(lines) + "\n")


def read_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_results(prefix, results: dict[str, float]) -> tuple[Path, Path]:
    """Emit results as JSON and as an aligned text table; returns both paths."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    json_path = prefix.with_suffix(".json")
    json_path.write_text(json.dumps(results, indent=2) + "\n")
    txt_path = prefix.with_suffix(".txt")
    width = max(len(k) for k in results)
    header = " | ".join(f"{k:>{max(width, 8)}}" for k in results)
    row = " | ".join(f"{results[k]:>{max(width, 8)}.2f}" for k in results)
    txt_path.write_text(header + "\n" + row + "\n")
    return json_path, txt_path


# --- adversarial example archives ---


def save_adv_archive(prefix, x_adv: Tensor, labels: Tensor) -> tuple[Path, Path]:
    """Write <prefix>_images.npy and <prefix>_labels.npy."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    img_path = prefix.parent / (prefix.name + "_images.npy")
    lab_path = prefix.parent / (prefix.name + "_labels.npy")
    np.save(img_path, x_adv.detach().cpu().numpy().astype(np.float32))
    np.save(lab_path, labels.detach().cpu().numpy().astype(np.int64))
    return img_path, lab_path


def load_adv_archive(prefix) -> tuple[Tensor, Tensor]:
    prefix = Path(prefix)
    img_path = prefix.parent / (prefix.name + "_images.npy")
    lab_path = prefix.parent / (prefix.name + "_labels.npy")
    if not img_path.exists() or not lab_path.exists():
        raise FileNotFoundError(f"archive files {img_path} / {lab_path} not found")
    x = torch.from_numpy(np.load(img_path))
    y = torch.from_numpy(np.load(lab_path))
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"archive holds {x.shape[0]} images but {y.shape[0]} labels")
    return x, y


def check_archive_budget(x_adv: Tensor, x_clean: Tensor, eps: float) -> dict:
    """Validate the declared L-inf budget; reports violations instead of fixing them."""
    if x_adv.shape != x_clean.shape:
        raise ValueError("archive and reference shapes differ")
    dev = (x_adv - x_clean).abs().flatten(1).max(dim=1).values
    tol = eps + 1e-6
    violations = int((dev > tol).sum())
    return {
        "eps": eps,
        "max_deviation": float(dev.max()) if dev.numel() else 0.0,
        "violations": violations,
        "ok": violations == 0,
    }


# --- image export ---


def to_uint8(image: Tensor) -> np.ndarray:
    """(3, H, W) [0,1] float -> (H, W, 3) uint8."""
    arr = image.detach().cpu().clamp(0, 1).numpy()
    return (arr * 255.0).round().astype(np.uint8).transpose(1, 2, 0)


def export_png(path, images: Tensor | list[Tensor], pad: int = 2) -> Path:
    """Save one image or a horizontal strip of images as 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(images, Tensor) and images.ndim == 3:
        images = [images]
    tiles = [to_uint8(im) for im in images]
    h = max(t.shape[0] for t in tiles)
    total_w = sum(t.shape[1] for t in tiles) + pad * (len(tiles) - 1)
    canvas = np.full((h, total_w, 3), 255, dtype=np.uint8)
    x0 = 0
    for t in tiles:
        canvas[: t.shape[0], x0 : x0 + t.shape[1]] = t
        x0 += t.shape[1] + pad
    Image.fromarray(canvas).save(path)
    return path
