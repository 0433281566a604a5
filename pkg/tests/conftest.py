import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from specreg.data import DatasetSpec, load_cifar10
from specreg.synthetic import write_synthetic_cifar


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    """Small synthetic corpus in CIFAR-10 binary layout, shared by the session."""
    root = tmp_path_factory.mktemp("corpus")
    write_synthetic_cifar(root, n_train=640, n_test=200, seed=123)
    return root


@pytest.fixture(scope="session")
def train_data(corpus_dir):
    return load_cifar10(DatasetSpec(root=str(corpus_dir), split="train", subset_size=320, seed=0))


@pytest.fixture(scope="session")
def test_data(corpus_dir):
    return load_cifar10(DatasetSpec(root=str(corpus_dir), split="test", subset_size=100, seed=0))


@pytest.fixture(autouse=True)
def _seeded():
    torch.manual_seed(1234)
