import os
import sys

import pytest
import torch

# Add workspace root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from stsf_cd.model import ModelConfig  # noqa: E402
from stsf_cd.synthscenes import build_dataset  # noqa: E402


@pytest.fixture(autouse=True)
def _seeded():
    torch.manual_seed(0)


@pytest.fixture
def tiny_config():
    return ModelConfig(image_size=32, base_channels=8, head_dim=8, decoder_channels=8, projector_hidden=4)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    build_dataset(root, count=6, size=32, split=(0.5, 0.3, 0.2), seed=3)
    return root
