# stsf_cd/spg.py
"""
Frozen semantic prior generator.

A fixed-weight copy of the optical encoder topology (no adapters). Its weights come from a
documented seed unless replaced through `load_external_prior_weights`, and they are never
updated by training.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Sequence, Union

import torch
import torch.nn as nn

from .checkpoint import config_hash, load_archive_into, save_archive
from .errors import ShapeError
from .msfe import HierarchicalEncoder, MultiScaleFeatures

logger = logging.getLogger(__name__)

DEFAULT_PRIOR_SEED = 20250917

# SAR (HH, HV, VH, VV) -> three trunk bands (HH, mean cross-pol, VV)
SAR_TO_TRUNK = torch.tensor([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.5, 0.5, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])


class SemanticPriorGenerator(nn.Module):
    def __init__(self, base_channels: int, depths: Sequence[int], head_dim: int, image_size: int,
                 mlp_ratio: float = 2.0, seed: int = DEFAULT_PRIOR_SEED):
        super().__init__()
        self.arch = {
            "kind": "semantic-prior-generator",
            "base_channels": base_channels,
            "depths": list(depths),
            "head_dim": head_dim,
            "image_size": image_size,
            "mlp_ratio": mlp_ratio,
        }
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.trunk = HierarchicalEncoder(3, base_channels, depths, head_dim, image_size,
                                             mlp_ratio=mlp_ratio, attention="global")
        self.register_buffer("sar_projection", SAR_TO_TRUNK.clone()[:, :, None, None], persistent=False)
        for param in self.trunk.parameters():
            param.requires_grad = False
        self.trunk.eval()

    @property
    def channels(self):
        return self.trunk.channels

    def config_hash(self) -> str:
        return config_hash(self.arch)

    def train(self, mode: bool = True) -> "SemanticPriorGenerator":
        # always inference mode, whatever the surrounding model does
        return super().train(False)

    @torch.no_grad()
    def forward(self, image: torch.Tensor) -> MultiScaleFeatures:
        if image.dim() != 4 or image.shape[1] not in (3, 4):
            raise ShapeError(f"Prior generator takes 3- or 4-band images, got {tuple(image.shape)}")
        if image.shape[1] == 4:
            image = nn.functional.conv2d(image, self.sar_projection.to(image.dtype))
        return self.trunk(image)

    def save_weights(self, path: Union[str, Path]) -> Path:
        return save_archive(self.trunk, path, self.config_hash(), extra={"arch": self.arch})

    def load_external_prior_weights(self, path: Union[str, Path]) -> Dict[str, Any]:
        """Replace the seed-derived trunk weights; flags stay frozen, mismatches change nothing."""
        header = load_archive_into(self.trunk, path, self.config_hash())
        logger.info("Loaded external prior weights from %s", path)
        return header


def generate_priors(image: torch.Tensor, generator: SemanticPriorGenerator) -> MultiScaleFeatures:
    return generator(image)


def load_external_prior_weights(generator: SemanticPriorGenerator, path: Union[str, Path]) -> Dict[str, Any]:
    return generator.load_external_prior_weights(path)
