# stsf_cd/pgffm.py
"""
Prior-guided feature fusion.

Per scale: the Euclidean distance between the two prior maps becomes a change-intensity
gate M through a shallow CNN and a sigmoid; the gate mixes the modal-specific difference
and the common-feature difference, and a 3x3 convolution refines the mix.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch
import torch.nn as nn

from .errors import ConfigurationError, ShapeError

FUSION_MODES = ("gated_sum", "concat")


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ, {tuple(a.shape)} vs {tuple(b.shape)}")


def prior_distance(p_opt: torch.Tensor, p_sar: torch.Tensor) -> torch.Tensor:
    """Per-pixel L2 distance over channels; (B, C, H, W) x2 -> (B, 1, H, W)."""
    _same_shape(p_opt, p_sar, "prior_distance")
    return torch.linalg.vector_norm(p_opt - p_sar, ord=2, dim=1, keepdim=True)


class PriorProjector(nn.Module):
    """Two 3x3 convolutions with ReLU between, then a sigmoid. The last layer starts at zero (M = 0.5)."""

    def __init__(self, hidden: int = 8):
        super().__init__()
        self.conv1 = nn.Conv2d(1, hidden, 3, padding=1)
        self.act = nn.ReLU()
        self.conv2 = nn.Conv2d(hidden, 1, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, distance: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv2(self.act(self.conv1(distance))))


def prior_projector(distance: torch.Tensor, projector: PriorProjector) -> torch.Tensor:
    return projector(distance)


@dataclass
class DualPathDiffs:
    specific: torch.Tensor
    common: torch.Tensor


def dual_path_diff(s_opt: torch.Tensor, s_sar: torch.Tensor, c_opt: torch.Tensor, c_sar: torch.Tensor,
                   projection: nn.Module = None) -> DualPathDiffs:
    _same_shape(s_opt, s_sar, "specific path")
    _same_shape(c_opt, c_sar, "common path")
    if projection is not None:
        s_opt, s_sar = projection(s_opt), projection(s_sar)
    specific = s_opt - s_sar
    common = c_opt - c_sar
    _same_shape(specific, common, "dual paths")
    return DualPathDiffs(specific, common)


def gated_combination(m: torch.Tensor, specific: torch.Tensor, common: torch.Tensor) -> torch.Tensor:
    """G = M * F_specific + (1 - M) * F_common, M broadcast over channels."""
    _same_shape(specific, common, "gated combination")
    if m.shape[-2:] != specific.shape[-2:] or m.shape[1] != 1:
        raise ShapeError(f"Gate {tuple(m.shape)} does not fit features {tuple(specific.shape)}")
    return m * specific + (1.0 - m) * common


class GatedFusion(nn.Module):
    def __init__(self, channels: int, mode: str = "gated_sum"):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ConfigurationError(f"Unknown fusion mode '{mode}', valid: {FUSION_MODES}")
        self.mode = mode
        in_channels = channels if mode == "gated_sum" else 2 * channels
        self.refine = nn.Sequential(
            nn.Conv2d(in_channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.ReLU(),
        )

    def forward(self, m: torch.Tensor, diffs: DualPathDiffs) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (F_fuse, pre-refinement G)."""
        g = gated_combination(m, diffs.specific, diffs.common)
        if self.mode == "gated_sum":
            return self.refine(g), g
        mixed = torch.cat([m * diffs.specific, (1.0 - m) * diffs.common], dim=1)
        return self.refine(mixed), g


def gated_fuse(m: torch.Tensor, diffs: DualPathDiffs, fusion: GatedFusion) -> torch.Tensor:
    return fusion(m, diffs)[0]


class PriorGuidedScale(nn.Module):
    def __init__(self, channels: int, projector_hidden: int = 8, mode: str = "gated_sum"):
        super().__init__()
        self.projector = PriorProjector(projector_hidden)
        self.specific_proj = nn.Conv2d(channels, channels, 1)
        self.fusion = GatedFusion(channels, mode)

    def change_intensity(self, p_opt: torch.Tensor, p_sar: torch.Tensor) -> torch.Tensor:
        return self.projector(prior_distance(p_opt, p_sar))

    def forward(self, s_opt, s_sar, c_opt, c_sar, p_opt, p_sar):
        m = self.change_intensity(p_opt, p_sar)
        if m.shape[-2:] != s_opt.shape[-2:]:
            raise ShapeError(f"Prior scale {tuple(m.shape[-2:])} does not match features {tuple(s_opt.shape[-2:])}")
        diffs = dual_path_diff(s_opt, s_sar, c_opt, c_sar, self.specific_proj)
        fused, g = self.fusion(m, diffs)
        return fused, m, g


class PriorGuidedFusion(nn.ModuleList):
    """Independent gate, projection and refinement per scale."""

    def __init__(self, channels: Sequence[int], projector_hidden: int = 8, mode: str = "gated_sum"):
        super().__init__(PriorGuidedScale(c, projector_hidden, mode) for c in channels)

    def forward(self, s_opt, s_sar, c_opt, c_sar, p_opt, p_sar, return_details: bool = False):
        fused: List[torch.Tensor] = []
        gates: List[torch.Tensor] = []
        mixes: List[torch.Tensor] = []
        for i, scale in enumerate(self):
            f, m, g = scale(s_opt[i], s_sar[i], c_opt[i], c_sar[i], p_opt[i], p_sar[i])
            fused.append(f)
            gates.append(m)
            mixes.append(g)
        if return_details:
            return tuple(fused), gates, mixes
        return tuple(fused)


def pgffm_forward(s_opt, s_sar, c_opt, c_sar, p_opt, p_sar, fusion: PriorGuidedFusion):
    return fusion(s_opt, s_sar, c_opt, c_sar, p_opt, p_sar)
