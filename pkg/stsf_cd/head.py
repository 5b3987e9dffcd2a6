# stsf_cd/head.py
"""Top-down decoder, weighted cross-entropy and argmax prediction."""
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidLabelError, ShapeError
from .msfe import STRIDES, check_pyramid

MIN_CLASS_WEIGHT = 0.2
MAX_CLASS_WEIGHT = 5.0


class Decoder(nn.Module):
    """
    Start at the coarsest scale; upsample 2x, add a 1x1-projected skip from the next finer
    scale, smooth with a 3x3 convolution; finally upsample 4x and classify with a 1x1 conv.
    """

    def __init__(self, in_channels: Sequence[int], width: int, num_classes: int):
        super().__init__()
        self.in_channels = tuple(in_channels)
        self.top = nn.Conv2d(in_channels[-1], width, 1)
        self.laterals = nn.ModuleList(nn.Conv2d(c, width, 1) for c in in_channels[:-1])
        self.smooth = nn.ModuleList(nn.Conv2d(width, width, 3, padding=1) for _ in in_channels[:-1])
        self.classifier = nn.Conv2d(width, num_classes, 1)

    def forward(self, fused: Sequence[torch.Tensor]) -> torch.Tensor:
        check_pyramid(fused, self.in_channels)
        x = self.top(fused[-1])
        for i in reversed(range(len(fused) - 1)):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = F.relu(self.smooth[i](x + self.laterals[i](fused[i])))
        x = F.interpolate(x, scale_factor=STRIDES[0], mode="bilinear", align_corners=False)
        return self.classifier(x)


def decode(fused: Sequence[torch.Tensor], decoder: Decoder) -> torch.Tensor:
    return decoder(fused)


def check_labels(labels: torch.Tensor, num_classes: int) -> None:
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= num_classes):
        raise InvalidLabelError(
            f"Labels must lie in 0..{num_classes - 1}, got range "
            f"{int(labels.min())}..{int(labels.max())}"
        )


def loss(logits: torch.Tensor, labels: torch.Tensor,
         class_weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    """-mean over pixels of w_y * log softmax(logits)_y."""
    if logits.dim() != 4 or labels.shape != (logits.shape[0],) + tuple(logits.shape[2:]):
        raise ShapeError(f"Logits {tuple(logits.shape)} and labels {tuple(labels.shape)} disagree")
    check_labels(labels, logits.shape[1])
    weight = None if class_weights is None else class_weights.to(dtype=logits.dtype, device=logits.device)
    total = F.cross_entropy(logits, labels.long(), weight=weight, reduction="sum")
    return total / labels.numel()


def class_probabilities(logits: torch.Tensor) -> torch.Tensor:
    return logits.softmax(dim=1)


def predict(logits: torch.Tensor) -> torch.Tensor:
    """Per-pixel argmax; ties resolve to the lowest class index."""
    return logits.argmax(dim=1)


def class_weights_from_counts(counts: Sequence[int], mode: str = "inverse_frequency") -> torch.Tensor:
    counts = np.asarray(counts, dtype=np.float64)
    if mode == "unit":
        return torch.ones(len(counts), dtype=torch.float32)
    total = counts.sum()
    with np.errstate(divide="ignore"):
        weights = total / (len(counts) * counts)
    weights = np.clip(np.nan_to_num(weights, posinf=MAX_CLASS_WEIGHT), MIN_CLASS_WEIGHT, MAX_CLASS_WEIGHT)
    return torch.from_numpy(weights.astype(np.float32))
