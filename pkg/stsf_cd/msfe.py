# stsf_cd/msfe.py
"""
Modal-specific feature encoders.

Both branches share one hierarchical layout: a stride-4 patch embedding, then three
stride-2 downsampling embeddings, each followed by transformer blocks. The optical branch
runs global-attention blocks behind bottleneck adapters and is trained only through
those adapters; the SAR branch runs shifted-window blocks and is trained end to end.
"""
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError

MultiScaleFeatures = Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]
NUM_SCALES = 4
STRIDES = (4, 8, 16, 32)


def stage_channels(base_channels: int) -> Tuple[int, ...]:
    return tuple(base_channels * 2 ** i for i in range(NUM_SCALES))


def check_pyramid(features: Sequence[torch.Tensor], channels: Optional[Sequence[int]] = None) -> None:
    """Four finite (B, C, H, W) maps whose spatial size halves from scale to scale."""
    if len(features) != NUM_SCALES:
        raise ShapeError(f"Expected {NUM_SCALES} scales, got {len(features)}")
    for i, f in enumerate(features):
        if f.dim() != 4:
            raise ShapeError(f"Scale {i + 1} must be (B, C, H, W), got {tuple(f.shape)}")
        if channels is not None and f.shape[1] != channels[i]:
            raise ShapeError(f"Scale {i + 1} has {f.shape[1]} channels, expected {channels[i]}")
        if i and (f.shape[-2] * 2, f.shape[-1] * 2) != tuple(features[i - 1].shape[-2:]):
            raise ShapeError(f"Scale {i + 1} size {tuple(f.shape[-2:])} does not halve "
                             f"{tuple(features[i - 1].shape[-2:])}")


def check_image(image: torch.Tensor, in_channels: int) -> None:
    if image.dim() != 4 or image.shape[1] != in_channels:
        raise ShapeError(f"Expected a (B, {in_channels}, H, W) image, got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h % STRIDES[-1] or w % STRIDES[-1]:
        raise ShapeError(f"Image size {h}x{w} is not divisible by {STRIDES[-1]}")


class Adapter(nn.Module):
    """Bottleneck adapter x + up(GELU(down(x))); identity at init."""

    def __init__(self, dim: int, reduction: int = 4):
        super().__init__()
        if reduction < 1 or dim % reduction:
            raise ConfigurationError(f"Adapter reduction {reduction} does not divide width {dim}")
        hidden = dim // reduction
        self.down = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.up = nn.Linear(hidden, dim)
        self.reset_identity()

    def reset_identity(self) -> None:
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.down.in_features:
            raise ShapeError(f"Adapter expects {self.down.in_features} channels, got {x.shape[-1]}")
        return x + self.up(self.act(self.down(x)))


def adapter_forward(x: torch.Tensor, adapter: Adapter) -> torch.Tensor:
    return adapter(x)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if num_heads < 1 or dim % num_heads:
            raise ConfigurationError(f"{num_heads} heads do not divide width {dim}")
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def _attend(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = (q @ k.transpose(-2, -1)) * self.scale
        if mask is not None:
            # mask: (num_windows, n, n), x batches windows as (B * num_windows, n, c)
            nw = mask.shape[0]
            logits = logits.view(b // nw, nw, self.num_heads, n, n) + mask[None, :, None]
            logits = logits.view(b, self.num_heads, n, n)
        weights = logits.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out), weights

    def attention_weights(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """(B, heads, N, N) row-stochastic attention weights."""
        return self._attend(x, mask)[1]

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self._attend(x, mask)[0]


class Mlp(nn.Sequential):
    def __init__(self, dim: int, mlp_ratio: float):
        hidden = max(1, int(round(dim * mlp_ratio)))
        super().__init__(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))


class TransformerBlock(nn.Module):
    """Pre-norm global attention block: x + MHSA(LN(x)), then + MLP(LN(.))."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x: torch.Tensor, hw: Optional[Tuple[int, int]] = None) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def attention_block_forward(x: torch.Tensor, block: TransformerBlock) -> torch.Tensor:
    if x.shape[-2] < 1:
        raise ShapeError("Attention needs at least one token")
    return block(x)


def window_partition(x: torch.Tensor, window_size: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * num_windows, window_size * window_size, C)"""
    b, h, w, c = x.shape
    x = x.view(b, h // window_size, window_size, w // window_size, window_size, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window_size * window_size, c)


def window_reverse(windows: torch.Tensor, window_size: int, h: int, w: int) -> torch.Tensor:
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // window_size) * (w // window_size))
    x = windows.view(b, h // window_size, w // window_size, window_size, window_size, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


def shifted_window_mask(h: int, w: int, window_size: int, shift: int, device=None) -> torch.Tensor:
    """Additive mask keeping attention inside the regions a cyclic shift glued together."""
    img_mask = torch.zeros((1, h, w, 1), device=device)
    cnt = 0
    for hs in (slice(0, -window_size), slice(-window_size, -shift), slice(-shift, None)):
        for ws in (slice(0, -window_size), slice(-window_size, -shift), slice(-shift, None)):
            img_mask[:, hs, ws, :] = cnt
            cnt += 1
    mask_windows = window_partition(img_mask, window_size).squeeze(-1)
    mask = mask_windows.unsqueeze(1) - mask_windows.unsqueeze(2)
    return mask.masked_fill(mask != 0, -100.0).masked_fill(mask == 0, 0.0)


class WindowBlock(TransformerBlock):
    """Swin-style block: attention inside (optionally shifted) non-overlapping windows."""

    def __init__(self, dim: int, num_heads: int, window_size: int = 4, shifted: bool = False,
                 mlp_ratio: float = 2.0):
        super().__init__(dim, num_heads, mlp_ratio)
        self.window_size = window_size
        self.shifted = shifted

    def forward(self, x: torch.Tensor, hw: Optional[Tuple[int, int]] = None) -> torch.Tensor:
        h, w = hw
        b, n, c = x.shape
        ws = min(self.window_size, h, w)
        if h % ws or w % ws:
            raise ShapeError(f"Window {ws} does not tile a {h}x{w} map")
        shift = ws // 2 if self.shifted and ws < min(h, w) else 0

        shortcut = x
        y = self.norm1(x).view(b, h, w, c)
        mask = None
        if shift:
            y = torch.roll(y, shifts=(-shift, -shift), dims=(1, 2))
            mask = shifted_window_mask(h, w, ws, shift, device=x.device).to(x.dtype)
        windows = self.attn(window_partition(y, ws), mask)
        y = window_reverse(windows, ws, h, w)
        if shift:
            y = torch.roll(y, shifts=(shift, shift), dims=(1, 2))
        x = shortcut + y.reshape(b, n, c)
        return x + self.mlp(self.norm2(x))


class EncoderStage(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, blocks: List[nn.Module],
                 grid_size: int, adapter_reduction: Optional[int] = None):
        super().__init__()
        self.embed = nn.Conv2d(in_channels, out_channels, kernel_size=stride, stride=stride)
        self.pos_embed = nn.Parameter(torch.zeros(1, out_channels, grid_size, grid_size))
        self.blocks = nn.ModuleList(blocks)
        self.adapters = None
        if adapter_reduction is not None:
            self.adapters = nn.ModuleList(Adapter(out_channels, adapter_reduction) for _ in blocks)
        self.norm = nn.LayerNorm(out_channels)

    def forward(self, x: torch.Tensor, use_adapters: bool = True) -> torch.Tensor:
        x = self.embed(x)
        b, c, h, w = x.shape
        pos = self.pos_embed
        if pos.shape[-2:] != (h, w):
            pos = F.interpolate(pos, size=(h, w), mode="bilinear", align_corners=False)
        tokens = (x + pos).flatten(2).transpose(1, 2)
        for i, block in enumerate(self.blocks):
            if self.adapters is not None and use_adapters:
                tokens = self.adapters[i](tokens)
            tokens = block(tokens, (h, w))
        tokens = self.norm(tokens)
        return tokens.transpose(1, 2).reshape(b, c, h, w)


class HierarchicalEncoder(nn.Module):
    """Four-stage encoder producing features at strides 4/8/16/32."""

    def __init__(self, in_channels: int, base_channels: int, depths: Sequence[int], head_dim: int,
                 image_size: int, mlp_ratio: float = 2.0, attention: str = "global",
                 window_size: int = 4, adapter_reduction: Optional[int] = None):
        super().__init__()
        if len(depths) != NUM_SCALES or min(depths) < 1:
            raise ConfigurationError(f"Need four positive stage depths, got {tuple(depths)}")
        if attention not in ("global", "window"):
            raise ConfigurationError(f"Unknown attention kind '{attention}'")
        self.in_channels = in_channels
        self.channels = stage_channels(base_channels)
        stages = []
        prev = in_channels
        for i, (width, depth) in enumerate(zip(self.channels, depths)):
            heads = max(1, width // head_dim)
            if attention == "global":
                blocks = [TransformerBlock(width, heads, mlp_ratio) for _ in range(depth)]
            else:
                blocks = [WindowBlock(width, heads, window_size, shifted=bool(j % 2), mlp_ratio=mlp_ratio)
                          for j in range(depth)]
            stride = STRIDES[0] if i == 0 else 2
            grid = max(1, image_size // STRIDES[i])
            stages.append(EncoderStage(prev, width, stride, blocks, grid, adapter_reduction))
            prev = width
        self.stages = nn.ModuleList(stages)
        self.apply(_init_weights)
        for stage in self.stages:
            nn.init.trunc_normal_(stage.pos_embed, std=0.02)
            if stage.adapters is not None:
                for adapter in stage.adapters:
                    adapter.reset_identity()

    def forward(self, image: torch.Tensor, use_adapters: bool = True) -> MultiScaleFeatures:
        check_image(image, self.in_channels)
        features = []
        x = image
        for stage in self.stages:
            x = stage(x, use_adapters=use_adapters)
            features.append(x)
        return tuple(features)

    def freeze_backbone(self) -> None:
        """Everything but the adapters stops receiving updates."""
        for name, param in self.named_parameters():
            param.requires_grad = ".adapters." in name


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, mode="fan_out", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def encode_optical(image: torch.Tensor, encoder: HierarchicalEncoder, use_adapters: bool = True) -> MultiScaleFeatures:
    if encoder.in_channels != 3:
        raise ConfigurationError("The optical encoder must take three bands")
    return encoder(image, use_adapters=use_adapters)


def encode_sar(image: torch.Tensor, encoder: HierarchicalEncoder) -> MultiScaleFeatures:
    if encoder.in_channels != 4:
        raise ConfigurationError("The SAR encoder must take four polarizations")
    return encoder(image)
