# stsf_cd/stcfm.py
"""
Spatio-temporal common feature modeling.

FIM: both modalities are aligned by unshared 1x1 convolutions, a single spatial attention
map A = sigmoid(BN(conv3x3([S_opt', S_sar']))) is computed and applied to both.

GSFM: each recalibrated map is treated as a graph over its pixel grid and passed through
two graph convolutions with a subtracted residual in between, then a 3x3 refinement.
"""
import functools
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgumentError, ShapeError


@dataclass(frozen=True, eq=False)
class GridAdjacency:
    """Renormalized grid adjacency D^-1/2 (A + I) D^-1/2 as a sparse (N, N) matrix."""
    matrix: torch.Tensor
    height: int
    width: int
    connectivity: int

    @property
    def num_nodes(self) -> int:
        return self.height * self.width

    def to_dense(self) -> torch.Tensor:
        return self.matrix.to_dense()

    def aggregate(self, x: torch.Tensor) -> torch.Tensor:
        """A @ x for node features x of shape (B, N, C)."""
        b, n, c = x.shape
        if n != self.num_nodes:
            raise ShapeError(f"Features have {n} nodes, adjacency has {self.num_nodes}")
        a = self.matrix.to(dtype=x.dtype, device=x.device)
        flat = x.permute(1, 0, 2).reshape(n, b * c)
        return torch.sparse.mm(a, flat).reshape(n, b, c).permute(1, 0, 2)


@functools.lru_cache(maxsize=64)
def build_grid_adjacency(height: int, width: int, connectivity: int = 8) -> GridAdjacency:
    if height < 1 or width < 1:
        raise InvalidArgumentError(f"Grid {height}x{width} has no nodes")
    if connectivity not in (4, 8):
        raise InvalidArgumentError(f"Connectivity must be 4 or 8, got {connectivity}")

    idx = np.arange(height * width).reshape(height, width)
    rows, cols = [idx.ravel()], [idx.ravel()]
    offsets = [(0, 1), (1, 0)] + ([(1, 1), (1, -1)] if connectivity == 8 else [])
    for dr, dc in offsets:
        src = idx[0:height - dr, max(0, -dc):width - max(0, dc)].ravel()
        dst = idx[dr:height, max(0, dc):width - max(0, -dc)].ravel()
        rows += [src, dst]
        cols += [dst, src]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    degree = np.bincount(rows, minlength=height * width).astype(np.float64)
    values = 1.0 / np.sqrt(degree[rows] * degree[cols])
    matrix = torch.sparse_coo_tensor(
        torch.from_numpy(np.stack([rows, cols])), torch.from_numpy(values),
        size=(height * width, height * width), dtype=torch.float64,
    ).coalesce()
    return GridAdjacency(matrix, height, width, connectivity)


class FeatureInteraction(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.align_opt = nn.Conv2d(channels, channels, 1)
        self.align_sar = nn.Conv2d(channels, channels, 1)
        self.projector = nn.Conv2d(2 * channels, 1, 3, padding=1)
        self.norm = nn.BatchNorm2d(1)

    def attention(self, aligned_opt: torch.Tensor, aligned_sar: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.norm(self.projector(torch.cat([aligned_opt, aligned_sar], dim=1))))

    def forward(self, s_opt: torch.Tensor, s_sar: torch.Tensor,
                attention: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if s_opt.shape[-2:] != s_sar.shape[-2:]:
            raise ShapeError(f"Spatial sizes differ: {tuple(s_opt.shape)} vs {tuple(s_sar.shape)}")
        a_opt = self.align_opt(s_opt)
        a_sar = self.align_sar(s_sar)
        if attention is None:
            attention = self.attention(a_opt, a_sar)
        return a_opt * attention, a_sar * attention, attention


def fim_forward(s_opt: torch.Tensor, s_sar: torch.Tensor, fim: FeatureInteraction,
                attention: Optional[torch.Tensor] = None):
    """Returns (C_opt^st, C_sar^st, A); `attention` overrides A when given."""
    return fim(s_opt, s_sar, attention)


class GraphStructureModeling(nn.Module):
    def __init__(self, channels: int, connectivity: int = 8):
        super().__init__()
        self.connectivity = connectivity
        self.w1 = nn.Parameter(torch.empty(channels, channels))
        self.b1 = nn.Parameter(torch.zeros(channels))
        self.w2 = nn.Parameter(torch.empty(channels, channels))
        self.b2 = nn.Parameter(torch.zeros(channels))
        nn.init.xavier_uniform_(self.w1)
        nn.init.xavier_uniform_(self.w2)
        self.refine = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.ReLU(),
        )

    def graph_stage(self, x: torch.Tensor, adj: Optional[GridAdjacency] = None) -> torch.Tensor:
        b, c, h, w = x.shape
        if adj is None:
            adj = build_grid_adjacency(h, w, self.connectivity)
        if adj.num_nodes != h * w:
            raise ShapeError(f"{h}x{w} map has {h * w} nodes, adjacency has {adj.num_nodes}")
        nodes = x.flatten(2).transpose(1, 2)
        h1 = adj.aggregate(nodes @ self.w1) + self.b1
        residual = h1 - nodes
        out = F.relu(adj.aggregate(residual @ self.w2) + self.b2)
        return out.transpose(1, 2).reshape(b, c, h, w)

    def forward(self, x: torch.Tensor, adj: Optional[GridAdjacency] = None) -> torch.Tensor:
        return self.refine(self.graph_stage(x, adj))


def gsfm_forward(c_st: torch.Tensor, adj: GridAdjacency, gsfm: GraphStructureModeling) -> torch.Tensor:
    return gsfm(c_st, adj)


class SpatioTemporalCommon(nn.Module):
    """FIM followed by per-modality GSFM for one scale. `graph_pool` > 1 runs the graph on a pooled grid."""

    def __init__(self, channels: int, use_gsfm: bool = True, connectivity: int = 8, graph_pool: int = 1):
        super().__init__()
        self.fim = FeatureInteraction(channels)
        self.graph_pool = graph_pool
        self.gsfm_opt = GraphStructureModeling(channels, connectivity) if use_gsfm else None
        self.gsfm_sar = GraphStructureModeling(channels, connectivity) if use_gsfm else None

    def _graph(self, gsfm: GraphStructureModeling, x: torch.Tensor) -> torch.Tensor:
        if self.graph_pool <= 1:
            return gsfm(x)
        pooled = F.avg_pool2d(x, self.graph_pool)
        y = gsfm.graph_stage(pooled)
        y = F.interpolate(y, size=x.shape[-2:], mode="bilinear", align_corners=False)
        return gsfm.refine(y)

    def forward(self, s_opt: torch.Tensor, s_sar: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        c_opt, c_sar, _ = self.fim(s_opt, s_sar)
        if self.gsfm_opt is None:
            return c_opt, c_sar
        return self._graph(self.gsfm_opt, c_opt), self._graph(self.gsfm_sar, c_sar)


def stcfm_forward(s_opt: torch.Tensor, s_sar: torch.Tensor, block: SpatioTemporalCommon):
    return block(s_opt, s_sar)


class CommonFeatureModeling(nn.ModuleList):
    def __init__(self, channels: Sequence[int], use_gsfm: bool = True, connectivity: int = 8,
                 graph_pool: Sequence[int] = (2, 1, 1, 1)):
        super().__init__(
            SpatioTemporalCommon(c, use_gsfm, connectivity, pool) for c, pool in zip(channels, graph_pool)
        )

    def forward(self, s_opt, s_sar):
        pairs = [block(o, s) for block, o, s in zip(self, s_opt, s_sar)]
        return tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)
