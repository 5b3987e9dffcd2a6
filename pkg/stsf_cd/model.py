# stsf_cd/model.py
"""Model assembly, ablation variants and parameter bookkeeping."""
import hashlib
import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Tuple

import torch
import torch.nn as nn

from .checkpoint import config_hash
from .errors import ConfigurationError, ShapeError
from .head import Decoder
from .msfe import HierarchicalEncoder, encode_optical, encode_sar, stage_channels
from .pgffm import FUSION_MODES, PriorGuidedFusion
from .spg import DEFAULT_PRIOR_SEED, SemanticPriorGenerator
from .stcfm import CommonFeatureModeling

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelVariant:
    use_fim: bool
    use_gsfm: bool
    use_pgffm: bool

    def __post_init__(self):
        if self.use_gsfm and not self.use_fim:
            raise ConfigurationError("GSFM consumes FIM output; enable FIM as well")

    @classmethod
    def from_name(cls, name: str) -> "ModelVariant":
        if name not in VARIANTS:
            raise ConfigurationError(f"Unknown variant '{name}', valid: {list(VARIANTS)}")
        return cls(*VARIANTS[name])


VARIANTS = {
    "baseline": (False, False, False),
    "v1": (True, False, False),
    "v2": (True, True, False),
    "full": (True, True, True),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "full"
    num_classes: int = 7
    image_size: int = 64
    base_channels: int = 16
    optical_depths: Tuple[int, ...] = (1, 1, 2, 1)
    sar_depths: Tuple[int, ...] = (1, 1, 2, 1)
    prior_depths: Tuple[int, ...] = (1, 1, 2, 1)
    head_dim: int = 16
    mlp_ratio: float = 2.0
    adapter_reduction: int = 4
    window_size: int = 4
    connectivity: int = 8
    graph_pool: Tuple[int, ...] = (2, 1, 1, 1)
    fusion_mode: str = "gated_sum"
    projector_hidden: int = 8
    decoder_channels: int = 32
    # stand-ins for pretrained weights: the frozen optical trunk and the prior generator
    backbone_seed: int = 20250916
    prior_seed: int = DEFAULT_PRIOR_SEED

    @classmethod
    def large_scale(cls, **overrides) -> "ModelConfig":
        large = dict(
            image_size=512,
            base_channels=96,
            optical_depths=(2, 3, 16, 3),
            sar_depths=(2, 2, 6, 2),
            prior_depths=(2, 3, 16, 3),
            head_dim=32,
            mlp_ratio=4.0,
            window_size=8,
            decoder_channels=128,
            projector_hidden=16,
        )
        large.update(overrides)
        return cls(**large)

    @property
    def flags(self) -> ModelVariant:
        return ModelVariant.from_name(self.variant)

    @property
    def channels(self) -> Tuple[int, ...]:
        return stage_channels(self.base_channels)

    def to_dict(self) -> Dict[str, object]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "ModelConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def validate(self) -> None:
        self.flags
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(f"Unknown fusion mode '{self.fusion_mode}', valid: {FUSION_MODES}")
        if self.num_classes < 2:
            raise ConfigurationError("Need at least two classes")
        if self.image_size % 32:
            raise ConfigurationError(f"Image size {self.image_size} is not divisible by 32")
        for width in self.channels:
            if width % max(1, width // self.head_dim):
                raise ConfigurationError(f"Width {width} does not split into heads of {self.head_dim}")


class SemanticChangeNet(nn.Module):
    """
    optical (epoch 1) + SAR (epoch 2) -> (num_classes, H, W) logits.

    baseline: specific difference only; v1 adds FIM; v2 adds GSFM; full adds the prior
    generator and prior-guided fusion.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        flags = config.flags
        channels = config.channels

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.backbone_seed)
            self.optical_encoder = HierarchicalEncoder(
                3, config.base_channels, config.optical_depths, config.head_dim, config.image_size,
                mlp_ratio=config.mlp_ratio, attention="global", adapter_reduction=config.adapter_reduction,
            )
        self.optical_encoder.freeze_backbone()
        self.sar_encoder = HierarchicalEncoder(
            4, config.base_channels, config.sar_depths, config.head_dim, config.image_size,
            mlp_ratio=config.mlp_ratio, attention="window", window_size=config.window_size,
        )
        self.stcfm = None
        if flags.use_fim:
            self.stcfm = CommonFeatureModeling(channels, flags.use_gsfm, config.connectivity, config.graph_pool)
        self.prior_generator = None
        self.pgffm = None
        if flags.use_pgffm:
            self.prior_generator = SemanticPriorGenerator(
                config.base_channels, config.prior_depths, config.head_dim, config.image_size,
                mlp_ratio=config.mlp_ratio, seed=config.prior_seed,
            )
            self.pgffm = PriorGuidedFusion(channels, config.projector_hidden, config.fusion_mode)
        self.decoder = Decoder(channels, config.decoder_channels, config.num_classes)

    @property
    def stages(self) -> List[str]:
        flags = self.config.flags
        names = ["optical_encoder", "sar_encoder"]
        if flags.use_fim:
            names.append("fim")
        if flags.use_gsfm:
            names.append("gsfm")
        if flags.use_pgffm:
            names += ["prior_generator", "pgffm"]
        return names + ["decoder"]

    def features(self, optical: torch.Tensor, sar: torch.Tensor) -> Dict[str, object]:
        if optical.shape[-2:] != sar.shape[-2:] or optical.shape[0] != sar.shape[0]:
            raise ShapeError(f"Optical {tuple(optical.shape)} and SAR {tuple(sar.shape)} are not co-registered")
        out: Dict[str, object] = {
            "s_opt": encode_optical(optical, self.optical_encoder),
            "s_sar": encode_sar(sar, self.sar_encoder),
        }
        if self.stcfm is not None:
            out["c_opt"], out["c_sar"] = self.stcfm(out["s_opt"], out["s_sar"])
        if self.pgffm is not None:
            out["p_opt"] = self.prior_generator(optical)
            out["p_sar"] = self.prior_generator(sar)
            out["fused"], out["intensity"], out["mix"] = self.pgffm(
                out["s_opt"], out["s_sar"], out["c_opt"], out["c_sar"], out["p_opt"], out["p_sar"],
                return_details=True,
            )
        elif self.stcfm is not None:
            out["fused"] = tuple(o - s for o, s in zip(out["c_opt"], out["c_sar"]))
        else:
            out["fused"] = tuple(o - s for o, s in zip(out["s_opt"], out["s_sar"]))
        return out

    def forward(self, optical: torch.Tensor, sar: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.features(optical, sar)["fused"])

    def change_intensity_maps(self, optical: torch.Tensor, sar: torch.Tensor) -> List[torch.Tensor]:
        if self.pgffm is None:
            raise ConfigurationError(f"Variant '{self.config.variant}' has no prior-guided fusion")
        p_opt = self.prior_generator(optical)
        p_sar = self.prior_generator(sar)
        return [scale.change_intensity(o, s) for scale, o, s in zip(self.pgffm, p_opt, p_sar)]


def build_model(config: ModelConfig, seed: int = 0) -> SemanticChangeNet:
    """Trainable parts are initialized from `seed`; frozen parts from the config's fixed seeds."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = SemanticChangeNet(config)
    counts = parameter_counts(model)
    logger.debug("Built %s: stages=%s params=%s", config.variant, model.stages, counts)
    return model


def parameter_counts(model: nn.Module) -> Dict[str, int]:
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return {"total": total, "trainable": trainable, "frozen": total - trainable}


def frozen_leaves(model: nn.Module) -> Dict[str, torch.Tensor]:
    return {name: p for name, p in model.named_parameters() if not p.requires_grad}


def frozen_checksum(model: nn.Module) -> str:
    """SHA-256 over the names and float bytes of every frozen parameter."""
    digest = hashlib.sha256()
    for name, param in sorted(frozen_leaves(model).items()):
        digest.update(name.encode("utf-8"))
        digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def model_config_for(variant: str = "full", scale: str = "desk", **overrides) -> ModelConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if scale == "large":
        return ModelConfig.large_scale(variant=variant, **overrides)
    return replace(ModelConfig(variant=variant), **overrides)
