# stsf_cd/trainer.py
"""
Training and evaluation loop.

fit() reads a synthesized dataset, trains one variant with Adam on every non-frozen
parameter and writes, under `out`:

    train_meta.json          stages, parameter counts, config hash, frozen checksums
    log.jsonl                {iter, loss, val_miou?, lr, wallclock_s} per log interval
    checkpoints/iter_N.npz   periodic checkpoints
    model_final.npz          checkpoint after the last iteration
"""
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_archive_into, read_archive, save_archive
from .errors import ArtifactIOError, ConfigurationError, InvalidArgumentError, TrainingDivergedError
from .head import class_weights_from_counts, loss, predict
from .metrics import ConfusionMatrix, MetricsReport, evaluate, miou
from .model import (
    ModelConfig,
    SemanticChangeNet,
    build_model,
    frozen_checksum,
    model_config_for,
    parameter_counts,
)
from .synthscenes import load_sample, read_manifest, split_samples

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
COARSEST_STRIDE = 32


@dataclass
class TrainConfig:
    iterations: int = 500
    batch_size: int = 4
    learning_rate: float = 5e-4
    seed: int = 0
    variant: str = "full"
    fusion_mode: str = "gated_sum"
    class_weight_mode: str = "inverse_frequency"
    dataset_root: str = "data/synth"
    checkpoint_interval: int = 100
    log_interval: int = 10
    val_interval: int = 100
    num_classes: int = 7
    scale: str = "desk"
    base_channels: Optional[int] = None
    train_split: str = "train"
    eval_split: str = "val"
    out: str = "runs/default"

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise InvalidArgumentError(f"learning_rate must be non-negative, got {self.learning_rate}")
        for name in ("checkpoint_interval", "log_interval", "val_interval"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")

    @classmethod
    def from_mapping(cls, config: Mapping[str, Any]) -> "TrainConfig":
        """Pick the training keys out of a resolved run configuration."""
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in config.items() if k in names})

    def model_config(self, image_size: int) -> ModelConfig:
        return model_config_for(
            self.variant, self.scale,
            num_classes=self.num_classes,
            fusion_mode=self.fusion_mode,
            base_channels=self.base_channels,
            image_size=image_size,
        )


@dataclass
class SceneTensors:
    """A split loaded into memory: optical (N,3,H,W), sar (N,4,H,W), labels (N,H,W)."""
    ids: List[str]
    optical: torch.Tensor
    sar: torch.Tensor
    labels: torch.Tensor

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def size(self) -> int:
        return int(self.optical.shape[-1])

    def batch(self, index: Sequence[int]) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        idx = torch.as_tensor(list(index), dtype=torch.long)
        return self.optical[idx], self.sar[idx], self.labels[idx]

    def subset(self, index: Sequence[int]) -> "SceneTensors":
        return SceneTensors([self.ids[i] for i in index], *self.batch(index))


def binarize_labels(labels: np.ndarray) -> np.ndarray:
    return (labels > 0).astype(labels.dtype)


def load_split(root: PathLike, split: str, num_classes: int = 7) -> SceneTensors:
    """Read every sample of one split; labels are binarized when num_classes == 2."""
    dirs = split_samples(root, split)
    if not dirs:
        raise ArtifactIOError(f"Split '{split}' of {root} holds no samples")
    optical, sar, labels = [], [], []
    for sample_dir in dirs:
        sample = load_sample(sample_dir)
        if "labels" not in sample:
            raise ArtifactIOError(f"Sample {sample_dir} has no label.png")
        lab = sample["labels"]
        optical.append(sample["optical"])
        sar.append(sample["sar"])
        labels.append(binarize_labels(lab) if num_classes == 2 else lab)
    return SceneTensors(
        ids=[d.name for d in dirs],
        optical=torch.from_numpy(np.stack(optical)),
        sar=torch.from_numpy(np.stack(sar)),
        labels=torch.from_numpy(np.stack(labels).astype(np.int64)),
    )


def class_counts(labels: torch.Tensor, num_classes: int) -> np.ndarray:
    return np.bincount(labels.reshape(-1).numpy(), minlength=num_classes)[:num_classes]


def build_optimizer(model: nn.Module, learning_rate: float) -> torch.optim.Adam:
    trainable = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.Adam(trainable, lr=learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)


def _dump_divergence(path: Path, iteration: int, value: float, model: nn.Module,
                     batch_ids: Sequence[str]) -> Path:
    norms = {}
    for name, param in model.named_parameters():
        if param.requires_grad:
            norm = float(param.detach().norm())
            norms[name] = norm if math.isfinite(norm) else str(norm)
    payload = {"iter": iteration, "loss": str(value), "batch": list(batch_ids), "param_norms": norms}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def train_step(model: SemanticChangeNet, optimizer: torch.optim.Optimizer,
               batch: Tuple[torch.Tensor, torch.Tensor, torch.Tensor],
               class_weights: Optional[torch.Tensor] = None, *,
               iteration: int = 0, dump_dir: Optional[PathLike] = None,
               batch_ids: Sequence[str] = ()) -> float:
    """One Adam update; frozen leaves are outside the optimizer and never change."""
    optical, sar, labels = batch
    model.train()
    optimizer.zero_grad(set_to_none=True)
    value = loss(model(optical, sar), labels, class_weights)
    scalar = float(value.detach())
    if not math.isfinite(scalar):
        dump = None
        if dump_dir is not None:
            dump = _dump_divergence(Path(dump_dir) / "diverged.json", iteration, scalar, model, batch_ids)
        raise TrainingDivergedError(f"Loss became {scalar} at iteration {iteration}", dump_path=dump)
    value.backward()
    optimizer.step()
    return scalar


def batch_schedule(num_samples: int, batch_size: int, iterations: int, seed: int) -> List[List[int]]:
    """Per-epoch seeded permutations cut into batches; a short tail wraps into the next epoch."""
    rng = np.random.default_rng(seed)
    stream: List[int] = []
    needed = iterations * batch_size
    while len(stream) < needed:
        stream.extend(int(i) for i in rng.permutation(num_samples))
    return [stream[i * batch_size:(i + 1) * batch_size] for i in range(iterations)]


@torch.no_grad()
def predict_labels(model: SemanticChangeNet, optical: torch.Tensor, sar: torch.Tensor,
                   batch_size: int = 8) -> torch.Tensor:
    was_training = model.training
    model.eval()
    try:
        preds = [
            predict(model(optical[i:i + batch_size], sar[i:i + batch_size]))
            for i in range(0, optical.shape[0], batch_size)
        ]
    finally:
        model.train(was_training)
    return torch.cat(preds)


def confusion_for(model: SemanticChangeNet, data: SceneTensors, batch_size: int = 8,
                  self_score: bool = False) -> ConfusionMatrix:
    pred = predict_labels(model, data.optical, data.sar, batch_size).numpy()
    truth = pred if self_score else data.labels.numpy()
    return ConfusionMatrix.zeros(model.config.num_classes).accumulate(pred, truth)


def evaluate_model(model: SemanticChangeNet, data: SceneTensors, batch_size: int = 8,
                   self_score: bool = False) -> MetricsReport:
    return evaluate(confusion_for(model, data, batch_size, self_score))


def save_checkpoint(model: SemanticChangeNet, path: PathLike, **extra: Any) -> Path:
    header = {"model_config": model.config.to_dict(), "stages": model.stages}
    header.update(extra)
    return save_archive(model, path, model.config.config_hash(), extra=header)


def load_checkpoint(path: PathLike, config: Optional[ModelConfig] = None) -> SemanticChangeNet:
    """
    Rebuild the model recorded in the archive header (or `config` when given) and load
    every leaf into it. A config other than the recorded one is an incompatible checkpoint.
    """
    header, _ = read_archive(path)
    if config is None:
        config = ModelConfig.from_dict(header.get("model_config", {}))
    model = SemanticChangeNet(config)
    load_archive_into(model, path, config.config_hash())
    model.eval()
    return model


@dataclass
class FitResult:
    model: SemanticChangeNet
    losses: List[float]
    records: List[Dict[str, Any]]
    out: Path
    final_checkpoint: Path
    frozen_checksum_before: str
    frozen_checksum_after: str
    meta: Dict[str, Any] = field(default_factory=dict)


def _write_json(path: Path, payload: Mapping[str, Any]) -> None:
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}") from e


def check_batch_statistics(model_config: ModelConfig, batch_size: int) -> None:
    """Batch-normalized fusion blocks need two values per channel at stride 32 in training mode."""
    if not model_config.flags.use_fim:
        return
    coarsest = (model_config.image_size // COARSEST_STRIDE) ** 2
    if batch_size * coarsest < 2:
        raise ConfigurationError(
            f"batch_size {batch_size} on {model_config.image_size}px tiles leaves a single value per "
            f"channel at stride {COARSEST_STRIDE}; use batch_size >= 2 or larger tiles",
            errors=[{"field": "batch_size", "value": str(batch_size), "type": "integer",
                     "error": f"batch_size * (size // {COARSEST_STRIDE})^2 must be >= 2"}],
        )


def fit(config: TrainConfig, train_data: Optional[SceneTensors] = None,
        eval_data: Optional[SceneTensors] = None) -> FitResult:
    """
    Train one model. Data not passed in is read from `config.dataset_root`; an empty
    or missing eval split simply disables periodic validation.
    """
    if train_data is None:
        read_manifest(config.dataset_root)
        train_data = load_split(config.dataset_root, config.train_split, config.num_classes)
    if eval_data is None and config.dataset_root:
        try:
            eval_data = load_split(config.dataset_root, config.eval_split, config.num_classes)
        except ArtifactIOError:
            logger.info("No '%s' split found, training without validation", config.eval_split)

    model_config = config.model_config(train_data.size)
    model_config.validate()
    check_batch_statistics(model_config, config.batch_size)

    out = Path(config.out)
    try:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"Cannot create output directory {out}: {e}") from e

    model = build_model(model_config, seed=config.seed)
    optimizer = build_optimizer(model, config.learning_rate)
    counts = class_counts(train_data.labels, model_config.num_classes)
    weights = class_weights_from_counts(counts, config.class_weight_mode)
    before = frozen_checksum(model)

    meta = {
        "variant": config.variant,
        "stages": model.stages,
        "parameters": parameter_counts(model),
        "config_hash": model_config.config_hash(),
        "model_config": model_config.to_dict(),
        "train_config": asdict(config),
        "class_counts": counts.tolist(),
        "class_weights": [float(w) for w in weights],
        "frozen_sha256_start": before,
    }
    _write_json(out / "train_meta.json", meta)
    logger.info("Training %s: stages=%s params=%s", config.variant, model.stages, meta["parameters"])

    schedule = batch_schedule(len(train_data), config.batch_size, config.iterations, config.seed)
    losses: List[float] = []
    records: List[Dict[str, Any]] = []
    start = time.perf_counter()
    log_path = out / "log.jsonl"
    with open(log_path, "w") as log_file:
        for it, index in enumerate(schedule, start=1):
            batch_ids = [train_data.ids[i] for i in index]
            value = train_step(model, optimizer, train_data.batch(index), weights,
                               iteration=it, dump_dir=out, batch_ids=batch_ids)
            losses.append(value)
            last = it == config.iterations

            if it % config.log_interval == 0 or last:
                record: Dict[str, Any] = {"iter": it, "loss": value}
                if eval_data is not None and (it % config.val_interval == 0 or last):
                    record["val_miou"] = miou(confusion_for(model, eval_data, config.batch_size))
                record["lr"] = optimizer.param_groups[0]["lr"] if optimizer.param_groups else config.learning_rate
                record["wallclock_s"] = round(time.perf_counter() - start, 3)
                records.append(record)
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
                logger.info("iter %d loss %.4f%s", it, value,
                            f" val_miou {record['val_miou']:.4f}" if "val_miou" in record else "")

            if it % config.checkpoint_interval == 0 and not last:
                save_checkpoint(model, out / "checkpoints" / f"iter_{it}.npz", iteration=it)

    final = save_checkpoint(model, out / "model_final.npz", iteration=config.iterations)
    after = frozen_checksum(model)
    if after != before:
        logger.error("Frozen parameters changed during training")
    meta["frozen_sha256_end"] = after
    _write_json(out / "train_meta.json", meta)
    return FitResult(model, losses, records, out, final, before, after, meta)


def run_ablation(config: TrainConfig, variants: Sequence[str] = ("baseline", "v1", "v2", "full"),
                 seeds: Sequence[int] = (0, 1, 2), eval_split: str = "test") -> Dict[str, Dict[str, Any]]:
    """Train every variant once per seed on one dataset; report test mIoU per run and the mean."""
    train_data = load_split(config.dataset_root, config.train_split, config.num_classes)
    test_data = load_split(config.dataset_root, eval_split, config.num_classes)
    summary: Dict[str, Dict[str, Any]] = {}
    for variant in variants:
        scores = []
        for seed in seeds:
            run = TrainConfig(**dict(asdict(config), variant=variant, seed=seed,
                                     out=str(Path(config.out) / variant / f"seed_{seed}")))
            result = fit(run, train_data, test_data)
            scores.append(evaluate_model(result.model, test_data, config.batch_size).miou)
        summary[variant] = {"miou": scores, "mean_miou": float(np.mean(scores))}
        logger.info("Ablation %s: mean mIoU %.4f", variant, summary[variant]["mean_miou"])
    return summary
