# stsf_cd/cli.py
"""
Command-line surface: synth, train, eval, predict, inspect-prior, gradcheck.

Every flag is optional and overrides the config file, which overrides the schema
defaults. The merged configuration is validated before any file is written.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
from PIL import Image
from rich.box import ROUNDED
from rich.table import Table

from .config import resolve_config
from .errors import (
    ArtifactIOError,
    ConfigValidationError,
    IncompatibleCheckpointError,
    StsfError,
    TrainingDivergedError,
)
from .gradcheck import SUBNETS, grad_check
from .logs import console, setup_logging
from .metrics import MetricsReport
from .synthscenes import BINARY_CLASS_NAMES, CLASS_NAMES, GeneratorConfig, build_dataset, load_sample, quantize
from .trainer import TrainConfig, evaluate_model, fit, load_checkpoint, load_split, predict_labels

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_CHECKPOINT = 5


def display_error_table(errors: List[Dict[str, Any]], title: str = "Configuration errors") -> None:
    table = Table(title=title, show_header=True, header_style="bold red", box=ROUNDED, show_lines=True)
    table.add_column("Field Name", style="cyan")
    table.add_column("Value", style="yellow")
    table.add_column("Type", style="magenta")
    table.add_column("Error", style="red")
    for error in errors:
        table.add_row(
            str(error.get("field", "unknown")),
            str(error.get("value", "N/A"))[:50],
            str(error.get("type", "unknown")),
            str(error.get("error", "Unknown error")),
        )
    console.print(table)


def _show_errors(e: StsfError) -> None:
    if e.errors:
        display_error_table(e.errors)
    else:
        console.print(f"[red]{e}[/red]")


def display_metrics(report: MetricsReport, class_names: Sequence[str]) -> None:
    summary = Table(title="Scores", box=ROUNDED)
    for name in ("OA", "mIoU", "P_c", "R_c", "F1_bcd", "F1_clf"):
        summary.add_column(name, justify="right")
    summary.add_row(*(f"{v:.4f}" for v in (report.oa, report.miou, report.precision_c,
                                           report.recall_c, report.f1_bcd, report.f1_clf)))
    console.print(summary)

    per_class = Table(title="IoU per class", box=ROUNDED)
    per_class.add_column("Class", style="cyan")
    per_class.add_column("IoU", justify="right")
    for name, value in zip(class_names, report.iou_per_class):
        per_class.add_row(name, "undefined" if value is None else f"{value:.4f}")
    console.print(per_class)


def _out_dir(cfg: Dict[str, Any]) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"Cannot create output directory {out}: {e}") from e
    return out


def _require(cfg: Dict[str, Any], *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ConfigValidationError(
            "Missing required options",
            errors=[{"field": k, "value": "N/A", "type": "string", "error": "Required for this command"}
                    for k in missing],
        )
    for key in keys:
        if not Path(cfg[key]).exists():
            raise ArtifactIOError(f"No {key} at {cfg[key]}")


def _load_pair(sample_dir: str):
    sample = load_sample(sample_dir)
    return torch.from_numpy(sample["optical"])[None], torch.from_numpy(sample["sar"])[None]


def _save_png(array: np.ndarray, path: Path) -> None:
    try:
        Image.fromarray(array.astype(np.uint8)).save(path)
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}") from e


def cmd_synth(cfg: Dict[str, Any]) -> int:
    generator = GeneratorConfig(speckle_looks=cfg["speckle_looks"], cell=cfg["cell"])
    build_dataset(cfg["out"], cfg["count"], cfg["size"], cfg["split"], cfg["seed"], generator, cfg["workers"])
    console.print(f"[bold green]Dataset written[/bold green]: {Path(cfg['out']) / 'manifest.json'}")
    return EXIT_OK


def cmd_train(cfg: Dict[str, Any]) -> int:
    _require(cfg, "dataset_root")
    result = fit(TrainConfig.from_mapping(cfg))
    params = result.meta["parameters"]
    console.print(f"Stages: {' -> '.join(result.model.stages)}")
    console.print(f"Parameters: total {params['total']}, trainable {params['trainable']}, frozen {params['frozen']}")
    console.print(f"[bold green]Final checkpoint[/bold green]: {result.final_checkpoint}")
    return EXIT_OK


def cmd_eval(cfg: Dict[str, Any]) -> int:
    _require(cfg, "checkpoint", "dataset_root")
    model = load_checkpoint(cfg["checkpoint"])
    data = load_split(cfg["dataset_root"], cfg["eval_split"], model.config.num_classes)
    report = evaluate_model(model, data, cfg["batch_size"], self_score=cfg["self_score"])
    path = _out_dir(cfg) / "metrics.json"
    try:
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}") from e
    display_metrics(report, BINARY_CLASS_NAMES if model.config.num_classes == 2 else CLASS_NAMES)
    console.print(f"Report: {path}")
    return EXIT_OK


def cmd_predict(cfg: Dict[str, Any]) -> int:
    _require(cfg, "checkpoint", "sample")
    model = load_checkpoint(cfg["checkpoint"])
    optical, sar = _load_pair(cfg["sample"])
    pred = predict_labels(model, optical, sar)[0].numpy()
    path = _out_dir(cfg) / "pred.png"
    _save_png(pred, path)
    console.print(f"Prediction: {path}")
    return EXIT_OK


def cmd_inspect_prior(cfg: Dict[str, Any]) -> int:
    _require(cfg, "checkpoint", "sample")
    model = load_checkpoint(cfg["checkpoint"])
    optical, sar = _load_pair(cfg["sample"])
    with torch.no_grad():
        maps = model.change_intensity_maps(optical, sar)
    out = _out_dir(cfg)
    for i, m in enumerate(maps, start=1):
        _save_png(quantize(m[0, 0].numpy()), out / f"prior_s{i}.png")
    console.print(f"Wrote {len(maps)} change-intensity maps to {out}")
    return EXIT_OK


def cmd_gradcheck(cfg: Dict[str, Any]) -> int:
    names = cfg.get("subnets") or list(SUBNETS)
    table = Table(title="Gradient check", box=ROUNDED)
    for column in ("Subnet", "Params", "Max rel. error", "Worst leaf", "Kinks", "Result"):
        table.add_column(column)
    failed = 0
    for name in names:
        report = grad_check(name, cfg["tolerance"], seed=cfg["seed"])
        failed += not report.passed
        table.add_row(name, str(report.num_parameters), f"{report.max_rel_error:.2e}",
                      str(report.worst_leaf), str(report.kinks),
                      "[green]pass[/green]" if report.passed else "[red]FAIL[/red]")
    console.print(table)
    return EXIT_OK if not failed else 1


COMMANDS: Dict[str, Callable[[Dict[str, Any]], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "inspect-prior": cmd_inspect_prior,
    "gradcheck": cmd_gradcheck,
}

# flag -> config key, per command; values stay strings until schema coercion
COMMAND_FLAGS: Dict[str, Dict[str, str]] = {
    "synth": {"--count": "count", "--size": "size", "--split": "split",
              "--speckle-looks": "speckle_looks", "--cell": "cell", "--workers": "workers"},
    "train": {"--dataset": "dataset_root", "--variant": "variant", "--iters": "iterations",
              "--batch-size": "batch_size", "--lr": "learning_rate", "--fusion-mode": "fusion_mode",
              "--class-weights": "class_weight_mode", "--num-classes": "num_classes",
              "--scale": "scale", "--base-channels": "base_channels",
              "--checkpoint-interval": "checkpoint_interval", "--log-interval": "log_interval",
              "--val-interval": "val_interval", "--train-split": "train_split", "--eval-split": "eval_split"},
    "eval": {"--checkpoint": "checkpoint", "--dataset": "dataset_root", "--split": "eval_split",
             "--batch-size": "batch_size", "--self-score": "self_score"},
    "predict": {"--checkpoint": "checkpoint", "--sample": "sample"},
    "inspect-prior": {"--checkpoint": "checkpoint", "--sample": "sample"},
    "gradcheck": {"--subnets": "subnets", "--tolerance": "tolerance"},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", dest="seed")
    common.add_argument("--out", dest="out", help="Directory receiving all artifacts")
    common.add_argument("--log-level", dest="log_level")

    parser = argparse.ArgumentParser(prog="stsf", description="Optical/SAR semantic change detection")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, flags in COMMAND_FLAGS.items():
        p = sub.add_parser(command, parents=[common])
        for flag, key in flags.items():
            if key == "self_score":
                p.add_argument(flag, dest=key, action="store_const", const="true")
            else:
                p.add_argument(flag, dest=key)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if args.log_level:
        overrides["log_level"] = args.log_level.upper()
    setup_logging("INFO")

    try:
        cfg = resolve_config(args.config, overrides)
    except ConfigValidationError as e:
        console.print("\n[bold red]Configuration rejected[/bold red]\n")
        _show_errors(e)
        return EXIT_USAGE
    setup_logging(cfg["log_level"])

    try:
        return COMMANDS[args.command](cfg)
    except ConfigValidationError as e:
        _show_errors(e)
        return EXIT_USAGE
    except ArtifactIOError as e:
        console.print(f"[bold red]I/O error[/bold red]: {e}")
        return EXIT_IO
    except TrainingDivergedError as e:
        console.print(f"[bold red]Training diverged[/bold red]: {e} (dump: {e.dump_path})")
        return EXIT_DIVERGED
    except IncompatibleCheckpointError as e:
        console.print(f"[bold red]Incompatible checkpoint[/bold red]: {e}")
        if e.errors:
            display_error_table(e.errors, title="Checkpoint mismatches")
        return EXIT_CHECKPOINT
    except StsfError as e:
        console.print(f"[bold red]Invalid arguments[/bold red]: {e}")
        return EXIT_USAGE
    except Exception as e:
        console.print("\n[bold red]Unexpected Error[/bold red]\n")
        console.print(f"[red]{e!r}[/red]\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
