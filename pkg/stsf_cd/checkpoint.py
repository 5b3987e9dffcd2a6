# stsf_cd/checkpoint.py
"""
Parameter archives: one little-endian float32 array per state-dict leaf plus a JSON header.

The header records, per leaf, its shape, original dtype, kind (parameter or buffer) and
frozen flag, together with the hash of the architecture config that produced it.
"""
import hashlib
import json
import logging
import zipfile
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from .errors import ArtifactIOError, IncompatibleCheckpointError

logger = logging.getLogger(__name__)

ARCHIVE_FORMAT = "stsf-ckpt/1"
HEADER_KEY = "__header__"

PathLike = Union[str, Path]


def config_hash(config: Mapping[str, Any]) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _leaf_records(module: nn.Module):
    params = dict(module.named_parameters())
    for name, tensor in module.state_dict().items():
        if name in params:
            yield name, tensor, "parameter", not params[name].requires_grad
        else:
            yield name, tensor, "buffer", True


def save_archive(module: nn.Module, path: PathLike, arch_hash: str,
                 extra: Optional[Mapping[str, Any]] = None) -> Path:
    path = Path(path)
    arrays = {}
    leaves = {}
    for name, tensor, kind, frozen in _leaf_records(module):
        arrays[name] = tensor.detach().cpu().numpy().astype("<f4")
        leaves[name] = {
            "shape": list(tensor.shape),
            "dtype": str(tensor.dtype).replace("torch.", ""),
            "kind": kind,
            "frozen": frozen,
        }
    header = {"format": ARCHIVE_FORMAT, "config_hash": arch_hash, "leaves": leaves}
    if extra:
        header.update(extra)
    arrays[HEADER_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            np.savez(f, **arrays)
    except OSError as e:
        raise ArtifactIOError(f"Cannot write checkpoint {path}: {e}") from e
    logger.debug("Saved %d leaves to %s", len(leaves), path)
    return path


def read_archive(path: PathLike) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactIOError(f"No checkpoint at {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(archive[HEADER_KEY].tobytes().decode("utf-8"))
            arrays = {key: archive[key] for key in archive.files if key != HEADER_KEY}
    except (KeyError, ValueError, UnicodeDecodeError, zipfile.BadZipFile, OSError) as e:
        raise IncompatibleCheckpointError(f"Unreadable checkpoint {path}: {e}") from e
    if not isinstance(header, dict) or header.get("format") != ARCHIVE_FORMAT or "leaves" not in header:
        raise IncompatibleCheckpointError(f"Checkpoint {path} has no valid {ARCHIVE_FORMAT} header")
    return header, arrays


def load_archive_into(module: nn.Module, path: PathLike, arch_hash: str) -> Dict[str, Any]:
    """
    Copy every leaf of the archive into `module`. Nothing is modified unless the hash,
    the leaf names, the shapes and the frozen flags all match.
    """
    header, arrays = read_archive(path)
    if header.get("config_hash") != arch_hash:
        raise IncompatibleCheckpointError(
            "Checkpoint was written for a different architecture",
            errors=[{"field": "config_hash", "value": str(header.get("config_hash")),
                     "type": "hash", "error": f"expected {arch_hash}"}],
        )

    problems = []
    records = {name: (tensor, kind, frozen) for name, tensor, kind, frozen in _leaf_records(module)}
    for name in sorted(set(records) ^ set(arrays)):
        problems.append({"field": name, "value": "N/A", "type": "leaf", "error": "present on one side only"})
    for name, (tensor, kind, frozen) in records.items():
        if name not in arrays:
            continue
        meta = header["leaves"].get(name, {})
        if tuple(arrays[name].shape) != tuple(tensor.shape):
            problems.append({"field": name, "value": str(arrays[name].shape), "type": "shape",
                             "error": f"expected {tuple(tensor.shape)}"})
        if meta.get("frozen") != frozen:
            problems.append({"field": name, "value": str(meta.get("frozen")), "type": "frozen",
                             "error": f"expected frozen={frozen}"})
    if problems:
        raise IncompatibleCheckpointError("Checkpoint leaves do not match the model", errors=problems)

    state = {
        name: torch.from_numpy(arrays[name].astype(np.float32)).to(dtype=tensor.dtype)
        for name, (tensor, _, _) in records.items()
    }
    with torch.no_grad():
        module.load_state_dict(state, strict=True)
    return header
