from dataclasses import replace

import numpy as np
import pytest
import torch

from stsf_cd.checkpoint import config_hash, read_archive
from stsf_cd.errors import ArtifactIOError, IncompatibleCheckpointError
from stsf_cd.model import build_model
from stsf_cd.trainer import load_checkpoint, save_checkpoint


def test_roundtrip_is_bitwise(tmp_path, tiny_config):
    model = build_model(tiny_config, seed=2)
    path = save_checkpoint(model, tmp_path / "model.npz")
    restored = load_checkpoint(path)
    original = model.state_dict()
    for name, tensor in restored.state_dict().items():
        assert torch.equal(tensor, original[name]), name


def test_header_preserves_frozen_flags(tmp_path, tiny_config):
    model = build_model(tiny_config)
    header, arrays = read_archive(save_checkpoint(model, tmp_path / "model.npz"))
    leaves = header["leaves"]
    assert header["config_hash"] == tiny_config.config_hash()
    assert all(leaves[n]["frozen"] for n, _ in model.prior_generator.named_parameters(prefix="prior_generator"))
    assert all(arr.dtype == np.dtype("<f4") for arr in arrays.values())

    restored = load_checkpoint(tmp_path / "model.npz")
    assert not any(p.requires_grad for p in restored.prior_generator.parameters())


def test_other_variant_is_incompatible(tmp_path, tiny_config):
    path = save_checkpoint(build_model(tiny_config), tmp_path / "full.npz")
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(path, replace(tiny_config, variant="v2"))


def test_missing_checkpoint_is_io_error(tmp_path):
    with pytest.raises(ArtifactIOError):
        load_checkpoint(tmp_path / "absent.npz")


def test_garbage_file_is_incompatible(tmp_path):
    path = tmp_path / "junk.npz"
    path.write_bytes(b"not an archive")
    with pytest.raises(IncompatibleCheckpointError):
        read_archive(path)


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
