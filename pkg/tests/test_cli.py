import json

import numpy as np
import pytest
from PIL import Image

from stsf_cd.cli import COMMANDS, main
from stsf_cd.model import ModelConfig, build_model
from stsf_cd.synthscenes import load_sample, split_samples
from stsf_cd.trainer import save_checkpoint


@pytest.fixture(scope="module")
def trained_run(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-train")
    code = main(["train", "--dataset", str(tiny_dataset), "--iters", "2", "--batch-size", "2",
                 "--base-channels", "8", "--log-interval", "1", "--out", str(out)])
    assert code == 0
    return out


def test_synth_writes_reproducible_manifest(tmp_path):
    assert main(["synth", "--count", "10", "--size", "32", "--seed", "4", "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--count", "10", "--size", "32", "--seed", "4", "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "manifest.json").read_text()
    assert first == (tmp_path / "b" / "manifest.json").read_text()
    manifest = json.loads(first)
    assert manifest["count"] == 10
    assert sum(manifest["split_sizes"].values()) == 10
    assert (tmp_path / "a" / manifest["samples"][0]["path"] / "opt.png").exists()


def test_synth_rejects_zero_count(tmp_path):
    assert main(["synth", "--count", "0", "--out", str(tmp_path / "none")]) == 2
    assert not (tmp_path / "none").exists()


def test_unknown_variant_is_usage_error(tmp_path, tiny_dataset):
    assert main(["train", "--dataset", str(tiny_dataset), "--variant", "v3", "--out", str(tmp_path)]) == 2


def test_unknown_flag_is_usage_error():
    assert main(["eval", "--no-such-flag"]) == 2


def test_train_without_dataset_is_io_error(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "run")]) == 3


def test_train_writes_artifacts(trained_run):
    assert (trained_run / "model_final.npz").exists()
    assert len((trained_run / "log.jsonl").read_text().splitlines()) == 2
    meta = json.loads((trained_run / "train_meta.json").read_text())
    assert meta["frozen_sha256_start"] == meta["frozen_sha256_end"]


def test_eval_self_score_is_perfect_and_stable(trained_run, tiny_dataset, tmp_path):
    args = ["eval", "--checkpoint", str(trained_run / "model_final.npz"), "--dataset", str(tiny_dataset),
            "--split", "test", "--self-score"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "metrics.json").read_bytes()
    assert first == (tmp_path / "b" / "metrics.json").read_bytes()
    assert json.loads(first)["oa"] == 1.0


def test_eval_scores_against_labels(trained_run, tiny_dataset, tmp_path):
    args = ["eval", "--checkpoint", str(trained_run / "model_final.npz"), "--dataset", str(tiny_dataset),
            "--split", "test", "--out", str(tmp_path)]
    assert main(args) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["pixel_total"] == 2 * 32 * 32
    assert 0.0 <= report["oa"] <= 1.0


def test_predict_writes_label_map(trained_run, tiny_dataset, tmp_path):
    sample = split_samples(tiny_dataset, "test")[0]
    assert main(["predict", "--checkpoint", str(trained_run / "model_final.npz"),
                 "--sample", str(sample), "--out", str(tmp_path)]) == 0
    pred = np.asarray(Image.open(tmp_path / "pred.png"))
    assert pred.shape == (32, 32)
    assert pred.max() <= 6


def test_inspect_prior_at_init_is_mid_gray(tiny_dataset, tmp_path):
    config = ModelConfig(image_size=32, base_channels=8, head_dim=8, decoder_channels=8, projector_hidden=4)
    checkpoint = save_checkpoint(build_model(config), tmp_path / "init.npz")
    sample = split_samples(tiny_dataset, "val")[0]
    assert main(["inspect-prior", "--checkpoint", str(checkpoint), "--sample", str(sample),
                 "--out", str(tmp_path / "priors")]) == 0
    for i in range(1, 5):
        image = np.asarray(Image.open(tmp_path / "priors" / f"prior_s{i}.png"))
        assert (image == 128).all()


def test_corrupt_checkpoint_exit_code(tiny_dataset, tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"\x00" * 64)
    assert main(["eval", "--checkpoint", str(bad), "--dataset", str(tiny_dataset),
                 "--out", str(tmp_path)]) == 5


def test_predict_requires_sample(trained_run, tmp_path):
    assert main(["predict", "--checkpoint", str(trained_run / "model_final.npz"), "--out", str(tmp_path)]) == 2


def test_gradcheck_single_subnet(tmp_path):
    assert main(["gradcheck", "--subnets", "linear", "--out", str(tmp_path)]) == 0
    assert main(["gradcheck", "--subnets", "nope", "--out", str(tmp_path)]) == 2


def test_synth_accepts_tiles_not_divisible_by_32(tmp_path):
    assert main(["synth", "--count", "1", "--size", "900", "--split", "1,0,0", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    sample = load_sample(tmp_path / manifest["samples"][0]["path"])
    assert sample["labels"].shape == (900, 900)


def test_train_on_tiles_not_divisible_by_32_is_usage_error(tmp_path):
    assert main(["synth", "--count", "2", "--size", "48", "--split", "1,0,0", "--out", str(tmp_path / "d")]) == 0
    assert main(["train", "--dataset", str(tmp_path / "d"), "--out", str(tmp_path / "run")]) == 2
    assert not (tmp_path / "run").exists()


def test_single_tile_batch_is_usage_error(tiny_dataset, tmp_path):
    assert main(["train", "--dataset", str(tiny_dataset), "--batch-size", "1", "--iters", "1",
                 "--base-channels", "8", "--out", str(tmp_path / "run")]) == 2


def test_unexpected_failure_exits_cleanly(monkeypatch, tmp_path):
    def broken(cfg):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(COMMANDS, "synth", broken)
    assert main(["synth", "--out", str(tmp_path)]) == 2
