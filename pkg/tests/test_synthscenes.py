import json

import numpy as np
import pytest

from stsf_cd.errors import ArtifactIOError, ChangeConflictError, InvalidArgumentError
from stsf_cd.synthscenes import (
    BUILDING,
    OPTICAL_SIGNATURES,
    OTHER,
    ROAD,
    SAR_BACKSCATTER,
    WATER,
    ChangeEvent,
    ChangeSpec,
    GeneratorConfig,
    apply_changes,
    assign_splits,
    build_dataset,
    dequantize,
    generate_sample,
    load_sample,
    quantize,
    read_manifest,
    render_optical,
    render_sar,
    sample_seed,
    snap_to_cells,
    split_sizes,
    synth_landcover,
    transition_labels,
)


def test_landcover_is_deterministic():
    a = synth_landcover(7, 64)
    b = synth_landcover(7, 64)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, synth_landcover(8, 64))


def test_landcover_covers_every_class_and_background_dominates():
    grid = synth_landcover(7, 64)
    assert grid.shape == (64, 64)
    assert set(np.unique(grid)) == {OTHER, BUILDING, ROAD, WATER}
    assert (grid == OTHER).sum() > grid.size / 2


def test_landcover_rejects_small_tiles():
    with pytest.raises(InvalidArgumentError):
        synth_landcover(0, 16)


def test_empty_generator_gives_blank_tile():
    grid = synth_landcover(0, 16, GeneratorConfig.empty())
    assert grid.shape == (16, 16)
    assert not grid.any()


def test_apply_changes_without_events_is_identity():
    base = synth_landcover(3, 64)
    epoch2, labels = apply_changes(base, ChangeSpec())
    assert np.array_equal(epoch2, base)
    assert not labels.any()


def test_added_building_labels_exact_footprint():
    base = np.zeros((32, 32), dtype=np.uint8)
    event = ChangeEvent("rectangle", BUILDING, "add", {"top": 5, "left": 6, "height": 10, "width": 10})
    epoch2, labels = apply_changes(base, ChangeSpec([event]))
    assert (labels == 1).sum() == 100
    assert (labels != 0).sum() == 100
    assert (epoch2 == BUILDING).sum() == 100


def test_removed_water_disk_matches_cell_enumeration():
    base = np.full((32, 32), WATER, dtype=np.uint8)
    event = ChangeEvent("disk", WATER, "remove", {"cy": 15, "cx": 16, "radius": 5})
    _, labels = apply_changes(base, ChangeSpec([event]))
    expected = sum(
        1 for r in range(32) for c in range(32) if (r - 15) ** 2 + (c - 16) ** 2 <= 25
    )
    assert (labels == 6).sum() == expected


def test_events_only_touch_eligible_cells():
    base = np.zeros((32, 32), dtype=np.uint8)
    base[:, 16:] = ROAD
    event = ChangeEvent("rectangle", BUILDING, "add", {"top": 0, "left": 8, "height": 4, "width": 16})
    epoch2, labels = apply_changes(base, ChangeSpec([event]))
    assert (labels == 1).sum() == 4 * 8
    assert np.array_equal(epoch2[:, 16:], base[:, 16:])


def test_conflicting_events_raise():
    base = np.zeros((32, 32), dtype=np.uint8)
    add_building = ChangeEvent("rectangle", BUILDING, "add", {"top": 0, "left": 0, "height": 8, "width": 8})
    add_water = ChangeEvent("disk", WATER, "add", {"cy": 6, "cx": 6, "radius": 3})
    with pytest.raises(ChangeConflictError):
        apply_changes(base, ChangeSpec([add_building, add_water]))


def test_event_outside_tile_is_rejected():
    base = np.zeros((32, 32), dtype=np.uint8)
    event = ChangeEvent("rectangle", BUILDING, "add", {"top": 28, "left": 0, "height": 8, "width": 8})
    with pytest.raises(InvalidArgumentError):
        apply_changes(base, ChangeSpec([event]))


@pytest.mark.parametrize("seed", range(5))
def test_labels_follow_transition_table(seed):
    sample = generate_sample(seed, 64)
    recomputed = transition_labels(sample.landcover_t1, sample.landcover_t2)
    assert np.array_equal(recomputed, sample.labels)


def test_optical_texture_is_bounded():
    image = render_optical(np.zeros((64, 64), dtype=np.uint8), seed=1)
    assert image.shape == (3, 64, 64)
    assert image.std(axis=(1, 2)).max() <= 0.05
    assert np.abs(image - OPTICAL_SIGNATURES[OTHER][:, None, None]).max() <= 0.05 + 1e-6


def test_optical_separates_building_from_water():
    grid = np.zeros((32, 32), dtype=np.uint8)
    grid[:, :16] = BUILDING
    grid[:, 16:] = WATER
    image = render_optical(grid, seed=2)
    gap = np.abs(image[:, :, :16].mean(axis=(1, 2)) - image[:, :, 16:].mean(axis=(1, 2)))
    assert gap.max() >= 0.15
    assert np.array_equal(image, render_optical(grid, seed=2))


def test_sar_without_speckle_is_backscatter_constant():
    grid = np.zeros((16, 16), dtype=np.uint8)
    grid[4:8, 4:8] = BUILDING
    image = render_sar(grid, seed=0, looks=None)
    assert np.allclose(image[:, 5, 5], SAR_BACKSCATTER[BUILDING])
    assert np.allclose(image[:, 0, 0], SAR_BACKSCATTER[OTHER])


def test_sar_speckle_is_unit_mean():
    image = render_sar(np.zeros((128, 128), dtype=np.uint8), seed=4, looks=4.0)
    means = image.mean(axis=(1, 2))
    assert np.all(np.abs(means / SAR_BACKSCATTER[OTHER] - 1.0) <= 0.05)
    assert np.array_equal(image, render_sar(np.zeros((128, 128), dtype=np.uint8), seed=4))


def test_split_sizes_largest_remainder():
    assert split_sizes(10, (0.5, 0.3, 0.2)) == (5, 3, 2)
    assert split_sizes(7, (0.5, 0.3, 0.2)) == (4, 2, 1)


def test_split_assignment_is_seeded():
    assert assign_splits(10, (0.5, 0.3, 0.2), 9) == assign_splits(10, (0.5, 0.3, 0.2), 9)


def test_quantization_roundtrip_is_within_half_step():
    x = np.linspace(0, 1, 101, dtype=np.float32)
    assert np.abs(dequantize(quantize(x)) - x).max() <= 0.5 / 255 + 1e-7


def test_build_dataset_layout_and_determinism(tmp_path):
    manifest = build_dataset(tmp_path / "a", count=10, size=32, seed=7)
    again = build_dataset(tmp_path / "b", count=10, size=32, seed=7)
    assert manifest["split_sizes"] == {"train": 5, "test": 3, "val": 2}
    assert (tmp_path / "a" / "manifest.json").read_text() == (tmp_path / "b" / "manifest.json").read_text()
    assert read_manifest(tmp_path / "a") == json.loads((tmp_path / "a" / "manifest.json").read_text())

    entry = manifest["samples"][0]
    sample = load_sample(tmp_path / "a" / entry["path"])
    assert sample["optical"].shape == (3, 32, 32)
    assert sample["sar"].shape == (4, 32, 32)
    assert sample["labels"].max() <= 6
    assert np.array_equal(transition_labels(sample["landcover_t1"], sample["landcover_t2"]), sample["labels"])


def test_build_dataset_rejects_bad_ratios(tmp_path):
    with pytest.raises(InvalidArgumentError):
        build_dataset(tmp_path, count=10, size=32, split=(0.5, 0.3, 0.3))
    assert not (tmp_path / "manifest.json").exists()


def test_missing_manifest_is_io_error(tmp_path):
    with pytest.raises(ArtifactIOError):
        read_manifest(tmp_path)


def test_snap_to_cells_takes_block_majority():
    grid = np.zeros((8, 8), dtype=np.uint8)
    grid[0:3, 0:4] = BUILDING
    grid[4:6, 4:8] = ROAD
    snapped = snap_to_cells(grid, 4)
    assert (snapped[:4, :4] == BUILDING).all()
    # 8 road cells against 8 background cells: tie goes to the road
    assert (snapped[4:, 4:] == ROAD).all()
    assert not snapped[:4, 4:].any() and not snapped[4:, :4].any()


@pytest.mark.parametrize("seed", range(3))
def test_generated_scenes_sit_on_the_cell_lattice(seed):
    sample = generate_sample(seed, 64)
    for grid in (sample.landcover_t1, sample.landcover_t2, sample.labels):
        blocks = grid.reshape(16, 4, 16, 4)
        assert (blocks == blocks[:, :1, :, :1]).all()
    assert sample.spec.cell == 4
    epoch2, labels = apply_changes(sample.landcover_t1, sample.spec)
    assert np.array_equal(labels, sample.labels)
    assert np.array_equal(epoch2, sample.landcover_t2)


def test_unit_cell_leaves_geometry_unsnapped():
    sample = generate_sample(5, 64, GeneratorConfig(cell=1))
    assert sample.spec.cell == 1
    assert np.array_equal(apply_changes(sample.landcover_t1, sample.spec)[1], sample.labels)
    with pytest.raises(InvalidArgumentError):
        GeneratorConfig(cell=0)


def test_every_change_class_appears_across_samples():
    seen = set()
    for i in range(200):
        seen.update(np.unique(generate_sample(sample_seed(0, i), 64).labels).tolist())
    assert set(range(1, 7)) <= seen
