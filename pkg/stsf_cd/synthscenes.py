# stsf_cd/synthscenes.py
"""
Synthetic bi-temporal optical/SAR scenes with exact directional change labels.

A scene is a pair of land-cover grids (epoch 1 and epoch 2). Epoch 1 is always rendered
as a three-band optical image and epoch 2 as a four-polarization SAR intensity image, so
label direction ("added" vs "disappeared") is never ambiguous.

Land cover codes: 0 other, 1 building, 2 road, 3 water.
Change label codes: 0 BG, 1 AB, 2 AR, 3 AW, 4 DB, 5 DR, 6 DW.
"""
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ArtifactIOError, ChangeConflictError, InvalidArgumentError

logger = logging.getLogger(__name__)

OTHER, BUILDING, ROAD, WATER = 0, 1, 2, 3
COVER_NAMES = ("other", "building", "road", "water")
CLASS_NAMES = ("BG", "AB", "AR", "AW", "DB", "DR", "DW")
BINARY_CLASS_NAMES = ("BG", "CH")
SPLIT_NAMES = ("train", "test", "val")
POLARIZATIONS = ("hh", "hv", "vh", "vv")
SHAPES = ("rectangle", "disk", "polyline")
DIRECTIONS = ("add", "remove")

MIN_TILE_SIZE = 32
MAX_TEXTURE_AMPLITUDE = 0.05
MANIFEST_FORMAT = "stsf-synth/1"

# rows: land cover class, columns: R, G, B. Every pair differs by >= 0.15 in some band.
OPTICAL_SIGNATURES = np.array([
    [0.30, 0.55, 0.25],
    [0.80, 0.78, 0.75],
    [0.35, 0.35, 0.38],
    [0.10, 0.20, 0.45],
], dtype=np.float32)

# rows: land cover class, columns: HH, HV, VH, VV mean intensity
SAR_BACKSCATTER = np.array([
    [0.25, 0.10, 0.09, 0.22],
    [0.70, 0.32, 0.30, 0.58],
    [0.08, 0.03, 0.03, 0.07],
    [0.03, 0.01, 0.01, 0.04],
], dtype=np.float32)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class GeneratorConfig:
    """Object and event densities for one synthetic tile. Ranges are inclusive."""
    buildings: Tuple[int, int] = (3, 8)
    building_size: Tuple[int, int] = (4, 10)
    roads: Tuple[int, int] = (1, 2)
    road_width: Tuple[int, int] = (3, 4)
    water_bodies: Tuple[int, int] = (1, 1)
    water_radius_frac: Tuple[float, float] = (0.08, 0.13)
    events: Tuple[int, int] = (1, 4)
    event_min_cells: int = 8
    texture_amplitude: float = 0.04
    texture_sigma: float = 2.0
    speckle_looks: Optional[float] = 4.0
    # land cover and event footprints are snapped to cell x cell blocks
    cell: int = 4

    def __post_init__(self):
        if self.cell < 1:
            raise InvalidArgumentError(f"Lattice cell must be >= 1, got {self.cell}")

    @classmethod
    def empty(cls) -> "GeneratorConfig":
        return cls(buildings=(0, 0), roads=(0, 0), water_bodies=(0, 0), events=(0, 0))

    @property
    def places_objects(self) -> bool:
        return max(self.buildings[1], self.roads[1], self.water_bodies[1]) > 0


@dataclass(frozen=True)
class ChangeEvent:
    """
    One planted change. Geometry keys by shape:
    rectangle: top, left, height, width; disk: cy, cx, radius;
    polyline: points [[row, col], ...], width.
    """
    shape: str
    cls: int
    direction: str
    geometry: Dict[str, Any]

    @property
    def label(self) -> int:
        return self.cls if self.direction == "add" else self.cls + 3

    def mask(self, shape: Tuple[int, int], cell: int = 1) -> np.ndarray:
        g = self.geometry
        if self.shape == "rectangle":
            raw = _rect_mask(shape, g["top"], g["left"], g["height"], g["width"])
        elif self.shape == "disk":
            raw = _disk_mask(shape, g["cy"], g["cx"], g["radius"])
        else:
            raw = _polyline_mask(shape, g["points"], g["width"])
        return snap_mask(raw, cell)


@dataclass
class ChangeSpec:
    planted_events: List[ChangeEvent] = field(default_factory=list)
    seed: int = 0
    cell: int = 1


@dataclass
class SceneSample:
    landcover_t1: np.ndarray
    landcover_t2: np.ndarray
    labels: np.ndarray
    optical: np.ndarray
    sar: np.ndarray
    spec: ChangeSpec


# ---------------------------------------------------------------- rasterization

def _rect_mask(shape, top, left, height, width) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[top:top + height, left:left + width] = True
    return m


def _disk_mask(shape, cy, cx, radius) -> np.ndarray:
    rr, cc = np.ogrid[:shape[0], :shape[1]]
    return (rr - cy) ** 2 + (cc - cx) ** 2 <= radius ** 2


def _polyline_mask(shape, points, width) -> np.ndarray:
    """Cells whose centers lie within width/2 of any segment."""
    rr, cc = np.mgrid[:shape[0], :shape[1]]
    grid = np.stack([rr, cc], axis=-1).astype(np.float64)
    pts = np.asarray(points, dtype=np.float64)
    dist = np.full(shape, np.inf)
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    for p0, p1 in zip(pts[:-1], pts[1:]):
        d = p1 - p0
        denom = float(d @ d)
        if denom == 0.0:
            t = np.zeros(shape)
        else:
            t = np.clip(((grid - p0) @ d) / denom, 0.0, 1.0)
        proj = p0 + t[..., None] * d
        dist = np.minimum(dist, np.linalg.norm(grid - proj, axis=-1))
    return dist <= width / 2.0


def _free_positions(free: np.ndarray, height: int, width: int) -> np.ndarray:
    """Top-left corners (row, col) of all height x width windows that are entirely free."""
    h, w = free.shape
    if height > h or width > w:
        return np.empty((0, 2), dtype=np.int64)
    integral = np.pad(free.astype(np.int64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    sums = (integral[height:, width:] - integral[:-height, width:]
            - integral[height:, :-width] + integral[:-height, :-width])
    return np.argwhere(sums == height * width)


def _blocks(grid: np.ndarray, cell: int) -> np.ndarray:
    """(rows, cols, cell*cell) view of zero-padded cell x cell blocks."""
    h, w = grid.shape
    hc, wc = -(-h // cell), -(-w // cell)
    padded = np.zeros((hc * cell, wc * cell), dtype=grid.dtype)
    padded[:h, :w] = grid
    return padded.reshape(hc, cell, wc, cell).transpose(0, 2, 1, 3).reshape(hc, wc, cell * cell)


def _expand(coarse: np.ndarray, cell: int, shape: Tuple[int, int]) -> np.ndarray:
    return np.repeat(np.repeat(coarse, cell, axis=0), cell, axis=1)[:shape[0], :shape[1]]


def snap_mask(mask: np.ndarray, cell: int) -> np.ndarray:
    """Keep every cell x cell block that the mask covers at least half of."""
    if cell <= 1:
        return mask
    covered = _blocks(mask, cell).sum(axis=-1) * 2 >= cell * cell
    return _expand(covered, cell, mask.shape)


def snap_to_cells(grid: np.ndarray, cell: int) -> np.ndarray:
    """Give every cell x cell block its most frequent land cover; ties go to the higher code."""
    if cell <= 1:
        return grid
    blocks = _blocks(grid, cell)
    counts = np.stack([(blocks == code).sum(axis=-1) for code in range(WATER, OTHER - 1, -1)], axis=-1)
    coarse = (WATER - counts.argmax(axis=-1)).astype(grid.dtype)
    return _expand(coarse, cell, grid.shape)


def _event_inside(event: ChangeEvent, size_hw: Tuple[int, int]) -> bool:
    h, w = size_hw
    g = event.geometry
    if event.shape == "rectangle":
        return (g["height"] >= 1 and g["width"] >= 1 and g["top"] >= 0 and g["left"] >= 0
                and g["top"] + g["height"] <= h and g["left"] + g["width"] <= w)
    if event.shape == "disk":
        r = g["radius"]
        return (r >= 0 and g["cy"] - r >= 0 and g["cx"] - r >= 0
                and g["cy"] + r <= h - 1 and g["cx"] + r <= w - 1)
    half = g["width"] / 2.0
    pts = np.asarray(g["points"], dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0 or g["width"] <= 0:
        return False
    return bool(np.all(pts - half >= 0) and np.all(pts[:, 0] + half <= h - 1)
                and np.all(pts[:, 1] + half <= w - 1))


def _validate_event(event: ChangeEvent, size_hw: Tuple[int, int]) -> None:
    problems = []
    if event.shape not in SHAPES:
        problems.append(f"unknown shape '{event.shape}'")
    if event.cls not in (BUILDING, ROAD, WATER):
        problems.append(f"class {event.cls} is not in 1..3")
    if event.direction not in DIRECTIONS:
        problems.append(f"unknown direction '{event.direction}'")
    if not problems and not _event_inside(event, size_hw):
        problems.append(f"{event.shape} geometry {event.geometry} leaves the {size_hw} tile")
    if problems:
        raise InvalidArgumentError(
            "Invalid change event",
            errors=[{"field": "planted_events", "value": str(event), "type": "event", "error": p}
                    for p in problems],
        )


# ---------------------------------------------------------------- land cover

def check_landcover(grid: np.ndarray) -> None:
    if grid.ndim != 2:
        raise InvalidArgumentError(f"Land cover map must be 2-D, got shape {grid.shape}")
    if grid.size and (grid.min() < OTHER or grid.max() > WATER):
        raise InvalidArgumentError("Land cover values must lie in 0..3")


def synth_landcover(seed: int, size: int, config: Optional[GeneratorConfig] = None) -> np.ndarray:
    """Deterministic land cover tile: one or more water bodies, roads, then buildings on free ground."""
    config = config or GeneratorConfig()
    min_size = MIN_TILE_SIZE if config.places_objects else 1
    if size < min_size:
        raise InvalidArgumentError(f"Tile size {size} is below the minimum of {min_size}")

    grid = np.zeros((size, size), dtype=np.uint8)
    if not config.places_objects:
        return grid

    rng = np.random.default_rng(seed)
    _place_water(grid, rng, config)
    _place_roads(grid, rng, config)
    _place_buildings(grid, rng, config)
    return grid


def _place_water(grid, rng, config):
    size = grid.shape[0]
    for _ in range(rng.integers(config.water_bodies[0], config.water_bodies[1] + 1)):
        lo, hi = config.water_radius_frac
        radius = max(2, int(round(rng.uniform(lo, hi) * size)))
        cy, cx = rng.integers(radius, size - radius, size=2)
        grid[_disk_mask(grid.shape, cy, cx, radius)] = WATER


def _place_roads(grid, rng, config):
    size = grid.shape[0]
    for _ in range(rng.integers(config.roads[0], config.roads[1] + 1)):
        width = int(rng.integers(config.road_width[0], config.road_width[1] + 1))
        a, b, c = rng.integers(size // 8, size - size // 8, size=3)
        if rng.random() < 0.5:
            points = [[0, a], [size // 2, b], [size - 1, c]]
        else:
            points = [[a, 0], [b, size // 2], [c, size - 1]]
        band = _polyline_mask(grid.shape, points, width)
        grid[band & (grid == OTHER)] = ROAD


def _place_buildings(grid, rng, config):
    for _ in range(rng.integers(config.buildings[0], config.buildings[1] + 1)):
        bh, bw = rng.integers(config.building_size[0], config.building_size[1] + 1, size=2)
        # one-cell margin keeps buildings separate components
        spots = _free_positions(grid == OTHER, bh + 2, bw + 2)
        if len(spots) == 0:
            continue
        top, left = spots[rng.integers(len(spots))]
        grid[top + 1:top + 1 + bh, left + 1:left + 1 + bw] = BUILDING


# ---------------------------------------------------------------- change planting

def transition_labels(epoch1: np.ndarray, epoch2: np.ndarray) -> np.ndarray:
    """Directional label from the two land cover epochs."""
    labels = np.zeros(epoch1.shape, dtype=np.uint8)
    added = (epoch1 == OTHER) & (epoch2 != OTHER)
    removed = (epoch1 != OTHER) & (epoch2 == OTHER)
    labels[added] = epoch2[added]
    labels[removed] = epoch1[removed] + 3
    return labels


def apply_changes(base: np.ndarray, spec: ChangeSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Plant every event on `base` and return (epoch-2 land cover, change labels).

    An event's footprint is its geometry restricted to eligible cells: class 0 for "add",
    the event class for "remove". Two events giving one cell different labels conflict.
    """
    check_landcover(base)
    claimed = np.zeros(base.shape, dtype=np.uint8)
    for event in spec.planted_events:
        _validate_event(event, base.shape)
        eligible = base == (OTHER if event.direction == "add" else event.cls)
        footprint = event.mask(base.shape, spec.cell) & eligible
        clash = footprint & (claimed != 0) & (claimed != event.label)
        if clash.any():
            raise ChangeConflictError(
                f"Event {event.direction} {COVER_NAMES[event.cls]} overlaps a conflicting event "
                f"on {int(clash.sum())} cells",
                errors=[{"field": "planted_events", "value": str(event), "type": "conflict",
                         "error": f"first conflicting cell {tuple(np.argwhere(clash)[0])}"}],
            )
        claimed[footprint] = event.label

    epoch2 = base.copy()
    added = (claimed >= 1) & (claimed <= 3)
    epoch2[added] = claimed[added]
    epoch2[claimed >= 4] = OTHER
    return epoch2, claimed


def sample_change_spec(base: np.ndarray, seed: int, config: Optional[GeneratorConfig] = None,
                       max_attempts: int = 30) -> ChangeSpec:
    """Draw 1-4 non-overlapping events, uniform over (class, direction)."""
    config = config or GeneratorConfig()
    rng = np.random.default_rng(seed)
    size_hw = base.shape
    used = np.zeros(size_hw, dtype=bool)
    events = []
    n_events = rng.integers(config.events[0], config.events[1] + 1)
    kinds = [(c, d) for c in (BUILDING, ROAD, WATER) for d in DIRECTIONS]
    for _ in range(n_events):
        cls, direction = kinds[rng.integers(len(kinds))]
        for _ in range(max_attempts):
            event = _propose_event(base, rng, cls, direction, config)
            if event is None:
                break
            geom = event.mask(size_hw, config.cell)
            eligible = base == (OTHER if direction == "add" else cls)
            if (geom & eligible).sum() < config.event_min_cells or (geom & used).any():
                continue
            used |= geom
            events.append(event)
            break
    return ChangeSpec(planted_events=events, seed=int(seed), cell=config.cell)


def _propose_event(base, rng, cls, direction, config) -> Optional[ChangeEvent]:
    h, w = base.shape
    if direction == "add":
        if cls == BUILDING:
            bh, bw = rng.integers(config.building_size[0], config.building_size[1] + 1, size=2)
            spots = _free_positions(base == OTHER, bh, bw)
            if len(spots) == 0:
                return None
            top, left = spots[rng.integers(len(spots))]
            geometry = {"top": int(top), "left": int(left), "height": int(bh), "width": int(bw)}
            return ChangeEvent("rectangle", cls, direction, geometry)
        if cls == ROAD:
            width = int(rng.integers(config.road_width[0], config.road_width[1] + 1))
            margin = int(math.ceil(width / 2.0))
            length = int(rng.integers(12, max(13, min(h, w) // 2)))
            r0 = int(rng.integers(margin, h - margin))
            c0 = int(rng.integers(margin, w - margin))
            dr, dc = [(0, 1), (1, 0), (1, 1), (1, -1)][rng.integers(4)]
            r1 = int(np.clip(r0 + dr * length, margin, h - 1 - margin))
            c1 = int(np.clip(c0 + dc * length, margin, w - 1 - margin))
            return ChangeEvent("polyline", cls, direction, {"points": [[r0, c0], [r1, c1]], "width": width})
        radius = int(rng.integers(3, 7))
        cy, cx = rng.integers(radius, np.array([h, w]) - radius)
        return ChangeEvent("disk", cls, direction, {"cy": int(cy), "cx": int(cx), "radius": radius})

    present = base == cls
    if not present.any():
        return None
    if cls == BUILDING:
        components, count = ndimage.label(present)
        boxes = ndimage.find_objects(components)
        rows, cols = boxes[rng.integers(count)]
        geometry = {"top": rows.start, "left": cols.start,
                    "height": rows.stop - rows.start, "width": cols.stop - cols.start}
        return ChangeEvent("rectangle", cls, direction, geometry)
    cells = np.argwhere(present)
    cy, cx = cells[rng.integers(len(cells))]
    if cls == ROAD:
        half = int(rng.integers(4, 8))
        top, left = max(0, cy - half), max(0, cx - half)
        bottom, right = min(h, cy + half + 1), min(w, cx + half + 1)
        geometry = {"top": int(top), "left": int(left), "height": int(bottom - top), "width": int(right - left)}
        return ChangeEvent("rectangle", cls, direction, geometry)
    radius = int(min(rng.integers(3, 7), cy, cx, h - 1 - cy, w - 1 - cx))
    if radius < 2:
        return None
    return ChangeEvent("disk", cls, direction, {"cy": int(cy), "cx": int(cx), "radius": radius})


# ---------------------------------------------------------------- rendering

def render_optical(landcover: np.ndarray, seed: int, amplitude: float = 0.04,
                   sigma: float = 2.0) -> np.ndarray:
    """Class colour signatures plus smooth per-band texture bounded by `amplitude`."""
    check_landcover(landcover)
    if not 0.0 <= amplitude <= MAX_TEXTURE_AMPLITUDE:
        raise InvalidArgumentError(f"Texture amplitude {amplitude} outside [0, {MAX_TEXTURE_AMPLITUDE}]")
    rng = np.random.default_rng(seed)
    image = OPTICAL_SIGNATURES[landcover].transpose(2, 0, 1).copy()
    if amplitude > 0:
        for band in range(image.shape[0]):
            texture = ndimage.gaussian_filter(rng.standard_normal(landcover.shape), sigma, mode="wrap")
            peak = np.abs(texture).max()
            if peak > 0:
                image[band] += (amplitude * texture / peak).astype(np.float32)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def render_sar(landcover: np.ndarray, seed: int, looks: Optional[float] = 4.0) -> np.ndarray:
    """
    Per-polarization class backscatter times unit-mean gamma speckle (variance 1/looks).

    looks=None or inf disables speckle.
    """
    check_landcover(landcover)
    image = SAR_BACKSCATTER[landcover].transpose(2, 0, 1).copy()
    if looks is None or math.isinf(looks):
        return np.clip(image, 0.0, 1.0)
    if looks <= 0:
        raise InvalidArgumentError(f"Number of looks must be > 0, got {looks}")
    rng = np.random.default_rng(seed)
    speckle = rng.gamma(shape=looks, scale=1.0 / looks, size=image.shape).astype(np.float32)
    return np.clip(image * speckle, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------- samples and datasets

def _child_seeds(seed: int, n: int) -> List[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def sample_seed(dataset_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([dataset_seed, index]).generate_state(1)[0])


def generate_sample(seed: int, size: int, config: Optional[GeneratorConfig] = None) -> SceneSample:
    config = config or GeneratorConfig()
    cover_seed, change_seed, optical_seed, sar_seed = _child_seeds(seed, 4)
    lc1 = snap_to_cells(synth_landcover(cover_seed, size, config), config.cell)
    spec = sample_change_spec(lc1, change_seed, config)
    lc2, labels = apply_changes(lc1, spec)
    optical = render_optical(lc1, optical_seed, config.texture_amplitude, config.texture_sigma)
    sar = render_sar(lc2, sar_seed, config.speckle_looks)
    return SceneSample(lc1, lc2, labels, optical, sar, spec)


def quantize(x: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.clip(x, 0.0, 1.0)).astype(np.uint8)


def dequantize(v: np.ndarray) -> np.ndarray:
    return v.astype(np.float32) / 255.0


def split_sizes(count: int, ratios: Sequence[float]) -> Tuple[int, ...]:
    """Largest-remainder apportionment; ties go to the earlier split."""
    raw = [count * r for r in ratios]
    sizes = [int(math.floor(x)) for x in raw]
    leftover = count - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return tuple(sizes)


def _check_split(count: int, ratios: Sequence[float]) -> None:
    if count < 1:
        raise InvalidArgumentError(f"Sample count must be >= 1, got {count}")
    if len(ratios) != len(SPLIT_NAMES) or any(r < 0 for r in ratios):
        raise InvalidArgumentError(f"Expected three non-negative split ratios, got {list(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"Split ratios must sum to 1, got {sum(ratios)!r}")


def assign_splits(count: int, ratios: Sequence[float], seed: int) -> List[str]:
    sizes = split_sizes(count, ratios)
    order = np.random.default_rng(seed).permutation(count)
    assignment = [""] * count
    cursor = 0
    for name, n in zip(SPLIT_NAMES, sizes):
        for idx in order[cursor:cursor + n]:
            assignment[int(idx)] = name
        cursor += n
    return assignment


def write_sample(sample_dir: Path, sample: SceneSample) -> None:
    sample_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(sample.optical).transpose(1, 2, 0)).save(sample_dir / "opt.png")
    Image.fromarray(quantize(sample.sar).transpose(1, 2, 0)).save(sample_dir / "sar.png")
    Image.fromarray(sample.labels.astype(np.uint8)).save(sample_dir / "label.png")
    Image.fromarray(sample.landcover_t1.astype(np.uint8)).save(sample_dir / "lc1.png")
    Image.fromarray(sample.landcover_t2.astype(np.uint8)).save(sample_dir / "lc2.png")


def build_dataset(root: PathLike, count: int, size: int, split: Sequence[float] = (0.5, 0.3, 0.2),
                  seed: int = 0, config: Optional[GeneratorConfig] = None,
                  workers: int = 1) -> Dict[str, Any]:
    """Write `count` samples under root/<split>/<id>/ plus root/manifest.json."""
    _check_split(count, split)
    config = config or GeneratorConfig()
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"Cannot create dataset root {root}: {e}") from e
    if not os.access(root, os.W_OK):
        raise ArtifactIOError(f"Dataset root {root} is not writable")

    assignment = assign_splits(count, split, seed)
    entries = [
        {"id": f"{i:05d}", "split": assignment[i], "seed": sample_seed(seed, i)}
        for i in range(count)
    ]

    def _make(entry):
        sample = generate_sample(entry["seed"], size, config)
        write_sample(root / entry["split"] / entry["id"], sample)
        return entry["id"]

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(_make, entries))
        else:
            for entry in entries:
                _make(entry)
    except OSError as e:
        raise ArtifactIOError(f"Failed writing samples under {root}: {e}") from e

    manifest = {
        "format": MANIFEST_FORMAT,
        "seed": seed,
        "size": size,
        "count": count,
        "split_ratios": [float(r) for r in split],
        "split_sizes": dict(zip(SPLIT_NAMES, split_sizes(count, split))),
        "generator": asdict(config),
        "samples": [dict(e, path=f"{e['split']}/{e['id']}") for e in entries],
    }
    manifest_path = root / "manifest.json"
    try:
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {manifest_path}: {e}") from e
    logger.info("Wrote %d samples (%s) to %s", count, manifest["split_sizes"], root)
    return manifest


def read_manifest(root: PathLike) -> Dict[str, Any]:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise ArtifactIOError(f"No dataset manifest at {path}")
    with open(path) as f:
        return json.load(f)


def load_sample(sample_dir: PathLike) -> Dict[str, np.ndarray]:
    """Read one sample directory back to float images in [0,1] and integer rasters."""
    sample_dir = Path(sample_dir)
    required = ("opt.png", "sar.png")
    missing = [name for name in required if not (sample_dir / name).is_file()]
    if missing:
        raise ArtifactIOError(f"Sample {sample_dir} is missing {missing}")
    optical = dequantize(np.asarray(Image.open(sample_dir / "opt.png").convert("RGB"))).transpose(2, 0, 1)
    sar = dequantize(np.asarray(Image.open(sample_dir / "sar.png").convert("RGBA"))).transpose(2, 0, 1)
    sample = {"optical": np.ascontiguousarray(optical), "sar": np.ascontiguousarray(sar)}
    for key, name in (("labels", "label.png"), ("landcover_t1", "lc1.png"), ("landcover_t2", "lc2.png")):
        if (sample_dir / name).is_file():
            sample[key] = np.asarray(Image.open(sample_dir / name), dtype=np.uint8)
    return sample


def split_samples(root: PathLike, split: str) -> List[Path]:
    manifest = read_manifest(root)
    return [Path(root) / entry["path"] for entry in manifest["samples"] if entry["split"] == split]
