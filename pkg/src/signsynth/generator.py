"""Seeded synthesis of annotated traffic-sign samples.

Every random draw of a sample comes from a generator derived from
``(master_seed, sample_index)`` alone, so datasets are identical regardless
of worker count or generation order. Toggles never change which values are
drawn, only whether they are applied; turning a step off is therefore the
same as forcing its parameters to their identity values.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import math
import os
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, NamedTuple

import numpy as np

from signsynth import compositor as comp
from signsynth.annotations import (
    ANNOTATION_FILE,
    IMAGE_DIR,
    Annotation,
    ImageEntry,
    coco_document,
    dump_json,
    image_file_name,
)
from signsynth.background import CanvasSpec, standardize_background
from signsynth.boxes import BoundingBox, intersects
from signsynth.errors import ConfigError
from signsynth.images import quantize, read_image, write_png
from signsynth.templates import TemplateSet

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
PROVENANCE_FILE = "provenance.jsonl"
INCOMPLETE_MARKER = "INCOMPLETE"
_UINT64 = (1 << 64) - 1
# Positions keep a 1 px border so Poisson blending always has a boundary ring.
CANVAS_INSET = 1


@dataclass(frozen=True)
class GenerationParams:
    contrast_range: tuple[float, float] = (0.6, 1.4)
    brightness_range: tuple[float, float] = (-40.0, 40.0)
    blur_floor: float = 1.5
    blur_slope: float = 0.01
    scale_range: tuple[float, float] = (20.0, 200.0)
    max_signs_per_image: int = 4
    # (rows, cols, spacing in px)
    group_configs: tuple[tuple[int, int, int], ...] = (
        (1, 2, 6),
        (1, 3, 6),
        (2, 1, 6),
        (2, 2, 6),
        (2, 4, 6),
        (3, 1, 6),
    )
    group_probability: float = 0.3
    jitter_amplitude: float = 8.0
    fade_width_pct: float = 2.0
    # None shifts by zero, i.e. uses the region mean itself as the constant.
    brightness_constant: float | None = comp.DEFAULT_BRIGHTNESS_CONSTANT
    yaw_max: float = 35.0
    pitch_max: float = 35.0
    roll_max: float = 8.0
    focal_ratio: float = comp.DEFAULT_FOCAL_RATIO
    placement_margin: float = 4.0
    max_placement_attempts: int = 50
    canvas_side: int = 1500
    enable_blur: bool = True
    enable_brightness_adjust: bool = True
    enable_geometric: bool = True
    enable_background_augmentation: bool = True
    enable_blend: bool = True
    enable_histogram_noise: bool = True
    enable_grouping: bool = True
    blend_mode: Literal["naive", "poisson"] = "naive"
    poisson_tolerance: float = comp.DEFAULT_POISSON_TOLERANCE
    poisson_max_iters: int | None = None
    master_seed: int = 0
    num_samples: int = 0

    def __post_init__(self) -> None:
        a, b = self.contrast_range
        c, d = self.brightness_range
        lo, hi = self.scale_range
        if not 0 < a <= b:
            raise ConfigError("contrast_range needs 0 < a <= b")
        if not c <= d:
            raise ConfigError("brightness_range needs c <= d")
        if self.blur_floor < 0 or self.blur_slope < 0:
            raise ConfigError("blur_floor and blur_slope must be non-negative")
        if not 0 < lo <= hi:
            raise ConfigError("scale_range needs 0 < min_size <= max_size")
        if self.max_signs_per_image < 1:
            raise ConfigError("max_signs_per_image must be >= 1")
        if not 0 <= self.group_probability <= 1:
            raise ConfigError("group_probability must be in [0, 1]")
        if self.jitter_amplitude < 0 or self.fade_width_pct < 0 or self.placement_margin < 0:
            raise ConfigError("jitter_amplitude, fade_width_pct and placement_margin must be non-negative")
        if min(self.yaw_max, self.pitch_max) < 0 or max(self.yaw_max, self.pitch_max) >= 90 or self.roll_max < 0:
            raise ConfigError("rotation limits must be non-negative, yaw/pitch below 90 degrees")
        if self.max_placement_attempts < 1:
            raise ConfigError("max_placement_attempts must be >= 1")
        if self.blend_mode not in ("naive", "poisson"):
            raise ConfigError("blend_mode must be 'naive' or 'poisson'")
        if self.num_samples < 0:
            raise ConfigError("num_samples must be non-negative")
        usable = self.canvas_side - 2 * CANVAS_INSET
        if footprint_side(hi) > usable:
            raise ConfigError(f"max sign size {hi} does not fit a {self.canvas_side} px canvas")
        for rows, cols, spacing in self.group_configs:
            if rows < 1 or cols < 1 or spacing < 0:
                raise ConfigError(f"invalid group config {(rows, cols, spacing)}")
            gw, gh = group_extent(rows, cols, spacing, footprint_side(hi))
            if gw > usable or gh > usable:
                raise ConfigError(f"group {rows}x{cols} does not fit the canvas at max scale")

    @property
    def canvas(self) -> CanvasSpec:
        return CanvasSpec(self.canvas_side)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["group_configs"] = [list(g) for g in self.group_configs]
        for key in ("contrast_range", "brightness_range", "scale_range"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> GenerationParams:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kwargs = dict(raw)
        for key in ("contrast_range", "brightness_range", "scale_range"):
            if key in kwargs:
                kwargs[key] = _pair(kwargs[key], key)
        if "group_configs" in kwargs:
            try:
                kwargs["group_configs"] = tuple(tuple(int(v) for v in g) for g in kwargs["group_configs"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"group_configs: {exc}") from exc
            if any(len(g) != 3 for g in kwargs["group_configs"]):
                raise ConfigError("group_configs entries must be [rows, cols, spacing]")
        _check_types(kwargs)
        return cls(**kwargs)

    def replace(self, **changes) -> GenerationParams:
        return dataclasses.replace(self, **changes)


def _pair(value, key: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{key} must be a pair")
    return float(value[0]), float(value[1])


_BOOL_FIELDS = {f.name for f in dataclasses.fields(GenerationParams) if f.name.startswith("enable_")}
_INT_FIELDS = {"max_signs_per_image", "max_placement_attempts", "canvas_side", "master_seed", "num_samples"}


def _check_types(kwargs: dict[str, Any]) -> None:
    for key, value in kwargs.items():
        if key in _BOOL_FIELDS and not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        if key in _INT_FIELDS and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"{key} must be an integer")


def load_config(path: str | os.PathLike | None, overrides: list[str] | None = None) -> GenerationParams:
    """Read a JSON or TOML config and apply ``key=value`` overrides on top."""
    raw: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            if str(path).endswith(".toml"):
                try:
                    import tomllib
                except ModuleNotFoundError:
                    import tomli as tomllib
                raw = tomllib.loads(text)
            else:
                raw = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a table/object")
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override '{item}' is not key=value")
        raw[key.strip()] = parse_value(value.strip())
    return GenerationParams.from_dict(raw)


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        lowered = text.lower()
        if lowered in ("true", "false"):
            return lowered == "true"
        if lowered in ("none", "null"):
            return None
        return text


def footprint_side(scale: float) -> int:
    """Square that always contains a warped sign whose longest side is ``scale`` +- 1."""
    return int(math.ceil(scale)) + 1


def group_extent(rows: int, cols: int, spacing: int, cell: int) -> tuple[int, int]:
    return cols * cell + (cols - 1) * spacing, rows * cell + (rows - 1) * spacing


def derive_sample_rng(master_seed: int, sample_index: int) -> np.random.Generator:
    """Generator whose stream depends only on ``(master_seed, sample_index)``."""
    seq = np.random.SeedSequence([master_seed & _UINT64, sample_index & _UINT64])
    return np.random.Generator(np.random.PCG64(seq))


def _uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    # Always exactly one draw, even for an empty interval.
    return lo + (hi - lo) * float(rng.random())


class Placement(NamedTuple):
    class_id: int
    geom: comp.GeomParams
    position: tuple[int, int]  # top-left of the footprint
    group_id: int | None
    footprint: BoundingBox


@dataclass
class LayoutPlan:
    placements: list[Placement] = field(default_factory=list)
    requested: int = 0
    dropped: int = 0


def _draw_geom(rng: np.random.Generator, params: GenerationParams) -> comp.GeomParams:
    yaw = _uniform(rng, -params.yaw_max, params.yaw_max)
    pitch = _uniform(rng, -params.pitch_max, params.pitch_max)
    roll = _uniform(rng, -params.roll_max, params.roll_max)
    scale = _uniform(rng, *params.scale_range)
    return comp.GeomParams(yaw, pitch, roll, scale)


def _place(rng, width: int, height: int, side: int, taken: list[BoundingBox], params: GenerationParams):
    span_x = side - 2 * CANVAS_INSET - width + 1
    span_y = side - 2 * CANVAS_INSET - height + 1
    for _ in range(params.max_placement_attempts):
        x = CANVAS_INSET + int(rng.integers(span_x))
        y = CANVAS_INSET + int(rng.integers(span_y))
        box = BoundingBox(x, y, width, height)
        if not any(intersects(box, other, params.placement_margin) for other in taken):
            return box
    return None


def sample_layout(rng: np.random.Generator, params: GenerationParams, canvas: CanvasSpec, num_classes: int) -> LayoutPlan:
    """Draw sign count, optional group, classes, rotations, scales and positions.

    Positions are rejection-sampled so every footprint keeps
    ``placement_margin`` from all earlier ones; a sign that cannot be placed
    within ``max_placement_attempts`` is dropped. A group counts as a single
    sign slot and always takes the first slot, so it lands on an empty canvas.
    """
    k_max = min(num_classes, params.max_signs_per_image)
    count = 1 + int(rng.integers(k_max))
    grouped = float(rng.random()) < params.group_probability
    grouped = grouped and params.enable_grouping and bool(params.group_configs)
    plan = LayoutPlan(requested=count)
    taken: list[BoundingBox] = []
    for slot in range(count):
        if slot == 0 and grouped:
            rows, cols, spacing = params.group_configs[int(rng.integers(len(params.group_configs)))]
            geom = _draw_geom(rng, params)
            classes = [int(rng.integers(num_classes)) for _ in range(rows * cols)]
            cell = footprint_side(geom.scale)
            gw, gh = group_extent(rows, cols, spacing, cell)
            box = _place(rng, gw, gh, canvas.side, taken, params)
            if box is None:  # cannot happen on an empty canvas once params validated
                plan.dropped += 1
                continue
            taken.append(box)
            for r in range(rows):
                for c in range(cols):
                    x = int(box.x) + c * (cell + spacing)
                    y = int(box.y) + r * (cell + spacing)
                    plan.placements.append(
                        Placement(classes[r * cols + c], geom, (x, y), 0, BoundingBox(x, y, cell, cell))
                    )
            continue
        class_id = int(rng.integers(num_classes))
        geom = _draw_geom(rng, params)
        cell = footprint_side(geom.scale)
        box = _place(rng, cell, cell, canvas.side, taken, params)
        if box is None:
            plan.dropped += 1
            continue
        taken.append(box)
        plan.placements.append(Placement(class_id, geom, (int(box.x), int(box.y)), None, box))
    return plan


@dataclass(eq=False)
class AnnotatedSample:
    image: np.ndarray  # uint8 RGB
    annotations: list[Annotation]
    sample_index: int
    provenance: dict[str, Any] = field(default_factory=dict)
    group_ids: list[int | None] = field(default_factory=list)


def fade_width_for(params: GenerationParams, longest_side: float) -> float:
    if params.fade_width_pct == 0:
        return 0.0
    return float(max(1, round(params.fade_width_pct / 100.0 * longest_side)))


@functools.lru_cache(maxsize=2)
def _load_background(path: str, side: int) -> np.ndarray:
    img = standardize_background(read_image(path), CanvasSpec(side))
    img.setflags(write=False)
    return img


def generate_sample(
    sample_index: int, params: GenerationParams, backgrounds: list[str], templates: TemplateSet
) -> AnnotatedSample:
    """Synthesize one training image and its ground-truth boxes."""
    if not backgrounds:
        raise ValueError("background manifest is empty")
    rng = derive_sample_rng(params.master_seed, sample_index)
    bg_index = int(rng.integers(len(backgrounds)))
    alpha = _uniform(rng, *params.contrast_range)
    beta = _uniform(rng, *params.brightness_range)
    blur_draw = float(rng.random())
    noise_seed = int(rng.integers(1 << 63))
    plan = sample_layout(rng, params, params.canvas, len(templates))

    background = _load_background(backgrounds[bg_index], params.canvas_side)
    if params.enable_background_augmentation:
        canvas = comp.adjust_brightness_contrast(background, comp.PhotometricParams(alpha, beta))
    else:
        canvas = background.copy()

    annotations, group_ids, records = [], [], []
    poisson_stats = []
    for j, placement in enumerate(plan.placements):
        tpl = templates[placement.class_id].image.astype(np.float64)
        if params.enable_brightness_adjust:
            tpl = comp.adjust_brightness_contrast(tpl, comp.PhotometricParams(alpha, 0.0))
        geom = placement.geom if params.enable_geometric else comp.GeomParams(scale=placement.geom.scale)
        warped = comp.warp_template(tpl, geom, params.focal_ratio)
        tb = warped.tight_box
        cell = int(placement.footprint.width)
        x = placement.position[0] + (cell - int(tb.width)) // 2
        y = placement.position[1] + (cell - int(tb.height)) // 2
        record = {
            "class_id": placement.class_id,
            "yaw": placement.geom.yaw,
            "pitch": placement.geom.pitch,
            "roll": placement.geom.roll,
            "scale": placement.geom.scale,
            "position": [x, y],
            "group": placement.group_id,
        }
        if params.enable_blend:
            region = canvas[y : y + int(tb.height), x : x + int(tb.width), :3]
            region_mean = float(region.mean())
            constant = region_mean if params.brightness_constant is None else params.brightness_constant
            warped = comp.match_local_brightness(warped, region_mean, constant)
            record["region_mean"] = region_mean
        if params.enable_histogram_noise:
            warped = comp.apply_jitter(warped, params.jitter_amplitude, np.random.default_rng([noise_seed, j]))
        if params.enable_blend:
            warped = comp.fade_borders(warped, fade_width_for(params, max(tb.width, tb.height)))
        if params.blend_mode == "poisson":
            result = comp.poisson_blend(canvas, warped, (x, y), params.poisson_tolerance, params.poisson_max_iters)
            canvas = result.image
            box = BoundingBox(x, y, tb.width, tb.height)
            poisson_stats.append({"converged": result.converged, "iterations": result.iterations})
            record["poisson_converged"] = result.converged
        else:
            canvas, box = comp.alpha_composite(canvas, warped, (x, y), inplace=True)
        annotations.append(Annotation(box, placement.class_id))
        group_ids.append(placement.group_id)
        records.append(record)

    largest = max((p.geom.scale for p in plan.placements), default=0.0)
    sigma = 0.0
    if params.enable_blur:
        sigma = blur_draw * max(params.blur_floor, params.blur_slope * largest)
        canvas = comp.gaussian_blur(canvas, sigma)

    provenance = {
        "sample_index": sample_index,
        "background": backgrounds[bg_index],
        "alpha": alpha,
        "beta": beta,
        "sigma": sigma,
        "requested_signs": plan.requested,
        "dropped_placements": plan.dropped,
        "placements": records,
    }
    return AnnotatedSample(quantize(canvas), annotations, sample_index, provenance, group_ids)


def augment_real(
    image: np.ndarray, annotations: list[Annotation], rng: np.random.Generator, params: GenerationParams,
    sample_index: int = 0,
) -> AnnotatedSample:
    """Brightness/contrast plus blur for real images; boxes pass through untouched."""
    alpha = _uniform(rng, *params.contrast_range)
    beta = _uniform(rng, *params.brightness_range)
    sigma = _uniform(rng, 0.0, params.blur_floor)
    out = comp.adjust_brightness_contrast(image[:, :, :3].astype(np.float64), comp.PhotometricParams(alpha, beta))
    out = comp.gaussian_blur(out, sigma)
    provenance = {"alpha": alpha, "beta": beta, "sigma": sigma}
    return AnnotatedSample(quantize(out), list(annotations), sample_index, provenance, [None] * len(annotations))


# Worker state; set once per process by _init_worker.
_STATE: dict[str, Any] = {}


def _init_worker(params, backgrounds, templates, output_dir) -> None:
    _STATE.update(params=params, backgrounds=backgrounds, templates=templates, output_dir=output_dir)


def _produce(sample_index: int):
    sample = generate_sample(sample_index, _STATE["params"], _STATE["backgrounds"], _STATE["templates"])
    write_png(Path(_STATE["output_dir"]) / IMAGE_DIR / image_file_name(sample_index), sample.image)
    h, w = sample.image.shape[:2]
    entry = ImageEntry(sample_index, image_file_name(sample_index), w, h, sample.annotations)
    return entry, sample.provenance


def generate_dataset(
    params: GenerationParams,
    backgrounds: list[str],
    templates: TemplateSet,
    output_dir: str | os.PathLike,
    workers: int = 1,
) -> dict[str, Any]:
    """Generate ``params.num_samples`` samples into ``output_dir``.

    Writes ``images/*.png``, ``annotations.json``, ``provenance.jsonl`` and
    ``manifest.json``. An ``INCOMPLETE`` marker exists while the run is in
    progress and stays behind if it aborts. Output bytes do not depend on
    ``workers``; only the manifest's ``wall_clock`` section does.
    """
    if params.num_samples > 0 and not backgrounds:
        raise ValueError("background manifest is empty")
    out = Path(output_dir)
    (out / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE_MARKER
    marker.write_text("generation in progress or aborted\n")
    started = time.perf_counter()
    indices = range(params.num_samples)
    args = (params, list(backgrounds), templates, os.fspath(out))
    if workers <= 1 or params.num_samples <= 1:
        _init_worker(*args)
        try:
            results = [_produce(i) for i in indices]
        finally:
            _STATE.clear()
    else:
        chunk = max(1, params.num_samples // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=args) as pool:
            results = list(pool.map(_produce, indices, chunksize=chunk))
    elapsed = time.perf_counter() - started

    entries = [entry for entry, _ in results]
    class_names = templates.class_names
    dump_json(out / ANNOTATION_FILE, coco_document(entries, class_names))
    with open(out / PROVENANCE_FILE, "w") as fh:
        for _, prov in results:
            fh.write(json.dumps(prov, sort_keys=True) + "\n")

    counts = Counter(ann.class_id for entry in entries for ann in entry.annotations)
    manifest = {
        "params": params.to_dict(),
        "master_seed": params.master_seed,
        "num_samples": params.num_samples,
        "num_classes": len(templates),
        "class_names": {str(k): v for k, v in class_names.items()},
        "per_class_counts": {class_names[cid]: counts.get(cid, 0) for cid in sorted(class_names)},
        "total_instances": sum(counts.values()),
        "dropped_placements": sum(p["dropped_placements"] for _, p in results),
        "poisson_unconverged": sum(
            1 for _, p in results for rec in p["placements"] if rec.get("poisson_converged") is False
        ),
        "wall_clock": {
            "seconds": round(elapsed, 3),
            "workers": workers,
            "samples_per_second": round(params.num_samples / elapsed, 3) if elapsed > 0 else None,
        },
    }
    dump_json(out / MANIFEST_FILE, manifest)
    marker.unlink()
    logger.info("generated %d samples in %.1fs", params.num_samples, elapsed)
    return manifest
