"""Background corpus ingestion: COCO index parsing, filtering, standardization."""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

import cv2
import numpy as np

from signsynth.errors import DuplicateIdError, MalformedIndexError
from signsynth.images import to_float

# Driving-domain COCO categories that would put unannotated look-alikes into the backgrounds.
DEFAULT_EXCLUDED_CATEGORIES = frozenset(
    {
        "traffic light",
        "bicycle",
        "car",
        "motorcycle",
        "bus",
        "truck",
        "fire hydrant",
        "stop sign",
        "parking meter",
    }
)
DEFAULT_MIN_WIDTH = 400
DEFAULT_MIN_HEIGHT = 600
DEFAULT_CANVAS_SIDE = 1500

REASON_EXCLUDED = "excluded-category"
REASON_UNDERSIZED = "undersized"


@dataclass(frozen=True)
class BackgroundRecord:
    image_id: str
    file_path: str
    width: int
    height: int
    category_labels: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image_id} has non-positive size")


@dataclass(frozen=True)
class FilterPolicy:
    excluded_categories: frozenset[str] = DEFAULT_EXCLUDED_CATEGORIES
    min_width: int = DEFAULT_MIN_WIDTH
    min_height: int = DEFAULT_MIN_HEIGHT

    def __post_init__(self) -> None:
        if self.min_width < 0 or self.min_height < 0:
            raise ValueError("minimum sizes must be non-negative")

    def to_dict(self) -> dict:
        return {
            "excluded_categories": sorted(self.excluded_categories),
            "min_width": self.min_width,
            "min_height": self.min_height,
        }


@dataclass(frozen=True)
class CanvasSpec:
    side: int = DEFAULT_CANVAS_SIDE

    def __post_init__(self) -> None:
        if self.side <= 0:
            raise ValueError("canvas side must be positive")


@dataclass
class FilterResult:
    accepted: list[BackgroundRecord] = field(default_factory=list)
    rejected: list[tuple[BackgroundRecord, str]] = field(default_factory=list)

    def reason_counts(self) -> dict[str, int]:
        return dict(sorted(Counter(reason for _, reason in self.rejected).items()))


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedIndexError(f"{where}: missing required field '{key}'")
    return obj[key]


def parse_annotation_index(stream: BinaryIO | bytes, images_root: str | os.PathLike = "") -> list[BackgroundRecord]:
    """Parse a COCO-style index into one record per image.

    Each record's ``category_labels`` holds the names of every category
    annotated on that image, crowd annotations included.
    """
    raw = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    try:
        index = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedIndexError(f"index is not valid JSON: {exc}") from exc
    if not isinstance(index, dict):
        raise MalformedIndexError("index root must be a JSON object")
    images = _require(index, "images", "index")
    annotations = _require(index, "annotations", "index")
    categories = _require(index, "categories", "index")
    for name, arr in (("images", images), ("annotations", annotations), ("categories", categories)):
        if not isinstance(arr, list):
            raise MalformedIndexError(f"index: '{name}' must be an array")

    category_names = {}
    for i, cat in enumerate(categories):
        where = f"categories[{i}]"
        category_names[_require(cat, "id", where)] = str(_require(cat, "name", where))

    labels: dict[object, set[str]] = {}
    for i, ann in enumerate(annotations):
        where = f"annotations[{i}]"
        image_id = _require(ann, "image_id", where)
        category_id = _require(ann, "category_id", where)
        if category_id not in category_names:
            raise MalformedIndexError(f"{where}: unknown category_id {category_id!r}")
        labels.setdefault(image_id, set()).add(category_names[category_id])

    records = []
    seen = set()
    for i, img in enumerate(images):
        where = f"images[{i}]"
        image_id = _require(img, "id", where)
        file_name = _require(img, "file_name", where)
        width = _require(img, "width", where)
        height = _require(img, "height", where)
        if image_id in seen:
            raise DuplicateIdError(f"{where}: duplicate image id {image_id!r}")
        seen.add(image_id)
        try:
            record = BackgroundRecord(
                image_id=str(image_id),
                file_path=os.path.join(os.fspath(images_root), file_name) if images_root else file_name,
                width=int(width),
                height=int(height),
                category_labels=frozenset(labels.get(image_id, ())),
            )
        except (TypeError, ValueError) as exc:
            raise MalformedIndexError(f"{where}: {exc}") from exc
        records.append(record)
    return records


def rejection_reason(record: BackgroundRecord, policy: FilterPolicy) -> str | None:
    if record.category_labels & policy.excluded_categories:
        return REASON_EXCLUDED
    if record.width < policy.min_width or record.height < policy.min_height:
        return REASON_UNDERSIZED
    return None


def filter_backgrounds(records: Iterable[BackgroundRecord], policy: FilterPolicy = FilterPolicy()) -> FilterResult:
    """Split records into accepted and rejected, preserving input order.

    A category hit takes precedence over the size check when both apply.
    """
    result = FilterResult()
    for record in records:
        reason = rejection_reason(record, policy)
        if reason is None:
            result.accepted.append(record)
        else:
            result.rejected.append((record, reason))
    return result


def standardize_background(image: np.ndarray, spec: CanvasSpec = CanvasSpec()) -> np.ndarray:
    """Scale so the short side equals ``spec.side``, then take the central square.

    Returns a float64 buffer of shape (side, side, channels).
    """
    img = to_float(image)
    h, w = img.shape[:2]
    side = spec.side
    new_w, new_h, x0, y0 = crop_offsets(w, h, side)
    if (new_w, new_h) != (w, h):
        img = cv2.resize(img, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
        if img.ndim == 2:
            img = img[:, :, None]
    return np.ascontiguousarray(img[y0 : y0 + side, x0 : x0 + side])


def crop_offsets(width: int, height: int, side: int) -> tuple[int, int, int, int]:
    """Scaled size and crop offset used by :func:`standardize_background`."""
    if width <= height:
        new_w, new_h = side, max(side, math.floor(height * side / width + 0.5))
    else:
        new_w, new_h = max(side, math.floor(width * side / height + 0.5)), side
    return new_w, new_h, (new_w - side) // 2, (new_h - side) // 2


def synth_noise_background(spec: CanvasSpec, rng_seed: int) -> np.ndarray:
    """Uniform i.i.d. noise over {0..255} for every pixel channel."""
    rng = np.random.default_rng(rng_seed)
    return rng.integers(0, 256, size=(spec.side, spec.side, 3), dtype=np.uint8)


def write_background_manifest(
    path: str | os.PathLike,
    image_paths: list[str],
    policy: FilterPolicy | None,
    result: FilterResult | None = None,
    extra: dict | None = None,
) -> None:
    manifest = {
        "images": list(image_paths),
        "policy": policy.to_dict() if policy is not None else None,
        "counts": {
            "accepted": len(image_paths),
            "rejected": len(result.rejected) if result is not None else 0,
            "rejected_by_reason": result.reason_counts() if result is not None else {},
        },
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_background_manifest(path: str | os.PathLike) -> list[str]:
    """Image paths listed in a manifest; relative entries resolve against its directory."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        images = manifest["images"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedIndexError(f"{path}: not a background manifest ({exc})") from exc
    base = path.parent
    return [p if os.path.isabs(p) else os.fspath(base / p) for p in images]
