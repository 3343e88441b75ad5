"""COCO-style annotation files and detection result files.

Annotation file::

    {"images": [{"id", "file_name", "width", "height"}],
     "annotations": [{"id", "image_id", "category_id", "bbox": [x, y, w, h], "area", "iscrowd"}],
     "categories": [{"id", "name"}]}

Category ids are 0-based class ids; annotation ids count from 1. Detection
file: a JSON array of ``{"image_id", "bbox": [x, y, w, h], "category_id", "score"}``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from signsynth.boxes import BoundingBox
from signsynth.errors import DuplicateIdError, InvalidBoxError, SchemaError, ScoreRangeError
from signsynth.images import write_png

ANNOTATION_FILE = "annotations.json"
IMAGE_DIR = "images"
FLOAT_DECIMALS = 4


class Annotation(NamedTuple):
    box: BoundingBox
    class_id: int


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BoundingBox
    class_id: int
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ScoreRangeError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class GroundTruthIndex:
    images: dict[str, list[Annotation]] = field(default_factory=dict)
    class_names: dict[int, str] = field(default_factory=dict)
    image_sizes: dict[str, tuple[int, int]] = field(default_factory=dict)
    file_names: dict[str, str] = field(default_factory=dict)


def image_file_name(sample_index: int) -> str:
    return f"{sample_index:08d}.png"


def _fmt(value: float) -> float:
    return round(float(value), FLOAT_DECIMALS)


class ImageEntry(NamedTuple):
    image_id: int
    file_name: str
    width: int
    height: int
    annotations: Sequence[Annotation]


def coco_document(entries: Iterable[ImageEntry], class_names: dict[int, str]) -> dict:
    """Assemble the annotation document; entries are emitted in the given order."""
    images, annotations = [], []
    next_id = 1
    for entry in entries:
        images.append(
            {"id": entry.image_id, "file_name": entry.file_name, "width": entry.width, "height": entry.height}
        )
        for ann in entry.annotations:
            box = ann.box
            annotations.append(
                {
                    "id": next_id,
                    "image_id": entry.image_id,
                    "category_id": int(ann.class_id),
                    "bbox": [_fmt(v) for v in box.as_list()],
                    "area": _fmt(box.area),
                    "iscrowd": 0,
                }
            )
            next_id += 1
    categories = [{"id": int(cid), "name": name} for cid, name in sorted(class_names.items())]
    return {"images": images, "annotations": annotations, "categories": categories}


def dump_json(path: str | os.PathLike, obj) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def write_dataset(samples, class_names: dict[int, str], output_dir: str | os.PathLike) -> Path:
    """Write sample images as PNG plus one annotation file; returns the file's path.

    ``samples`` are objects with ``image``, ``annotations`` and
    ``sample_index`` attributes; they are written sorted by index.
    """
    out = Path(output_dir)
    (out / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in sorted(samples, key=lambda s: s.sample_index):
        name = image_file_name(sample.sample_index)
        write_png(out / IMAGE_DIR / name, sample.image)
        h, w = sample.image.shape[:2]
        entries.append(ImageEntry(sample.sample_index, name, w, h, list(sample.annotations)))
    path = out / ANNOTATION_FILE
    dump_json(path, coco_document(entries, class_names))
    return path


def _field(obj, key: str, where: str, types):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}: missing field '{key}'")
    value = obj[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise SchemaError(f"{where}.{key}: unexpected type {type(value).__name__}")
    return value


def _box(raw, where: str) -> BoundingBox:
    if not isinstance(raw, list) or len(raw) != 4 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        raise SchemaError(f"{where}.bbox: expected [x, y, width, height]")
    try:
        return BoundingBox(*(float(v) for v in raw))
    except ValueError as exc:
        raise InvalidBoxError(f"{where}: {exc}") from exc


def _load(path: str | os.PathLike):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


def read_ground_truth(annotation_file: str | os.PathLike) -> GroundTruthIndex:
    doc = _load(annotation_file)
    if not isinstance(doc, dict):
        raise SchemaError("annotation file root must be an object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise SchemaError(f"root: missing array '{key}'")

    index = GroundTruthIndex()
    for i, cat in enumerate(doc["categories"]):
        where = f"categories[{i}]"
        cid = _field(cat, "id", where, int)
        if cid in index.class_names:
            raise DuplicateIdError(f"{where}: duplicate category id {cid}")
        index.class_names[cid] = str(_field(cat, "name", where, str))

    for i, img in enumerate(doc["images"]):
        where = f"images[{i}]"
        image_id = str(_field(img, "id", where, (int, str)))
        if image_id in index.images:
            raise DuplicateIdError(f"{where}: duplicate image id {image_id}")
        index.images[image_id] = []
        index.file_names[image_id] = str(_field(img, "file_name", where, str))
        index.image_sizes[image_id] = (
            _field(img, "width", where, int),
            _field(img, "height", where, int),
        )

    for i, ann in enumerate(doc["annotations"]):
        where = f"annotations[{i}]"
        image_id = str(_field(ann, "image_id", where, (int, str)))
        class_id = _field(ann, "category_id", where, int)
        box = _box(ann.get("bbox"), where)
        if image_id not in index.images:
            raise SchemaError(f"{where}: unknown image_id {image_id}")
        if class_id not in index.class_names:
            raise SchemaError(f"{where}: unknown category_id {class_id}")
        width, height = index.image_sizes[image_id]
        if not box.within(width, height):
            raise InvalidBoxError(f"{where}: box {box.as_list()} outside image {image_id} ({width}x{height})")
        index.images[image_id].append(Annotation(box, class_id))
    return index


def read_detections(file: str | os.PathLike) -> list[Detection]:
    doc = _load(file)
    if not isinstance(doc, list):
        raise SchemaError("detection file must be a JSON array")
    detections = []
    for i, rec in enumerate(doc):
        where = f"[{i}]"
        image_id = str(_field(rec, "image_id", where, (int, str)))
        class_id = _field(rec, "category_id", where, int)
        score = float(_field(rec, "score", where, (int, float)))
        if not 0.0 <= score <= 1.0:
            raise ScoreRangeError(f"{where}: score {score} outside [0, 1]")
        detections.append(Detection(image_id, _box(rec.get("bbox"), where), class_id, score))
    return detections


def write_detections(path: str | os.PathLike, detections: Iterable[Detection]) -> None:
    records = [
        {
            "image_id": d.image_id,
            "bbox": [_fmt(v) for v in d.box.as_list()],
            "category_id": d.class_id,
            "score": d.confidence,
        }
        for d in detections
    ]
    dump_json(path, records)


def ground_truth_as_detections(gt: GroundTruthIndex, confidence: float = 1.0) -> list[Detection]:
    return [
        Detection(image_id, ann.box, ann.class_id, confidence)
        for image_id, anns in gt.images.items()
        for ann in anns
    ]
