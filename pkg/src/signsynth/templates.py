"""Per-class traffic-sign templates with transparency masks."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from signsynth.errors import TemplateError
from signsynth.images import read_image


@dataclass(frozen=True, eq=False)
class Template:
    class_id: int
    image: np.ndarray  # uint8 RGBA; alpha is the sign silhouette
    name: str

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 4:
            raise TemplateError(f"template '{self.name}' must be RGBA, got shape {self.image.shape}")
        if not np.any(self.image[:, :, 3] > 0):
            raise TemplateError(f"template '{self.name}' is fully transparent")

    @property
    def longest_side(self) -> int:
        return max(self.image.shape[:2])


@dataclass(frozen=True)
class TemplateSet:
    templates: dict[int, Template] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.templates:
            raise TemplateError("a template set needs at least one class")
        if sorted(self.templates) != list(range(len(self.templates))):
            raise TemplateError("class ids must form the contiguous range 0..M-1")

    @property
    def class_names(self) -> dict[int, str]:
        return {cid: t.name for cid, t in sorted(self.templates.items())}

    def __len__(self) -> int:
        return len(self.templates)

    def __getitem__(self, class_id: int) -> Template:
        return self.templates[class_id]

    def by_name(self) -> dict[str, np.ndarray]:
        return {t.name: t.image for t in self.templates.values()}

    @classmethod
    def from_images(cls, named_images: Iterable[tuple[str, np.ndarray]], auto_mask: bool = True) -> TemplateSet:
        templates = {}
        seen = set()
        for class_id, (name, image) in enumerate(named_images):
            if name in seen:
                raise TemplateError(f"duplicate class '{name}'")
            seen.add(name)
            templates[class_id] = Template(class_id, to_rgba(image, auto_mask), name)
        return cls(templates)


def _corner_mask(rgb: np.ndarray) -> np.ndarray | None:
    corners = [tuple(rgb[0, 0]), tuple(rgb[0, -1]), tuple(rgb[-1, 0]), tuple(rgb[-1, -1])]
    color, count = Counter(corners).most_common(1)[0]
    if count < 2:
        return None
    return np.all(rgb == np.asarray(color, dtype=rgb.dtype), axis=2)


def to_rgba(image: np.ndarray, auto_mask: bool = True) -> np.ndarray:
    """Promote an RGB template to RGBA.

    With ``auto_mask``, pixels matching the dominant corner color (shared by at
    least two of the four corners) become transparent; otherwise the template
    is fully opaque. RGBA input is returned as is.
    """
    if image.ndim != 3 or image.shape[2] not in (3, 4):
        raise TemplateError(f"unsupported template shape {image.shape}")
    image = np.asarray(image, dtype=np.uint8)
    if image.shape[2] == 4:
        return image.copy()
    alpha = np.full(image.shape[:2], 255, dtype=np.uint8)
    if auto_mask:
        background = _corner_mask(image)
        if background is not None:
            alpha[background] = 0
    return np.dstack([image, alpha])


def read_class_list(class_list_file: str | os.PathLike) -> list[tuple[str, str]]:
    entries = []
    for lineno, line in enumerate(Path(class_list_file).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise TemplateError(f"{class_list_file}:{lineno}: expected 'class_name<TAB>file_name'")
        entries.append((parts[0], parts[1]))
    return entries


def load_template_set(
    directory: str | os.PathLike, class_list_file: str | os.PathLike, auto_mask: bool = True
) -> TemplateSet:
    """Load one template per line of the class list; ids follow line order."""
    entries = read_class_list(class_list_file)
    if not entries:
        raise TemplateError(f"{class_list_file}: empty class list")
    names = [name for name, _ in entries]
    dup = [name for name, n in Counter(names).items() if n > 1]
    if dup:
        raise TemplateError(f"duplicate class '{dup[0]}' in {class_list_file}")
    images = []
    for name, file_name in entries:
        path = Path(directory) / file_name
        if not path.is_file():
            raise TemplateError(f"template file for class '{name}' not found: {path}")
        images.append((name, read_image(path, keep_alpha=True)))
    return TemplateSet.from_images(images, auto_mask=auto_mask)


def sample_template(templates: TemplateSet, rng: np.random.Generator) -> Template:
    """Draw a template uniformly over classes."""
    return templates[int(rng.integers(len(templates)))]
