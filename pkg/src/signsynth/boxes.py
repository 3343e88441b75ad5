"""Axis-aligned bounding boxes in continuous pixel coordinates.

Origin is the top-left corner, x grows rightward and y downward. Area is
``width * height`` with no +1 pixel convention.
"""

from __future__ import annotations

from dataclasses import dataclass

# Slack for in-bounds checks on boxes that went through 4-decimal serialization.
BOUNDS_EPS = 1e-6


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Box given by its top-left corner and size."""

    x: float
    y: float
    width: float
    height: float

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValueError(
                f"box width and height must be positive, got {self.width}x{self.height}"
            )

    @property
    def x2(self) -> float:
        return self.x + self.width

    @property
    def y2(self) -> float:
        return self.y + self.height

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> BoundingBox:
        return BoundingBox(self.x + dx, self.y + dy, self.width, self.height)

    def dilate(self, margin: float) -> BoundingBox:
        return BoundingBox(
            self.x - margin, self.y - margin, self.width + 2 * margin, self.height + 2 * margin
        )

    def within(self, image_width: float, image_height: float) -> bool:
        """True if the box lies inside a ``image_width`` x ``image_height`` image."""
        return (
            self.x >= -BOUNDS_EPS
            and self.y >= -BOUNDS_EPS
            and self.x2 <= image_width + BOUNDS_EPS
            and self.y2 <= image_height + BOUNDS_EPS
        )

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.width, self.height]


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union, in [0, 1] and symmetric in its arguments."""
    if a == b:
        return 1.0
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def intersects(a: BoundingBox, b: BoundingBox, margin: float = 0.0) -> bool:
    """True iff both boxes, dilated by ``margin`` on every side, overlap with positive area."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if margin == 0:
        return intersection_area(a, b) > 0
    return intersection_area(a.dilate(margin), b.dilate(margin)) > 0
