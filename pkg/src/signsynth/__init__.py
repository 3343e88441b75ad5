"""Synthetic traffic-sign detection datasets from templates and natural backgrounds."""

from signsynth.boxes import BoundingBox, intersects, iou

__all__ = ["BoundingBox", "intersects", "iou"]
__version__ = "0.1.0"
