import pytest
from hypothesis import given
from hypothesis import strategies as st

from signsynth.boxes import BoundingBox, intersects, iou

coords = st.floats(0, 500, allow_nan=False)
sizes = st.floats(0.5, 300, allow_nan=False)
boxes = st.builds(BoundingBox, coords, coords, sizes, sizes)


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ((0, 0, 10, 10), (0, 0, 10, 10), 1.0),
        ((0, 0, 10, 10), (20, 20, 5, 5), 0.0),
        ((0, 0, 10, 10), (5, 0, 10, 10), 50 / 150),
    ],
)
def test_iou_examples(a, b, expected):
    assert iou(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(expected)


@pytest.mark.parametrize(
    "a, b, margin, expected",
    [
        ((0, 0, 10, 10), (10, 0, 10, 10), 0, False),
        ((0, 0, 10, 10), (10, 0, 10, 10), 1, True),
        ((0, 0, 10, 10), (5, 5, 10, 10), 0, True),
    ],
)
def test_intersects_examples(a, b, margin, expected):
    assert intersects(BoundingBox(*a), BoundingBox(*b), margin) is expected


def test_invalid_box_rejected():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 5, -1)


def test_negative_margin_rejected():
    with pytest.raises(ValueError):
        intersects(BoundingBox(0, 0, 1, 1), BoundingBox(0, 0, 1, 1), -1)


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


@given(boxes)
def test_iou_self_is_one(a):
    assert iou(a, a) == 1.0


@given(boxes, boxes)
def test_zero_margin_intersects_iff_positive_iou(a, b):
    assert intersects(a, b, 0) == (iou(a, b) > 0)


def test_within():
    box = BoundingBox(10, 10, 20, 20)
    assert box.within(30, 30)
    assert not box.within(29, 30)
