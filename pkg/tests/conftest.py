import os

import cv2
import numpy as np
import pytest

from signsynth.images import write_png
from signsynth.templates import TemplateSet

_ACCEPTANCE_LINES = []


def make_sign(kind: int, size: int = 96, seed: int = 0) -> np.ndarray:
    """A flat-white RGB canvas with one colored sign shape on it."""
    rng = np.random.default_rng(seed)
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    fill = tuple(int(v) for v in rng.integers(0, 200, 3))
    c, r = size // 2, size // 2 - 3
    shape = kind % 3
    if shape == 0:
        cv2.circle(img, (c, c), r, fill, -1)
        cv2.circle(img, (c, c), r, (200, 0, 0), 4)
    elif shape == 1:
        pts = np.array([[c, 3], [size - 4, size - 4], [3, size - 4]], np.int32)
        cv2.fillPoly(img, [pts], fill)
    else:
        cv2.rectangle(img, (6, 10), (size - 7, size - 11), fill, -1)
    cv2.putText(img, str(kind), (c - 12, c + 10), cv2.FONT_HERSHEY_SIMPLEX, 0.9, (0, 0, 0), 2)
    return img


def make_template_set(m: int, size: int = 96) -> TemplateSet:
    return TemplateSet.from_images([(f"sign_{i}", make_sign(i, size, seed=i)) for i in range(m)])


def write_backgrounds(directory, count: int = 3, seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        h, w = int(rng.integers(300, 700)), int(rng.integers(300, 700))
        noise = rng.normal(128, 60, (h // 8 + 1, w // 8 + 1, 3))
        img = cv2.resize(noise, (w, h), interpolation=cv2.INTER_CUBIC)
        path = os.path.join(directory, f"bg_{i}.png")
        write_png(path, img)
        paths.append(path)
    return paths


def write_template_dir(directory, m: int, size: int = 64) -> str:
    """Template PNGs plus a ``classes.txt`` list; returns the directory."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i in range(m):
        name = f"sign_{i}.png"
        write_png(os.path.join(directory, name), make_sign(i, size, seed=i))
        lines.append(f"sign_{i}\t{name}")
    with open(os.path.join(directory, "classes.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return str(directory)


def write_bg_manifest(directory, count: int = 3, seed: int = 0) -> str:
    """Background PNGs and a manifest listing them; returns the manifest path."""
    from signsynth.background import write_background_manifest

    os.makedirs(directory, exist_ok=True)
    paths = write_backgrounds(directory, count, seed)
    manifest = os.path.join(directory, "manifest.json")
    write_background_manifest(manifest, [os.path.basename(p) for p in paths], None)
    return manifest


@pytest.fixture
def templates10():
    return make_template_set(10)


@pytest.fixture
def backgrounds(tmp_path):
    d = tmp_path / "bgs"
    d.mkdir()
    return write_backgrounds(d)


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        status = "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES.append((number, f"[{status}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
