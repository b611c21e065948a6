import hashlib
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

_CRITERIA = []


def synthetic_mask(rng, height, width, num_classes=6, blobs=8):
    """Label mask of overlapping axis-aligned rectangles on a random background."""
    mask = np.full((height, width), rng.integers(num_classes), dtype=np.uint8)
    for _ in range(blobs):
        x0, x1 = sorted(rng.integers(0, width, 2))
        y0, y1 = sorted(rng.integers(0, height, 2))
        mask[y0 : y1 + 1, x0 : x1 + 1] = rng.integers(num_classes)
    return mask


def synthetic_image(rng, mask):
    """RGB image whose colors follow the mask, plus mild texture."""
    palette = rng.integers(0, 256, size=(256, 3))
    img = palette[mask].astype(np.int64)
    img += rng.integers(-10, 11, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def write_dataset(root: Path, n, size=(160, 144), seed=0, num_classes=6, image_suffix=".png"):
    """ADE-style ``images/`` and ``annotations/`` trees of ``n`` synthetic pairs."""
    rng = np.random.default_rng(seed)
    images = root / "images"
    masks = root / "annotations"
    for i in range(n):
        w, h = size
        mask = synthetic_mask(rng, h, w, num_classes)
        img = synthetic_image(rng, mask)
        sub = "a" if i % 2 else "b"
        (images / sub).mkdir(parents=True, exist_ok=True)
        (masks / sub).mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(images / sub / f"img_{i:03d}{image_suffix}")
        Image.fromarray(mask).save(masks / sub / f"img_{i:03d}.png")
    return images, masks


def tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(p for p in Path(root).rglob("*") if p.is_file()):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(b"\0")
        h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture
def dataset_factory(tmp_path):
    def make(n, **kwargs):
        return write_dataset(tmp_path / "data", n, **kwargs)

    return make


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome for the terminal summary."""

    def record(number, name, ok, detail=""):
        """``ok`` is True, False, or None for a skipped criterion."""
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"{status}  criterion {number:>2}: {name}" + (f"  [{detail}]" if detail else "")
        _CRITERIA.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA, key=lambda item: item[0]):
        terminalreporter.write_line(line)
