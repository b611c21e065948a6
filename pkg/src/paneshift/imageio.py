"""PNG/JPEG reading and PNG writing for images and label masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MASK_SUFFIXES = (".png",)


def read_image(path) -> np.ndarray:
    """8-bit ``(H, W)`` gray or ``(H, W, 3|4)`` color array."""
    with Image.open(path) as im:
        if im.mode in ("L", "RGB", "RGBA"):
            pass
        elif im.mode == "LA":
            im = im.convert("RGBA")
        elif im.mode == "P":
            im = im.convert("RGBA" if "transparency" in im.info else "RGB")
        else:
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.uint8).copy()


def read_labels(path) -> np.ndarray:
    """Single-channel label array; palette indices are taken as labels."""
    with Image.open(path) as im:
        if im.mode in ("L", "P"):
            return np.asarray(im, dtype=np.uint8).copy()
        if im.mode.startswith("I"):
            return np.asarray(im).astype(np.uint16)
        raise ValueError(f"{path}: label masks must be single-channel, got mode {im.mode}")


def image_size(path) -> tuple[int, int]:
    """``(width, height)`` from the file header."""
    with Image.open(path) as im:
        return im.size


def write_image(path, image: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(path, format="PNG")


def write_labels(path, labels: np.ndarray):
    """8-bit PNG when every label fits, 16-bit otherwise."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if labels.size == 0 or int(labels.max()) <= 255:
        im = Image.fromarray(labels.astype(np.uint8))
    else:
        im = Image.fromarray(labels.astype(np.uint16))
    im.save(path, format="PNG")


def _index_by_stem(root: Path, suffixes) -> tuple[dict, list[str]]:
    found = {}
    clashes = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in suffixes:
            continue
        stem = path.relative_to(root).with_suffix("").as_posix()
        if stem in found:
            clashes.append(f"{stem}: several files share this id ({found[stem].name}, {path.name})")
            continue
        found[stem] = path
    return found, clashes


def pair_by_stem(root_a, root_b, suffixes_a, suffixes_b):
    """Pair files of two trees by relative path without extension.

    Returns ``(pairs, problems)`` where ``pairs`` is a list of
    ``(id, path_a, path_b)`` sorted by id and ``problems`` names every
    orphan or ambiguous id.
    """
    root_a, root_b = Path(root_a), Path(root_b)
    for root in (root_a, root_b):
        if not root.is_dir():
            raise FileNotFoundError(f"directory not found: {root}")
    a, problems_a = _index_by_stem(root_a, suffixes_a)
    b, problems_b = _index_by_stem(root_b, suffixes_b)
    problems = problems_a + problems_b
    for stem in sorted(set(a) - set(b)):
        problems.append(f"{stem}: {a[stem]} has no counterpart under {root_b}")
    for stem in sorted(set(b) - set(a)):
        problems.append(f"{stem}: {b[stem]} has no counterpart under {root_a}")
    pairs = [(stem, a[stem], b[stem]) for stem in sorted(set(a) & set(b))]
    return pairs, problems
