"""Resampling of images and label masks through a displacement field.

Images are sampled bilinearly, masks with nearest neighbor, both at the same
field entries so a warped pair stays aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distortion import DisplacementField

DEFAULT_IGNORE_LABEL = 255


@dataclass(frozen=True)
class FillPolicy:
    """How image samples outside the source image are resolved.

    ``kind`` is ``"clamp"`` (replicate the nearest edge pixel) or
    ``"constant"`` (use ``value`` for every channel).
    """

    kind: str = "clamp"
    value: int = 0

    def __post_init__(self):
        if self.kind not in ("clamp", "constant"):
            raise ValueError(f"unknown fill policy {self.kind!r}")
        if not 0 <= int(self.value) <= 255:
            raise ValueError(f"fill value must be in [0, 255], got {self.value}")

    @classmethod
    def parse(cls, text: str) -> FillPolicy:
        """Parse ``clamp`` or ``constant:<v>``."""
        if text == "clamp":
            return cls("clamp")
        kind, sep, value = text.partition(":")
        if kind == "constant":
            return cls("constant", int(value) if sep else 0)
        raise ValueError(f"fill policy must be 'clamp' or 'constant:<v>', got {text!r}")

    def __str__(self):
        return "clamp" if self.kind == "clamp" else f"constant:{self.value}"


@dataclass(frozen=True)
class LabelMask:
    labels: np.ndarray
    ignore_label: int = DEFAULT_IGNORE_LABEL

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError(f"label mask must be 2-D, got shape {self.labels.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def label_set(self) -> set[int]:
        """Distinct labels other than the ignore label."""
        values = np.unique(self.labels)
        return {int(v) for v in values if v != self.ignore_label}


@dataclass(frozen=True)
class LabeledPair:
    image: np.ndarray
    mask: LabelMask

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError(
                f"image {self.image.shape[:2]} and mask {self.mask.shape} differ in size"
            )


def _check_dims(shape, field: DisplacementField):
    if tuple(shape[:2]) != field.shape:
        raise ValueError(f"array of size {tuple(shape[:2])} does not match field {field.shape}")


def warp_image(image: np.ndarray, field: DisplacementField, fill: FillPolicy = FillPolicy()) -> np.ndarray:
    """Bilinear resampling of an 8-bit ``(H, W)`` or ``(H, W, C)`` image."""
    _check_dims(image.shape, field)
    if image.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {image.dtype}")
    squeeze = image.ndim == 2
    src = image[..., None] if squeeze else image
    h, w = field.shape

    sx, sy = field.source_x, field.source_y
    if fill.kind == "clamp":
        sx = np.clip(sx, 0, w - 1)
        sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def tap(yy, xx):
        inside = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)].astype(np.float64)
        if fill.kind == "constant":
            vals[~inside] = fill.value
        return vals

    top = tap(y0, x0) * (1.0 - fx) + tap(y0, x0 + 1) * fx
    bottom = tap(y0 + 1, x0) * (1.0 - fx) + tap(y0 + 1, x0 + 1) * fx
    out = top * (1.0 - fy) + bottom * fy
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out[..., 0] if squeeze else out


def warp_mask(mask: LabelMask, field: DisplacementField) -> LabelMask:
    """Nearest-neighbor resampling; out-of-image sources become ignore."""
    _check_dims(mask.shape, field)
    h, w = field.shape
    # floor(s + 0.5) rounds halves up, consistently on both sides of zero.
    xi = np.floor(field.source_x + 0.5).astype(np.int64)
    yi = np.floor(field.source_y + 0.5).astype(np.int64)
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = mask.labels[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    out = np.where(inside, out, mask.ignore_label).astype(mask.labels.dtype)
    return LabelMask(out, mask.ignore_label)


def warp_pair(pair: LabeledPair, field: DisplacementField, fill: FillPolicy = FillPolicy()) -> LabeledPair:
    return LabeledPair(warp_image(pair.image, field, fill), warp_mask(pair.mask, field))


def valid_crop_box(field: DisplacementField) -> tuple[int, int, int, int]:
    """Largest centered ``(x, y, w, h)`` box whose sources all lie in-image.

    Candidate boxes shrink symmetrically, keeping the aspect ratio as close
    as integer sizes allow.  Falls back to the full frame when even the
    central pixel samples outside the image.
    """
    h, w = field.shape
    bad = (~field.in_bounds()).astype(np.int64)
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = bad.cumsum(0).cumsum(1)

    def clean(x, y, bw, bh):
        s = integral[y + bh, x + bw] - integral[y, x + bw] - integral[y + bh, x] + integral[y, x]
        return s == 0

    steps = max(w, h)
    for k in range(steps):
        scale = 1.0 - k / steps
        bw = max(1, int(round(w * scale)))
        bh = max(1, int(round(h * scale)))
        x = (w - bw) // 2
        y = (h - bh) // 2
        if clean(x, y, bw, bh):
            return x, y, bw, bh
    return 0, 0, w, h


def crop_pair(pair: LabeledPair, box: tuple[int, int, int, int]) -> LabeledPair:
    x, y, bw, bh = box
    return LabeledPair(
        pair.image[y : y + bh, x : x + bw].copy(),
        LabelMask(pair.mask.labels[y : y + bh, x : x + bw].copy(), pair.mask.ignore_label),
    )
