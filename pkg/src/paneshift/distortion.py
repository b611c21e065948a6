"""Radial distortion math, coefficient sampling and global displacement fields.

Coordinates follow the inverse-warping convention: a *destination* pixel of
the distorted output is mapped to the *source* location it samples from the
undistorted input.  Normalized coordinates put the distortion center at the
origin and the outermost pixel centers at -1 and +1 on each axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

GLOBAL_SIGMA_RANGE = (0.0, 0.4)
GRID_SIGMA_RANGE = (0.0, 0.5)

# Stream: numpy PCG64 seeded through SeedSequence(seed), one raw 64-bit word
# per draw, u = (word >> 11) * 2**-53 in [0, 1), value = lo + (hi - lo) * u.
RNG_ALGORITHM = "pcg64-seedsequence-u53"

_U53 = 1.0 / 9007199254740992.0  # 2**-53
_SEED_MASK = (1 << 64) - 1


class DistortionCoefficients(NamedTuple):
    """Radial coefficients ``(k1, k2)`` of ``f = 1 + k1 r^2 + k2 r^4``."""

    k1: float
    k2: float


class SigmaRangeError(ValueError):
    """Distortion intensity outside the legal range of a model."""


class RandomStream:
    """Seeded uniform stream with a fixed, library-independent draw rule.

    Each call to :meth:`uniform` consumes exactly one 64-bit word from a
    PCG64 generator, so the sequence of values depends only on the seed and
    the order of calls.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int):
        self.seed = int(seed) & _SEED_MASK
        self._bitgen = np.random.PCG64(np.random.SeedSequence(self.seed))

    def uniform(self, lo: float, hi: float) -> float:
        word = int(self._bitgen.random_raw())
        u = (word >> 11) * _U53
        return lo + (hi - lo) * u

    def spawn(self, n: int) -> list[RandomStream]:
        """Independent child streams, deterministic in (seed, n)."""
        children = np.random.SeedSequence(self.seed).spawn(n)
        out = []
        for child in children:
            state = child.generate_state(2, np.uint32)
            out.append(RandomStream(int(state[0]) | (int(state[1]) << 32)))
        return out


def check_sigma(sigma: float, model: str) -> float:
    """Validate ``sigma`` against the legal range of ``model``."""
    if model not in ("global", "grid"):
        raise ValueError(f"unknown distortion model {model!r}")
    lo, hi = GLOBAL_SIGMA_RANGE if model == "global" else GRID_SIGMA_RANGE
    sigma = float(sigma)
    if not (lo <= sigma <= hi):
        raise SigmaRangeError(
            f"sigma={sigma} is outside the legal range [{lo}, {hi}] "
            f"for the {model} model"
        )
    return sigma


def undistort_point(x: float, y: float, coeffs: DistortionCoefficients):
    """Map a distorted normalized point to its undistorted location."""
    r2 = x * x + y * y
    f = 1.0 + coeffs.k1 * r2 + coeffs.k2 * r2 * r2
    return x * f, y * f


def sample_global_coeffs(sigma: float, rng: RandomStream) -> DistortionCoefficients:
    """Draw ``k1 ~ U[-sigma/2, sigma)`` then ``k2 ~ U[0, sigma)``."""
    sigma = check_sigma(sigma, "global")
    k1 = rng.uniform(-sigma / 2.0, sigma)
    k2 = rng.uniform(0.0, sigma)
    return DistortionCoefficients(k1, k2)


def sample_grid_coeffs(sigma: float, rng: RandomStream) -> DistortionCoefficients:
    """Draw ``k1`` then ``k2``, both ``~ U[-sigma, sigma)``."""
    sigma = check_sigma(sigma, "grid")
    k1 = rng.uniform(-sigma, sigma)
    k2 = rng.uniform(-sigma, sigma)
    return DistortionCoefficients(k1, k2)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Source coordinates (pixels) for every destination pixel.

    ``source_x`` and ``source_y`` are float64 arrays of shape
    ``(height, width)``.  Entries may fall outside the image.
    """

    source_x: np.ndarray
    source_y: np.ndarray

    def __post_init__(self):
        if self.source_x.shape != self.source_y.shape or self.source_x.ndim != 2:
            raise ValueError("source_x and source_y must be 2-D arrays of equal shape")
        for arr in (self.source_x, self.source_y):
            arr.flags.writeable = False

    @property
    def height(self) -> int:
        return self.source_x.shape[0]

    @property
    def width(self) -> int:
        return self.source_x.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.source_x.shape

    @classmethod
    def identity(cls, width: int, height: int) -> DisplacementField:
        _check_size(width, height)
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        return cls(xs, ys)

    def displacement(self) -> tuple[np.ndarray, np.ndarray]:
        """``(source - destination)`` per axis."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        return self.source_x - xs, self.source_y - ys

    def in_bounds(self) -> np.ndarray:
        """Boolean mask of destinations whose source lies inside the image."""
        sx, sy = self.source_x, self.source_y
        return (sx >= 0) & (sx <= self.width - 1) & (sy >= 0) & (sy <= self.height - 1)

    def equals(self, other: DisplacementField) -> bool:
        """Bitwise equality of both coordinate arrays."""
        return (
            self.shape == other.shape
            and self.source_x.tobytes() == other.source_x.tobytes()
            and self.source_y.tobytes() == other.source_y.tobytes()
        )

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.source_x, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.source_y, dtype="<f8").tobytes())
        return h.hexdigest()


def _check_size(width: int, height: int):
    if width < 1 or height < 1:
        raise ValueError(f"image size must be positive, got {width}x{height}")


def axis_frame(start: int, length: int) -> tuple[float, float]:
    """Center and half-extent (pixels) of a span of ``length`` pixel centers."""
    half = (length - 1) / 2.0
    return start + half, half


def normalize(coord: np.ndarray, center, half) -> np.ndarray:
    """Pixel coordinate to normalized frame; zero-extent axes map to 0."""
    half = np.asarray(half, dtype=np.float64)
    safe = np.where(half > 0, half, 1.0)
    return np.where(half > 0, (coord - center) / safe, 0.0)


def radial_displacement(px, py, cx, cy, hx, hy, k1, k2):
    """Pixel displacement ``source - destination`` of a radial lens.

    The lens has its center at ``(cx, cy)`` and maps pixel offsets
    ``hx``/``hy`` away from the center to normalized +-1.  All arguments
    broadcast.  Computing the displacement (rather than the source point
    directly) keeps zero coefficients an exact identity.
    """
    xn = normalize(px, cx, hx)
    yn = normalize(py, cy, hy)
    r2 = xn * xn + yn * yn
    g = k1 * r2 + k2 * r2 * r2
    return xn * g * hx, yn * g * hy


def build_global_field(width: int, height: int, coeffs: DistortionCoefficients) -> DisplacementField:
    """Displacement field of one lens covering the whole image."""
    _check_size(width, height)
    cx, hx = axis_frame(0, width)
    cy, hy = axis_frame(0, height)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = radial_displacement(xs, ys, cx, cy, hx, hy, float(coeffs.k1), float(coeffs.k2))
    return DisplacementField(xs + dx, ys + dy)


def mean_pixel_shift(field: DisplacementField) -> float:
    """Mean Euclidean distance between each destination and its source."""
    dx, dy = field.displacement()
    return float(np.mean(np.hypot(dx, dy)))
