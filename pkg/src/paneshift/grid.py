"""Spatially varying radial distortion on a grid of patches.

Every patch is its own lens (center at the patch center, patch rectangle
normalized to [-1, 1] per axis).  Across each interior patch boundary a strip
of ``strip_width`` pixels, centered on the boundary, blends the displacement
vectors of the neighboring lenses linearly; where a horizontal and a vertical
strip cross, the four surrounding lenses are blended bilinearly.  The blend
weights reach exactly 0 and 1 at the strip edges, so the composite field is
continuous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distortion import (
    RNG_ALGORITHM,
    DisplacementField,
    DistortionCoefficients,
    RandomStream,
    axis_frame,
    check_sigma,
    radial_displacement,
    sample_grid_coeffs,
)

DEFAULT_ROWS = 10
DEFAULT_COLS = 10
DEFAULT_STRIP_WIDTH = 10


class GridLayoutError(ValueError):
    pass


def split_axis(length: int, parts: int) -> list[int]:
    """Part sizes: ``length // parts``, the first ``length % parts`` one larger."""
    base, extra = divmod(length, parts)
    return [base + 1 if i < extra else base for i in range(parts)]


@dataclass(frozen=True)
class PatchLayout:
    width: int
    height: int
    col_widths: tuple[int, ...]
    row_heights: tuple[int, ...]

    @property
    def rows(self) -> int:
        return len(self.row_heights)

    @property
    def cols(self) -> int:
        return len(self.col_widths)

    @property
    def col_starts(self) -> tuple[int, ...]:
        return tuple(np.concatenate([[0], np.cumsum(self.col_widths)[:-1]]).tolist())

    @property
    def row_starts(self) -> tuple[int, ...]:
        return tuple(np.concatenate([[0], np.cumsum(self.row_heights)[:-1]]).tolist())

    @property
    def patch_rects(self) -> list[tuple[int, int, int, int]]:
        """``(x, y, w, h)`` per patch in row-major order."""
        return [
            (x, y, w, h)
            for y, h in zip(self.row_starts, self.row_heights)
            for x, w in zip(self.col_starts, self.col_widths)
        ]

    @property
    def min_side(self) -> int:
        return min(min(self.col_widths), min(self.row_heights))


def patch_layout(width: int, height: int, rows: int = DEFAULT_ROWS, cols: int = DEFAULT_COLS) -> PatchLayout:
    if rows < 1 or cols < 1:
        raise GridLayoutError(f"grid must have at least one row and column, got {rows}x{cols}")
    if width < cols or height < rows:
        raise GridLayoutError(
            f"image {width}x{height} is smaller than the {cols}x{rows} grid"
        )
    return PatchLayout(width, height, tuple(split_axis(width, cols)), tuple(split_axis(height, rows)))


@dataclass(frozen=True)
class GridDistortionSpec:
    """Everything needed to rebuild one grid distortion bit-exactly.

    ``coeffs`` is a ``(rows, cols, 2)`` float64 array holding ``(k1, k2)``
    per patch.
    """

    layout: PatchLayout
    coeffs: np.ndarray = field(repr=False)
    strip_width: int
    sigma: float
    seed: int
    rng_algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.shape != (self.layout.rows, self.layout.cols, 2):
            raise GridLayoutError(
                f"coefficient matrix shape {coeffs.shape} does not match "
                f"{self.layout.rows}x{self.layout.cols} layout"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        check_strip_width(self.strip_width, self.layout)
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def rows(self) -> int:
        return self.layout.rows

    @property
    def cols(self) -> int:
        return self.layout.cols

    def coefficient(self, row: int, col: int) -> DistortionCoefficients:
        k1, k2 = self.coeffs[row, col]
        return DistortionCoefficients(float(k1), float(k2))


def check_strip_width(strip_width: int, layout: PatchLayout):
    if strip_width < 0:
        raise GridLayoutError(f"strip width must be >= 0, got {strip_width}")
    if (layout.rows > 1 or layout.cols > 1) and strip_width >= layout.min_side:
        raise GridLayoutError(
            f"strip width {strip_width} must be smaller than the smallest "
            f"patch side ({layout.min_side} px)"
        )


def build_grid_spec(
    width: int,
    height: int,
    sigma: float,
    seed: int,
    rows: int = DEFAULT_ROWS,
    cols: int = DEFAULT_COLS,
    strip_width: int = DEFAULT_STRIP_WIDTH,
) -> GridDistortionSpec:
    """Sample one coefficient pair per patch, row-major, from ``seed``."""
    sigma = check_sigma(sigma, "grid")
    layout = patch_layout(width, height, rows, cols)
    check_strip_width(strip_width, layout)
    rng = RandomStream(seed)
    coeffs = np.empty((rows, cols, 2), dtype=np.float64)
    for r in range(rows):
        for c in range(cols):
            coeffs[r, c] = sample_grid_coeffs(sigma, rng)
    return GridDistortionSpec(layout, coeffs, strip_width, sigma, rng.seed)


def _axis_blend(starts, lengths, strip_width):
    """Per-pixel (lower patch, upper patch, upper weight) along one axis.

    Outside strips both indices are the pixel's own patch and the weight is
    0.  Pixel centers sit at integer coordinates, so the boundary before
    patch ``j`` lies at ``starts[j] - 0.5``.
    """
    n = int(sum(lengths))
    own = np.repeat(np.arange(len(lengths)), lengths)
    lo = own.copy()
    hi = own.copy()
    t = np.zeros(n, dtype=np.float64)
    if strip_width > 0:
        half = strip_width / 2.0
        pix = np.arange(n, dtype=np.float64)
        for j in range(1, len(lengths)):
            edge = starts[j] - 0.5
            inside = np.abs(pix - edge) < half
            lo[inside] = j - 1
            hi[inside] = j
            t[inside] = (pix[inside] - (edge - half)) / strip_width
    return lo, hi, t


def _patch_frames(starts, lengths):
    frames = [axis_frame(s, n) for s, n in zip(starts, lengths)]
    centers = np.array([f[0] for f in frames], dtype=np.float64)
    halves = np.array([f[1] for f in frames], dtype=np.float64)
    return centers, halves


def grid_displacement(spec: GridDistortionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Blended displacement ``(dx, dy)`` arrays of shape ``(height, width)``."""
    layout = spec.layout
    cx, hx = _patch_frames(layout.col_starts, layout.col_widths)
    cy, hy = _patch_frames(layout.row_starts, layout.row_heights)
    clo, chi, tx = _axis_blend(layout.col_starts, layout.col_widths, spec.strip_width)
    rlo, rhi, ty = _axis_blend(layout.row_starts, layout.row_heights, spec.strip_width)

    xs = np.arange(layout.width, dtype=np.float64)[None, :]
    ys = np.arange(layout.height, dtype=np.float64)[:, None]
    k1 = spec.coeffs[..., 0]
    k2 = spec.coeffs[..., 1]

    dx = np.zeros((layout.height, layout.width), dtype=np.float64)
    dy = np.zeros_like(dx)
    # Fixed summation order keeps the result independent of how it is chunked.
    for rows, wy in ((rlo, 1.0 - ty), (rhi, ty)):
        for cols, wx in ((clo, 1.0 - tx), (chi, tx)):
            r = rows[:, None]
            c = cols[None, :]
            px, py = radial_displacement(
                xs, ys, cx[c], cy[r], hx[c], hy[r], k1[r, c], k2[r, c]
            )
            w = wy[:, None] * wx[None, :]
            dx += w * px
            dy += w * py
    return dx, dy


def build_grid_field(spec: GridDistortionSpec, width: int, height: int) -> DisplacementField:
    if (width, height) != (spec.layout.width, spec.layout.height):
        raise GridLayoutError(
            f"spec was built for {spec.layout.width}x{spec.layout.height}, "
            f"got {width}x{height}"
        )
    dx, dy = grid_displacement(spec)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return DisplacementField(xs + dx, ys + dy)


def field_continuity_report(field: DisplacementField) -> float:
    """Largest displacement-vector jump between 4-adjacent pixels."""
    dx, dy = field.displacement()
    jump = 0.0
    if field.width > 1:
        jump = max(jump, float(np.max(np.hypot(np.diff(dx, axis=1), np.diff(dy, axis=1)))))
    if field.height > 1:
        jump = max(jump, float(np.max(np.hypot(np.diff(dx, axis=0), np.diff(dy, axis=0)))))
    return jump


def _max_abs_poly(a: float, b: float, rho_max: float) -> float:
    """``max |a*rho + b*rho**2|`` for ``rho`` in ``[0, rho_max]``."""
    candidates = [0.0, rho_max]
    if b != 0.0:
        stationary = -a / (2.0 * b)
        if 0.0 < stationary < rho_max:
            candidates.append(stationary)
    return max(abs(a * r + b * r * r) for r in candidates)


def jacobian_bound(spec: GridDistortionSpec) -> float:
    """Upper bound on the displacement Jacobian norm of every patch lens.

    A lens displacement ``d(p) = p * g(r^2)`` with ``g = k1 r^2 + k2 r^4``
    has Jacobian eigenvalues ``g`` (tangential) and ``3 k1 r^2 + 5 k2 r^4``
    (radial).  Each is maximized over the region where the patch's lens is
    evaluated: the patch, the strips around it, plus one pixel of margin.
    Anisotropic patches scale the pixel-space norm by the axis ratio.
    """
    layout = spec.layout
    reach = spec.strip_width / 2.0 + 1.0
    best = 0.0
    for r, h in enumerate(layout.row_heights):
        hy = (h - 1) / 2.0
        for c, w in enumerate(layout.col_widths):
            hx = (w - 1) / 2.0
            xn = (w / 2.0 + reach) / hx if hx > 0 else 0.0
            yn = (h / 2.0 + reach) / hy if hy > 0 else 0.0
            rho_max = xn * xn + yn * yn
            k1, k2 = spec.coeffs[r, c]
            norm = max(
                _max_abs_poly(k1, k2, rho_max),
                _max_abs_poly(3.0 * k1, 5.0 * k2, rho_max),
            )
            aspect = max(hx / hy, hy / hx) if hx > 0 and hy > 0 else 1.0
            best = max(best, norm * aspect)
    return best


def strip_slope_bound(spec: GridDistortionSpec) -> float:
    """``max ||D_a - D_b|| / strip_width`` over every strip, by direct scan.

    ``D_a`` and ``D_b`` are the displacements of two neighboring lenses,
    evaluated on the strip between them widened by one pixel each side.
    """
    layout = spec.layout
    if layout.rows == 1 and layout.cols == 1:
        return 0.0
    if spec.strip_width == 0:
        return float("inf")
    cx, hx = _patch_frames(layout.col_starts, layout.col_widths)
    cy, hy = _patch_frames(layout.row_starts, layout.row_heights)
    reach = spec.strip_width / 2.0 + 1.0
    best = 0.0

    def span(starts, lengths, j):
        lo = max(0, int(np.floor(starts[j] - reach)))
        hi = min(sum(lengths), int(np.ceil(starts[j] + lengths[j] + reach)))
        return np.arange(lo, hi, dtype=np.float64)

    def strip_pixels(starts, lengths, j):
        edge = starts[j] - 0.5
        lo = max(0, int(np.floor(edge - reach)))
        hi = min(sum(lengths), int(np.ceil(edge + reach)) + 1)
        return np.arange(lo, hi, dtype=np.float64)

    def lens(r, c, xs, ys):
        k1, k2 = spec.coeffs[r, c]
        return radial_displacement(xs, ys, cx[c], cy[r], hx[c], hy[r], k1, k2)

    for r in range(layout.rows):
        ys = span(layout.row_starts, layout.row_heights, r)[:, None]
        for c in range(1, layout.cols):
            xs = strip_pixels(layout.col_starts, layout.col_widths, c)[None, :]
            ax, ay = lens(r, c - 1, xs, ys)
            bx, by = lens(r, c, xs, ys)
            best = max(best, float(np.max(np.hypot(ax - bx, ay - by))))
    for c in range(layout.cols):
        xs = span(layout.col_starts, layout.col_widths, c)[None, :]
        for r in range(1, layout.rows):
            ys = strip_pixels(layout.row_starts, layout.row_heights, r)[:, None]
            ax, ay = lens(r - 1, c, xs, ys)
            bx, by = lens(r, c, xs, ys)
            best = max(best, float(np.max(np.hypot(ax - bx, ay - by))))
    return best / spec.strip_width


def continuity_bound(spec: GridDistortionSpec) -> float:
    """Analytic ceiling for :func:`field_continuity_report` of ``spec``."""
    return jacobian_bound(spec) + strip_slope_bound(spec)
