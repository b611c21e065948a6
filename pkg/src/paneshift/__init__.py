"""Transparency distortions for segmentation robustness benchmarks."""

__version__ = "0.1.0"

from .distortion import (  # noqa: E402
    DisplacementField,
    DistortionCoefficients,
    RandomStream,
    build_global_field,
    mean_pixel_shift,
    sample_global_coeffs,
    sample_grid_coeffs,
    undistort_point,
)
from .grid import (  # noqa: E402
    GridDistortionSpec,
    build_grid_field,
    build_grid_spec,
    continuity_bound,
    field_continuity_report,
    patch_layout,
)
from .warp import FillPolicy, LabeledPair, LabelMask, warp_image, warp_mask, warp_pair  # noqa: E402

__all__ = [
    "DisplacementField",
    "DistortionCoefficients",
    "FillPolicy",
    "GridDistortionSpec",
    "LabelMask",
    "LabeledPair",
    "RandomStream",
    "build_global_field",
    "build_grid_field",
    "build_grid_spec",
    "continuity_bound",
    "field_continuity_report",
    "mean_pixel_shift",
    "patch_layout",
    "sample_global_coeffs",
    "sample_grid_coeffs",
    "undistort_point",
    "warp_image",
    "warp_mask",
    "warp_pair",
]
