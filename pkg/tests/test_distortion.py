import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paneshift.distortion import (
    DisplacementField,
    DistortionCoefficients,
    RandomStream,
    SigmaRangeError,
    build_global_field,
    mean_pixel_shift,
    sample_global_coeffs,
    sample_grid_coeffs,
    undistort_point,
)

coords = st.floats(-2, 2, allow_nan=False)
coefs = st.floats(-1, 1, allow_nan=False)


def exact_undistort(x, y, k1, k2):
    """Rational evaluation of x * (1 + k1 r^2 + k2 r^4)."""
    x, y, k1, k2 = map(Fraction, (x, y, k1, k2))
    r2 = x * x + y * y
    f = 1 + k1 * r2 + k2 * r2 * r2
    return float(x * f), float(y * f)


def test_center_is_fixed():
    assert undistort_point(0.0, 0.0, DistortionCoefficients(0.3, -0.2)) == (0.0, 0.0)


@pytest.mark.parametrize(
    "point, coeffs, expected",
    [
        ((0.5, 0.0), (0.1, 0.0), (0.5125, 0.0)),
        ((1.0, 1.0), (0.4, 0.4), (3.4, 3.4)),
    ],
)
def test_hand_values(point, coeffs, expected):
    got = undistort_point(*point, DistortionCoefficients(*coeffs))
    assert got == pytest.approx(expected, abs=1e-15)


@given(coords, coords, coefs, coefs)
def test_matches_rational_evaluation(x, y, k1, k2):
    got = undistort_point(x, y, DistortionCoefficients(k1, k2))
    want = exact_undistort(x, y, k1, k2)
    assert got == pytest.approx(want, rel=1e-13, abs=1e-13)


@given(coords, coords, st.floats(0.001, 1), st.floats(0, 1))
def test_barrel_pushes_outward(x, y, k1, k2):
    ux, uy = undistort_point(x, y, DistortionCoefficients(k1, k2))
    assert math.hypot(ux, uy) >= math.hypot(x, y) * (1 - 1e-15)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, -0.001))
def test_pincushion_pulls_inward_inside_unit_circle(x, y, k1):
    if x * x + y * y > 1:
        x, y = x / 2, y / 2
    ux, uy = undistort_point(x, y, DistortionCoefficients(k1, 0.0))
    assert math.hypot(ux, uy) <= math.hypot(x, y) * (1 + 1e-15)


def test_commutes_with_dihedral_symmetries():
    c = DistortionCoefficients(0.23, -0.11)
    rng = np.random.default_rng(3)
    symmetries = [
        lambda x, y: (x, y),
        lambda x, y: (-y, x),
        lambda x, y: (-x, -y),
        lambda x, y: (y, -x),
        lambda x, y: (x, -y),
        lambda x, y: (-x, y),
        lambda x, y: (y, x),
        lambda x, y: (-y, -x),
    ]
    for x, y in rng.uniform(-1, 1, size=(50, 2)):
        for g in symmetries:
            assert undistort_point(*g(x, y), c) == pytest.approx(g(*undistort_point(x, y, c)), abs=1e-15)


def test_identity_field_is_exact():
    field = build_global_field(4, 4, DistortionCoefficients(0.0, 0.0))
    ys, xs = np.mgrid[0:4, 0:4]
    assert np.array_equal(field.source_x, xs) and np.array_equal(field.source_y, ys)
    assert build_global_field(37, 23, DistortionCoefficients(0.0, 0.0)).equals(DisplacementField.identity(37, 23))


def test_corner_pixels_normalize_to_unit():
    # corner source = corner * f(r^2 = 2) about the center
    c = DistortionCoefficients(0.1, 0.05)
    field = build_global_field(11, 7, c)
    f = 1 + 0.1 * 2 + 0.05 * 4
    assert field.source_x[0, 0] == pytest.approx(5 - 5 * f)
    assert field.source_y[0, 0] == pytest.approx(3 - 3 * f)
    assert field.source_x[-1, -1] == pytest.approx(5 + 5 * f)


def test_barrel_field_moves_corners_outward():
    field = build_global_field(101, 101, DistortionCoefficients(0.1, 0.0))
    assert field.source_x[50, 50] == 50 and field.source_y[50, 50] == 50
    for y, x in [(0, 0), (0, 100), (100, 0), (100, 100)]:
        assert math.hypot(field.source_x[y, x] - 50, field.source_y[y, x] - 50) > math.hypot(x - 50, y - 50)

    field = build_global_field(100, 100, DistortionCoefficients(0.1, 0.0))
    c = 49.5
    assert math.hypot(field.source_x[0, 0] - c, field.source_y[0, 0] - c) > math.hypot(c, c)


def test_pincushion_field_moves_corners_inward():
    field = build_global_field(100, 100, DistortionCoefficients(-0.1, 0.0))
    c = 49.5
    assert math.hypot(field.source_x[0, 0] - c, field.source_y[0, 0] - c) < math.hypot(c, c)


def test_field_matches_point_map():
    c = DistortionCoefficients(0.2, 0.1)
    w, h = 9, 6
    field = build_global_field(w, h, c)
    for y in range(h):
        for x in range(w):
            xn, yn = (x - 4) / 4, (y - 2.5) / 2.5
            ux, uy = undistort_point(xn, yn, c)
            assert field.source_x[y, x] == pytest.approx(ux * 4 + 4, abs=1e-12)
            assert field.source_y[y, x] == pytest.approx(uy * 2.5 + 2.5, abs=1e-12)


def test_rejects_empty_image():
    with pytest.raises(ValueError):
        build_global_field(0, 5, DistortionCoefficients(0, 0))


def test_zero_sigma_gives_zero_coefficients():
    assert sample_global_coeffs(0.0, RandomStream(1)) == (0.0, 0.0)
    assert sample_grid_coeffs(0.0, RandomStream(1)) == (0.0, 0.0)


def test_sampling_bounds_at_boundary_sigma():
    for seed in range(100_000):
        k1, k2 = sample_global_coeffs(0.4, RandomStream(seed))
        assert -0.2 <= k1 <= 0.4 and 0.0 <= k2 <= 0.4
    for seed in range(100_000):
        k1, k2 = sample_grid_coeffs(0.5, RandomStream(seed))
        assert -0.5 <= k1 <= 0.5 and -0.5 <= k2 <= 0.5


def test_sampling_is_deterministic_and_ordered():
    assert sample_global_coeffs(0.3, RandomStream(42)) == sample_global_coeffs(0.3, RandomStream(42))
    rng = RandomStream(42)
    u1 = rng.uniform(0.0, 1.0)
    u2 = rng.uniform(0.0, 1.0)
    assert sample_grid_coeffs(0.5, RandomStream(42)) == pytest.approx((-0.5 + u1, -0.5 + u2), abs=1e-15)


def test_sampling_covers_the_interval():
    k1s, k2s = zip(*(sample_global_coeffs(0.4, RandomStream(s)) for s in range(2000)))
    assert min(k1s) < -0.19 and max(k1s) > 0.39
    assert min(k2s) < 0.01 and max(k2s) > 0.39
    assert np.mean(k1s) == pytest.approx(0.1, abs=0.01)


def test_distinct_seeds_distinct_pairs():
    pairs = {sample_grid_coeffs(0.5, RandomStream(s)) for s in range(1000)}
    assert len(pairs) == 1000


@pytest.mark.parametrize("sigma, sampler", [(0.41, sample_global_coeffs), (-0.1, sample_global_coeffs), (0.51, sample_grid_coeffs)])
def test_sigma_out_of_range(sigma, sampler):
    with pytest.raises(SigmaRangeError):
        sampler(sigma, RandomStream(0))


def test_spawned_streams_are_reproducible():
    a = [s.uniform(0, 1) for s in RandomStream(9).spawn(3)]
    b = [s.uniform(0, 1) for s in RandomStream(9).spawn(3)]
    assert a == b and len(set(a)) == 3


def test_mean_pixel_shift_constant_shift():
    assert mean_pixel_shift(DisplacementField.identity(8, 5)) == 0.0
    ys, xs = np.mgrid[0:5, 0:8].astype(float)
    assert mean_pixel_shift(DisplacementField(xs + 3, ys + 4)) == 5.0


def test_mean_pixel_shift_brute_force():
    field = build_global_field(13, 9, DistortionCoefficients(0.3, 0.2))
    total = 0.0
    for y in range(9):
        for x in range(13):
            total += math.hypot(field.source_x[y, x] - x, field.source_y[y, x] - y)
    assert mean_pixel_shift(field) == pytest.approx(total / (13 * 9), rel=1e-12)


@settings(max_examples=30)
@given(st.integers(1, 40), st.integers(1, 40))
def test_field_is_finite_with_matching_shape(w, h):
    field = build_global_field(w, h, DistortionCoefficients(0.4, 0.4))
    assert field.shape == (h, w)
    assert np.all(np.isfinite(field.source_x)) and np.all(np.isfinite(field.source_y))
