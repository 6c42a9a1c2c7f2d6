"""Position reference: degree-7 polynomial and its flat-space transform."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from softland.reference import (build_reference, eval_reference,
                                flat_coeff_rows, to_flat_reference)

Z_MAX = 1.0e-3
Z_MIN = 0.0
T = 4.5e-3
RG0 = 3.88
KG = 7.67e3


@pytest.fixture(scope="module")
def ref():
    return build_reference(z_start=Z_MAX, z_end=Z_MIN, duration=T)


def test_requires_positive_duration():
    with pytest.raises(ValueError):
        build_reference(Z_MAX, Z_MIN, 0.0)


def test_endpoints(ref):
    assert eval_reference(ref, 0.0) == Z_MAX
    assert_allclose(eval_reference(ref, T), Z_MIN, atol=1.0e-18)


def test_midpoint_is_half_stroke(ref):
    # 35/16 - 84/32 + 70/64 - 20/128 = 1/2
    assert_allclose(eval_reference(ref, T / 2), (Z_MAX + Z_MIN) / 2,
                    rtol=1.0e-12)


def test_endpoint_derivatives_vanish(ref):
    t = np.linspace(0.0, T, 501)
    for order in (1, 2, 3):
        scale = np.max(np.abs(eval_reference(ref, t, order)))
        assert eval_reference(ref, 0.0, order) == 0.0
        assert_allclose(eval_reference(ref, T, order), 0.0,
                        atol=1.0e-12 * scale)


def test_monotone_nonincreasing(ref):
    t = np.linspace(0.0, T, 2001)
    z = eval_reference(ref, t)
    assert np.all(np.diff(z) <= 1.0e-18)


def test_peak_speed(ref):
    # |dz/dt| peaks at midstroke: 140*(1/2)^6 * stroke/T = 35/16*stroke/T
    t = np.linspace(0.0, T, 20001)
    peak = np.max(np.abs(eval_reference(ref, t, 1)))
    assert_allclose(peak, 35.0 / 16.0 * (Z_MAX - Z_MIN) / T, rtol=1.0e-9)
    assert_allclose(peak, 0.4861111111111112, rtol=1.0e-9)


def test_coefficients_match_boundary_value_solve(ref):
    """Independent oracle: solve the 8 endpoint conditions directly.

    Rows impose value/velocity/acceleration/jerk at s = 0 and s = 1 on
    the monomial basis; the solution must equal the closed-form shape.
    """
    A = np.zeros((8, 8))
    b = np.zeros(8)
    powers = np.arange(8)

    def falling(j, d):
        c = 1.0
        for q in range(d):
            c *= (j - q)
        return c

    # rows 0..3: derivative d at s=0 only touches the monomial j=d
    for d in range(4):
        A[d, d] = falling(d, d)
    # rows 4..7: derivative d at s=1 touches all monomials j >= d
    for d in range(4):
        for j in range(d, 8):
            A[4 + d, j] = falling(j, d)
    b[4] = 1.0                          # shape(1) = 1, derivatives vanish
    coeffs = np.linalg.solve(A, b)
    assert_allclose(coeffs, [0, 0, 0, 0, 35, -84, 70, -20],
                    rtol=1.0e-9, atol=1.0e-9)
    # and the trajectory object folds them with the stroke
    t = np.linspace(0.0, T, 11)
    s = t / T
    z_oracle = Z_MAX + (Z_MIN - Z_MAX) * (s ** powers[None].T * coeffs[:, None]).sum(0)
    assert_allclose(eval_reference(ref, t), z_oracle, rtol=1.0e-12,
                    atol=1.0e-15)


def test_derivatives_match_finite_differences(ref):
    h = 1.0e-7 * T
    t = np.linspace(5 * h, T - 5 * h, 97)
    for order in (1, 2, 3):
        lo = eval_reference(ref, t - h, order - 1)
        hi = eval_reference(ref, t + h, order - 1)
        fd = (hi - lo) / (2.0 * h)
        exact = eval_reference(ref, t, order)
        scale = np.max(np.abs(exact))
        assert_allclose(exact, fd, rtol=0, atol=1.0e-6 * scale)


def test_clamped_outside_window(ref):
    assert eval_reference(ref, -1.0e-3) == Z_MAX
    assert_allclose(eval_reference(ref, T + 1.0e-3), Z_MIN, atol=1.0e-15)
    # held value is constant however far beyond the window we look
    assert eval_reference(ref, T + 1.0e-3) == eval_reference(ref, 10.0)
    for order in (1, 2, 3):
        assert eval_reference(ref, -1.0e-3, order) == 0.0
        assert eval_reference(ref, T + 1.0e-3, order) == 0.0


def test_scalar_in_scalar_out(ref):
    out = eval_reference(ref, 1.0e-3)
    assert isinstance(out, float)
    arr = eval_reference(ref, np.array([0.0, T]))
    assert arr.shape == (2,)


def test_flat_transform_values(ref):
    assert_allclose(to_flat_reference(ref, 0.0, RG0, KG),
                    RG0 + KG * Z_MAX, rtol=1.0e-14)
    t = np.linspace(0.0, T, 13)
    for order in (1, 2, 3):
        assert_allclose(to_flat_reference(ref, t, RG0, KG, order),
                        KG * eval_reference(ref, t, order), rtol=1.0e-13)
    # inverse affine map recovers the position exactly
    y1 = to_flat_reference(ref, t, RG0, KG)
    assert_allclose((y1 - RG0) / KG, eval_reference(ref, t), rtol=1.0e-12,
                    atol=1.0e-16)


def test_flat_coeff_rows_consistent_with_eval(ref):
    """The packed coefficient rows reproduce the flat reference."""
    rows = flat_coeff_rows(ref, RG0, KG)
    assert rows.shape == (4, 8)
    t = np.linspace(0.0, T, 7)
    s = t / T
    for order in range(4):
        horner = np.zeros_like(s)
        for c in rows[order][::-1]:
            horner = horner * s + c
        want = to_flat_reference(ref, t, RG0, KG, order)
        scale = np.max(np.abs(want))
        assert_allclose(horner, want, rtol=1.0e-11, atol=1.0e-12 * scale)


def test_reversed_stroke_supported():
    r = build_reference(z_start=0.0, z_end=2.0e-3, duration=1.0e-3)
    assert eval_reference(r, 0.0) == 0.0
    assert_allclose(eval_reference(r, 1.0e-3), 2.0e-3, rtol=1.0e-12)
    t = np.linspace(0.0, 1.0e-3, 101)
    assert np.all(np.diff(eval_reference(r, t)) >= -1.0e-18)
