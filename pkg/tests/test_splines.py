"""Tests for the rational-quadratic spline transform."""
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trajflow.errors import InvalidInputError
from trajflow.splines import (
    SplineParams,
    build_spline_params,
    knots_from_raw,
    rqs_forward,
    rqs_inverse,
    rqs_transform,
)

K = 8
B = 15.0


def identity_params(k_bins=K, support_b=B) -> SplineParams:
    knots = np.linspace(-support_b, support_b, k_bins + 1)
    return SplineParams(knots, knots.copy(), np.ones(k_bins + 1), support_b)


def random_params(rng, k_bins=K, support_b=B, scale=3.0) -> SplineParams:
    raw = rng.normal(0.0, scale, size=3 * k_bins - 1)
    return build_spline_params(raw, k_bins, support_b)


raw_vectors = arrays(
    np.float64, 3 * K - 1, elements=st.floats(-8.0, 8.0, allow_nan=False)
)


class TestBuildSplineParams:
    def test_equal_width_logits_give_uniform_knots(self):
        raw = np.full(3 * K - 1, 0.7)
        p = build_spline_params(raw, K, B)
        np.testing.assert_allclose(p.knot_x, np.linspace(-B, B, K + 1), atol=1e-12)

    def test_paper_configuration_shape(self):
        raw = np.arange(3 * K - 1, dtype=float)
        p = build_spline_params(raw, k_bins=8, support_b=15.0)
        assert len(p.knot_x) == 9
        assert p.knot_x[0] == -15.0
        assert p.knot_x[8] == 15.0

    def test_arbitrary_raw_monotone_and_widths_sum(self, rng):
        raw = rng.normal(0, 4, size=3 * K - 1)
        p = build_spline_params(raw, K, B)
        assert np.all(np.diff(p.knot_x) > 0)
        assert np.all(np.diff(p.knot_y) > 0)
        assert abs(np.diff(p.knot_x).sum() - 2 * B) < 1e-8

    def test_boundary_derivatives_are_one(self, rng):
        p = random_params(rng)
        assert p.derivs[0] == 1.0
        assert p.derivs[-1] == 1.0
        assert np.all(p.derivs > 0)

    def test_zero_raw_derivative_maps_to_unit_slope(self):
        p = build_spline_params(np.zeros(3 * K - 1), K, B)
        np.testing.assert_allclose(p.derivs, 1.0, atol=1e-12)

    def test_non_finite_raw_rejected(self):
        raw = np.zeros(3 * K - 1)
        raw[4] = np.nan
        with pytest.raises(InvalidInputError):
            build_spline_params(raw, K, B)
        raw[4] = np.inf
        with pytest.raises(InvalidInputError):
            build_spline_params(raw, K, B)

    def test_wrong_length_rejected(self):
        with pytest.raises(InvalidInputError):
            build_spline_params(np.zeros(3 * K), K, B)

    @given(raw=raw_vectors)
    @settings(max_examples=50, deadline=None)
    def test_invariants_hold_for_any_raw(self, raw):
        p = build_spline_params(raw, K, B)
        p.validate()


class TestForward:
    def test_identity_spline_is_identity(self):
        p = identity_params()
        y, ld = rqs_forward(3.7, p)
        assert y == pytest.approx(3.7, abs=1e-14)
        assert ld == pytest.approx(0.0, abs=1e-14)

    def test_outside_support_is_identity(self, rng):
        p = random_params(rng)
        y, ld = rqs_forward(-20.0, p)
        assert y == -20.0
        assert ld == 0.0

    def test_log_deriv_matches_finite_differences(self, rng):
        # Logit scale 1 keeps bins non-degenerate so the central-difference
        # oracle itself is accurate to the stated tolerance.
        h = 1e-5
        for _ in range(50):
            p = random_params(rng, scale=1.0)
            x = rng.uniform(-B + 2 * h, B - 2 * h)
            _, ld = rqs_forward(x, p)
            fd = (rqs_forward(x + h, p)[0] - rqs_forward(x - h, p)[0]) / (2 * h)
            assert np.exp(ld) == pytest.approx(fd, rel=1e-6)

    def test_boundary_maps_to_boundary(self, rng):
        p = random_params(rng)
        assert rqs_forward(B, p)[0] == pytest.approx(B, abs=1e-12)
        assert rqs_forward(-B, p)[0] == pytest.approx(-B, abs=1e-12)

    def test_derivative_approaches_one_at_boundary(self, rng):
        p = random_params(rng)
        for x in (-B + 1e-9, B - 1e-9):
            _, ld = rqs_forward(x, p)
            assert ld == pytest.approx(0.0, abs=1e-6)

    def test_c1_at_interior_knots(self, rng):
        # Second-order one-sided stencils from either side of each knot.
        h = 1e-5
        p = random_params(rng, scale=1.0)

        def one_sided(x0, sign):
            f0 = rqs_forward(x0, p)[0]
            f1 = rqs_forward(x0 + sign * h, p)[0]
            f2 = rqs_forward(x0 + sign * 2 * h, p)[0]
            return sign * (-3 * f0 + 4 * f1 - f2) / (2 * h)

        for k in range(1, K):
            xk = p.knot_x[k]
            expected = p.derivs[k]
            assert one_sided(xk, +1) == pytest.approx(expected, rel=1e-5)
            assert one_sided(xk, -1) == pytest.approx(expected, rel=1e-5)

    @given(raw=raw_vectors, x=st.floats(-B, B), delta=st.floats(1e-6, 5.0))
    @settings(max_examples=50, deadline=None)
    def test_strictly_monotone(self, raw, x, delta):
        p = build_spline_params(raw, K, B)
        x2 = min(x + delta, B)
        if x2 <= x:
            return
        assert rqs_forward(x, p)[0] < rqs_forward(x2, p)[0]


class TestInverse:
    def test_identity_spline(self):
        p = identity_params()
        x, ld = rqs_inverse(-2.5, p)
        assert x == pytest.approx(-2.5, abs=1e-14)
        assert ld == pytest.approx(0.0, abs=1e-14)

    def test_outside_support_is_identity(self, rng):
        p = random_params(rng)
        assert rqs_inverse(17.5, p) == (17.5, 0.0)

    def test_round_trip_vectorized_1e5(self, rng):
        # Unit-scale logits: the round trip is then limited by rounding, not
        # by the conditioning of near-degenerate bins.
        n = 100_000
        raw = torch.as_tensor(rng.normal(0, 1, size=(n, 3 * K - 1)))
        kx, ky, d = knots_from_raw(raw, K, B)
        x = torch.as_tensor(rng.uniform(-B, B, size=n))
        y, ld_f = rqs_transform(x, kx, ky, d, B)
        x_rec, ld_i = rqs_transform(y, kx, ky, d, B, inverse=True)
        assert float((x - x_rec).abs().max()) < 1e-10
        assert float((ld_f + ld_i).abs().max()) < 1e-9

    def test_matches_bisection_oracle(self, rng):
        for _ in range(20):
            p = random_params(rng)
            y_target = rng.uniform(-B, B)

            lo, hi = -B, B
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if rqs_forward(mid, p)[0] < y_target:
                    lo = mid
                else:
                    hi = mid
            x_oracle = 0.5 * (lo + hi)

            x, _ = rqs_inverse(y_target, p)
            assert x == pytest.approx(x_oracle, abs=1e-8)

    def test_forward_inverse_log_derivs_negate(self, rng):
        for _ in range(30):
            p = random_params(rng)
            x = rng.uniform(-B, B)
            y, ld_f = rqs_forward(x, p)
            _, ld_i = rqs_inverse(y, p)
            assert ld_f + ld_i == pytest.approx(0.0, abs=1e-9)

    def test_invalid_params_rejected(self):
        non_monotone_y = SplineParams(
            np.array([-B, 1.0, B]), np.array([-B, -16.0, B]), np.ones(3), B
        )
        with pytest.raises(InvalidInputError):
            non_monotone_y.validate()
        bad_endpoint = SplineParams(
            np.array([-B, 1.0, B]), np.array([-B, 0.0, B + 1.0]), np.ones(3), B
        )
        with pytest.raises(InvalidInputError):
            rqs_forward(0.5, bad_endpoint)
        bad_boundary_slope = SplineParams(
            np.array([-B, 1.0, B]),
            np.array([-B, 0.0, B]),
            np.array([1.0, 2.0, 3.0]),
            B,
        )
        with pytest.raises(InvalidInputError):
            rqs_inverse(0.5, bad_boundary_slope)
