from __future__ import annotations

import numpy as np
import pytest

from qfclt import build_covariance, identity_covariance
from qfclt.edgeworth import (CubicPolynomial, cross_validate_edgeworth,
                             edgeworth_fourier, edgeworth_fourier_exact,
                             edgeworth_measure, make_edgeworth_spec,
                             third_derivative_cubic)
from qfclt.model import SourceDistribution


@pytest.fixture
def skewed_spec(skewed5, eye5):
    cov = build_covariance(skewed5.covariance)
    shift = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    return make_edgeworth_spec(eye5, cov, skewed5, shift, 100)


class TestCubicPolynomial:
    def test_tensor_contraction_matches_direct_formula(self, stream):
        rng = stream("cubic")
        c = rng.normal(size=(4, 4))
        cov = build_covariance(c @ c.T + 2.0 * np.eye(4))
        inv = cov.inv_half_power @ cov.inv_half_power
        for _ in range(100):
            u = rng.normal(size=4)
            y = rng.normal(size=4)
            poly = CubicPolynomial(inv_cov=inv,
                                   linear_vec=float(u @ inv @ u) * u,
                                   tensor=np.einsum("i,j,k->ijk", u, u, u))
            direct = third_derivative_cubic(cov, y, u)
            assert abs(poly.evaluate(y)[0] - direct) <= 1e-10 * max(1.0, abs(direct))

    def test_symmetric_law_has_vanishing_cubic(self, rademacher5, eye5, stream):
        cov = identity_covariance(5)
        spec = make_edgeworth_spec(eye5, cov, rademacher5,
                                   np.array([1.0, 0, 0, 0, 0]), 64)
        assert np.max(np.abs(spec.cubic.linear_vec)) <= 1e-12
        assert np.max(np.abs(spec.cubic.tensor)) <= 1e-12
        ys = stream("cubic-sym").normal(size=(50, 5))
        assert np.max(np.abs(spec.cubic.evaluate(ys))) <= 1e-12


class TestFourierForm:
    def test_zero_at_t_zero(self, skewed_spec, stream):
        est = edgeworth_fourier(np.array([0.0]), skewed_spec, 1000, stream("f0"))
        assert est.values[0] == 0.0

    def test_symmetric_law_gives_exact_zero(self, rademacher5, eye5, stream):
        spec = make_edgeworth_spec(eye5, identity_covariance(5), rademacher5,
                                   np.array([1.0, 0, 0, 0, 0]), 64)
        ts = np.linspace(0.1, 4.0, 20)
        est = edgeworth_fourier(ts, spec, 2000, stream("f-sym"))
        # inner atom sums cancel exactly, so the MC average is exactly zero
        assert np.max(np.abs(est.values)) <= 3.0 * np.max(est.se_real + est.se_imag) + 1e-15
        assert np.max(np.abs(est.values)) <= 1e-14

    def test_zero_shift_short_circuits(self, skewed5, eye5, stream):
        cov = build_covariance(skewed5.covariance)
        spec = make_edgeworth_spec(eye5, cov, skewed5, np.zeros(5), 64)
        est = edgeworth_fourier(np.array([0.7, 1.3]), spec, 100, stream("f-a0"))
        assert np.all(est.values == 0.0)
        assert np.all(edgeworth_fourier_exact(np.array([0.7, 1.3]), spec) == 0.0)

    def test_reproducible_across_seeds(self, skewed_spec, stream):
        ts = np.array([0.3])
        one = edgeworth_fourier(ts, skewed_spec, 60_000, stream("f-seed", 0))
        two = edgeworth_fourier(ts, skewed_spec, 60_000, stream("f-seed", 1))
        gap = abs(one.values[0] - two.values[0])
        combined = 3.0 * (one.se_real[0] + one.se_imag[0]
                          + two.se_real[0] + two.se_imag[0])
        assert gap <= combined

    def test_mc_matches_closed_form(self, skewed_spec, stream):
        ts = np.array([0.4, 1.2, 2.5])
        mc = edgeworth_fourier(ts, skewed_spec, 1 << 16, stream("f-exact"))
        exact = edgeworth_fourier_exact(ts, skewed_spec)
        gap = np.abs(mc.values - exact)
        assert np.all(gap <= 3.0 * (mc.se_real + mc.se_imag))


class TestMeasureForm:
    def test_zero_shift_exact_zero(self, skewed5, eye5, stream):
        cov = build_covariance(skewed5.covariance)
        spec = make_edgeworth_spec(eye5, cov, skewed5, np.zeros(5), 64)
        est = edgeworth_measure(np.linspace(0.0, 10.0, 7), spec, 100, stream("m-a0"))
        assert np.all(est.values == 0.0)
        assert np.all(est.std_errors == 0.0)

    def test_symmetric_law_exact_zero(self, rademacher5, eye5, stream):
        spec = make_edgeworth_spec(eye5, identity_covariance(5), rademacher5,
                                   np.array([1.0, 0, 0, 0, 0]), 64)
        est = edgeworth_measure(np.linspace(0.0, 10.0, 7), spec, 5000, stream("m-sym"))
        assert np.max(np.abs(est.values)) <= 3.0 * np.max(est.std_errors) + 1e-15
        assert np.max(np.abs(est.values)) <= 1e-14

    def test_far_limits_vanish(self, skewed_spec, stream):
        est = edgeworth_measure(np.array([-5.0, 400.0]), skewed_spec,
                                200_000, stream("m-limits"))
        assert est.values[0] == 0.0
        # at +infinity the value is E m3(G)/(6 sqrt(N)), which is 0: the
        # linear part has mean zero and the cubic part is odd under G -> -G
        assert abs(est.values[1]) <= 3.0 * est.std_errors[1]

    def test_scales_as_inverse_sqrt_n(self, skewed5, eye5, stream):
        cov = build_covariance(skewed5.covariance)
        shift = np.array([1.0, 0, 0, 0, 0])
        xs = np.array([2.0, 6.0])
        small = edgeworth_measure(xs, make_edgeworth_spec(eye5, cov, skewed5, shift, 50),
                                  20_000, stream("m-scale"))
        large = edgeworth_measure(xs, make_edgeworth_spec(eye5, cov, skewed5, shift, 200),
                                  20_000, stream("m-scale"))
        ratio = small.values / large.values
        assert np.max(np.abs(ratio - 2.0)) <= 1e-10

    def test_signed_parts_monotone(self, skewed_spec, stream):
        xs = np.linspace(0.0, 16.0, 17)
        est = edgeworth_measure(xs, skewed_spec, 30_000, stream("m-mono"))
        assert np.all(np.diff(est.positive_part) >= -1e-15)
        assert np.all(np.diff(est.negative_part) <= 1e-15)
        assert est.tv_proxy >= 0.0


class TestCrossValidation:
    def test_symmetric_law_trivial(self, rademacher5, eye5, stream):
        spec = make_edgeworth_spec(eye5, identity_covariance(5), rademacher5,
                                   np.array([1.0, 0, 0, 0, 0]), 64)
        cross = cross_validate_edgeworth(spec, np.linspace(1.0, 9.0, 5),
                                         measure_draws=5000,
                                         measure_stream=stream("cv-sym", 0),
                                         fourier_stream=stream("cv-sym", 1))
        assert cross.max_discrepancy <= np.max(cross.budget) + 1e-15

    def test_zero_shift_trivial(self, skewed5, eye5, stream):
        cov = build_covariance(skewed5.covariance)
        spec = make_edgeworth_spec(eye5, cov, skewed5, np.zeros(5), 64)
        cross = cross_validate_edgeworth(spec, np.linspace(1.0, 9.0, 5),
                                         measure_draws=1000,
                                         measure_stream=stream("cv-a0", 0),
                                         fourier_stream=stream("cv-a0", 1))
        assert cross.max_discrepancy == 0.0

    def test_skewed_instance_within_budget(self, skewed_spec, stream):
        cross = cross_validate_edgeworth(skewed_spec, np.linspace(1.0, 12.0, 10),
                                         measure_draws=1 << 16,
                                         measure_stream=stream("cv", 0),
                                         fourier_stream=stream("cv", 1))
        assert cross.within_budget
        assert cross.mc_check_gap <= 1.0
        assert np.all(cross.budget <= 2e-3)
