from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chi2_cdf, gaussian_square_cf_modulus, noncentral_chi2_cdf
from qfclt import (build_covariance, build_quadratic_form, cdf_gaussian_qf,
                   cdf_gaussian_qf_grid, cf_gaussian_qf, cf_modulus,
                   identity_covariance, identity_form, make_spectral,
                   prawitz_invert)
from qfclt.errors import ValidationError

CHI5_MEDIAN = 4.351460191095529  # chi2(5).ppf(0.5), frozen from scipy


@pytest.fixture
def chi5_spec(eye5, cov5):
    return make_spectral(eye5, cov5)


class TestCharacteristicFunction:
    def test_value_at_zero(self, chi5_spec):
        assert cf_gaussian_qf(0.0, chi5_spec) == 1.0 + 0.0j

    def test_modulus_against_quadrature_oracle(self):
        # d=1, lam=1, mu=0 at t=0.5: |cf| = (1+4t^2)^(-1/4) = 2^(-1/4)
        spec = make_spectral(identity_form(1), identity_covariance(1))
        value = abs(cf_gaussian_qf(0.5, spec))
        oracle = gaussian_square_cf_modulus(0.5)
        assert abs(value - oracle) <= 1e-9
        assert abs(value - 2.0 ** -0.25) <= 1e-12

    def test_indefinite_balanced_form_has_real_cf(self):
        spec = make_spectral(build_quadratic_form(np.diag([1.0, -1.0])),
                             identity_covariance(2))
        ts = np.linspace(-8.0, 8.0, 41)
        assert np.max(np.abs(cf_gaussian_qf(ts, spec).imag)) <= 1e-14

    def test_conjugate_symmetry(self, stream, chi5_spec):
        ts = stream("cf-sym").uniform(-50.0, 50.0, size=100)
        vals = cf_gaussian_qf(ts, chi5_spec)
        mirror = cf_gaussian_qf(-ts, chi5_spec)
        assert np.max(np.abs(mirror - np.conj(vals))) <= 1e-14

    def test_modulus_formula_and_bound(self, stream):
        rng = stream("cf-mod")
        a = rng.normal(size=(4, 4))
        form = build_quadratic_form(a + a.T)
        cov = build_covariance(np.diag(rng.uniform(0.5, 2.0, size=4)))
        spec = make_spectral(form, cov, shift=rng.normal(size=4))
        ts = rng.uniform(-20.0, 20.0, size=100)
        vals = np.abs(cf_gaussian_qf(ts, spec))
        assert np.all(vals <= 1.0 + 1e-12)
        assert np.max(np.abs(vals - cf_modulus(ts, spec))) <= 1e-12
        envelope = np.prod((1.0 + 4.0 * ts[:, None] ** 2
                            * spec.eigenvalues ** 2) ** -0.25, axis=1)
        assert np.all(vals <= envelope + 1e-12)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=30, deadline=None)
    def test_cf_properties_random_spectra(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 6))
        form_m = rng.normal(size=(d, d))
        form = build_quadratic_form(form_m + form_m.T + np.eye(d) * 2.0 * d)
        cov_m = rng.normal(size=(d, d))
        cov = build_covariance(cov_m @ cov_m.T + np.eye(d))
        spec = make_spectral(form, cov, shift=rng.normal(size=d))
        ts = rng.uniform(-30.0, 30.0, size=16)
        vals = cf_gaussian_qf(ts, spec)
        assert np.all(np.abs(vals) <= 1.0 + 1e-12)
        assert np.max(np.abs(cf_gaussian_qf(-ts, spec) - np.conj(vals))) <= 1e-13


class TestPrawitzInvert:
    def test_point_mass_limits(self):
        def unit_cf(t):
            return np.ones_like(np.asarray(t, dtype=float), dtype=complex)
        hi = prawitz_invert(unit_cf, K=2000.0, x=1.0)
        lo = prawitz_invert(unit_cf, K=2000.0, x=-1.0)
        assert abs(hi.value - 1.0) <= 2e-3
        assert abs(lo.value - 0.0) <= 2e-3

    def test_chi5_at_5_matches_incomplete_gamma(self, chi5_spec):
        res = prawitz_invert(lambda t: cf_gaussian_qf(t, chi5_spec), K=512.0, x=5.0)
        oracle = float(chi2_cdf(5.0, 5))
        assert abs(res.value - oracle) <= res.remainder_bound + res.quadrature.estimated_error

    def test_chi5_median_is_half(self, chi5_spec):
        res = prawitz_invert(lambda t: cf_gaussian_qf(t, chi5_spec),
                             K=512.0, x=CHI5_MEDIAN)
        assert abs(res.value - 0.5) <= res.remainder_bound + res.quadrature.estimated_error

    def test_clamping_is_presentation_only(self, chi5_spec):
        res = prawitz_invert(lambda t: cf_gaussian_qf(t, chi5_spec), K=512.0, x=-3.0)
        assert 0.0 <= res.clamped_value <= 1.0
        assert res.remainder_bound >= 0.0

    def test_rejects_bad_cutoff(self):
        with pytest.raises(ValidationError):
            prawitz_invert(lambda t: np.ones_like(t, dtype=complex), K=0.0, x=1.0)

    def test_reports_non_convergence(self):
        from qfclt.errors import QuadratureError

        def wild(t):
            return np.exp(250j * np.asarray(t) ** 2)

        with pytest.raises(QuadratureError):
            prawitz_invert(wild, K=40.0, x=0.0, quad_tol=1e-14, max_refine=0)


class TestCdf:
    def test_nonnegative_form_vanishes_at_zero(self, eye5, cov5):
        res = cdf_gaussian_qf(0.0, eye5, cov5, tol=1e-4)
        assert abs(res.value) <= res.error_bound + 1e-4

    def test_balanced_form_half_at_zero(self):
        form = build_quadratic_form(np.diag([1.0, -1.0]))
        res = cdf_gaussian_qf(0.0, form, identity_covariance(2), tol=1e-4)
        assert abs(res.value - 0.5) <= res.error_bound

    def test_one_dimensional_chi_square(self):
        res = cdf_gaussian_qf(1.0, identity_form(1), identity_covariance(1), tol=5e-3)
        assert abs(res.value - 0.6826894921) <= res.error_bound
        assert abs(res.value - 0.6826894921) <= 6e-3

    def test_monotone_and_limits(self, eye5, cov5):
        xs = np.linspace(0.0, 26.0, 27)
        res = cdf_gaussian_qf_grid(xs, eye5, cov5, tol=1e-4)
        vals = np.array([r.value for r in res])
        assert np.all(np.diff(vals) >= -2e-4)
        # beyond the 99.99% envelope of the chi-square(5) law
        tail = cdf_gaussian_qf(30.0, eye5, cov5, tol=1e-4)
        assert tail.value >= 0.9995
        assert res[0].value <= 2e-4

    def test_noncentral_case_matches_series_oracle(self, eye5, cov5):
        shift = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
        xs = np.array([2.0, 5.0, 9.0, 14.0])
        res = cdf_gaussian_qf_grid(xs, eye5, cov5, shift=shift, tol=1e-4)
        for x, r in zip(xs, res):
            assert abs(r.value - noncentral_chi2_cdf(float(x), 5, 1.0)) <= 1e-3


def test_spectral_reduction_invariants(stream):
    rng = stream("spectral")
    a = rng.normal(size=(6, 6))
    form = build_quadratic_form(a + a.T)
    c = rng.normal(size=(6, 6))
    cov = build_covariance(c @ c.T + 2.0 * np.eye(6))
    spec = make_spectral(form, cov)
    trace = float(np.trace(form.entries @ cov.entries))
    assert abs(np.sum(spec.eigenvalues) - trace) <= 1e-10 * max(1.0, abs(trace))
    assert np.all(spec.offsets == 0.0)
    shifted = make_spectral(form, cov, shift=rng.normal(size=6))
    assert np.any(shifted.offsets != 0.0)
