from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import chi2_cdf
from qfclt import (CapExceededError, SourceDistribution, ValidationError,
                   build_covariance, build_quadratic_form, identity_form)
from qfclt.empirics import (charfn_qf_exact, concentration, estimate_delta,
                            exact_cdf_product, kappa_probe, rate_fit, sample_sn,
                            truncate)
from qfclt.model import symmetrize


def chi5(xs):
    return chi2_cdf(xs, 5)


class TestTruncate:
    def test_bounded_law_keeps_everything(self, rademacher5):
        rep = truncate(rademacher5, n_samples=4)
        # every atom has whitened norm sqrt(5) <= sqrt(5*4)
        assert rep.pi_whitened(2.0) == 0.0
        assert rep.pi_sphere(2.0) == 0.0
        assert np.max(np.abs(rep.gauss_cov)) <= 1e-15
        assert np.max(np.abs(rep.mean_kept)) <= 1e-15

    def test_far_atom_lands_in_tail(self):
        p = 1e-3
        far = 3.0 * math.sqrt(5.0)
        # symmetric far pair on the first axis plus a small full-rank core
        core = np.vstack([np.eye(5), -np.eye(5)])
        atoms = np.vstack([far * np.eye(5)[:1], -far * np.eye(5)[:1], core])
        probs = np.concatenate([[p, p], np.full(10, (1.0 - 2.0 * p) / 10.0)])
        dist = SourceDistribution.finite_discrete(atoms, probs)
        # hand atom-sum oracle: with C != I the whitened norms rescale, so
        # compute the expected functional directly from the split definition
        rep = truncate(dist, n_samples=2)
        cov = dist.covariance_model
        watoms = cov.whiten(np.vstack([atoms[0], atoms[1]]))
        expected = (p * np.sum(watoms[0] ** 2) + p * np.sum(watoms[1] ** 2)) / 5.0
        assert np.linalg.norm(cov.whiten(atoms[0])) > math.sqrt(10.0)
        assert np.linalg.norm(cov.whiten(atoms[2])) <= math.sqrt(10.0)
        assert abs(rep.pi_whitened(2.0) - expected) <= 1e-12 * expected

    def test_covariance_decomposition_identity(self, stream):
        rng = stream("trunc-id")
        for i in range(5):
            atoms = rng.normal(size=(7, 4)) * rng.uniform(0.5, 4.0)
            dist = SourceDistribution.finite_discrete(
                atoms, rng.dirichlet(np.ones(7)))
            rep = truncate(dist, n_samples=2)
            cov = dist.covariance
            tail_atoms, tail_probs = rep.whitened_tail
            second_tail = (tail_atoms * tail_probs[:, None]).T @ tail_atoms
            for _ in range(20):
                x = rng.normal(size=4)
                lhs = x @ cov @ x
                rhs = (x @ rep.cov_kept @ x + x @ second_tail @ x
                       + float(rep.mean_kept @ x) ** 2)
                assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
            # make-up covariance is PSD with the whitened-trace bound
            cmodel = dist.covariance_model
            w = np.linalg.eigvalsh(rep.gauss_cov)
            assert w[0] >= -1e-10
            whitened_trace = float(np.trace(
                cmodel.inv_half_power @ rep.gauss_cov @ cmodel.inv_half_power))
            assert whitened_trace <= 2.0 * 4 * rep.pi_whitened(2.0) + 1e-10

    def test_disjoint_supports(self, stream):
        rng = stream("trunc-disjoint")
        atoms = np.vstack([rng.normal(size=(6, 3)), 40.0 * np.ones((1, 3))])
        dist = SourceDistribution.finite_discrete(atoms, rng.dirichlet(np.ones(7)))
        rep = truncate(dist, n_samples=1)
        kept_atoms, _ = rep.whitened_kept
        tail_atoms, _ = rep.whitened_tail
        norms_kept = np.linalg.norm(kept_atoms, axis=1)
        norms_tail = np.linalg.norm(tail_atoms, axis=1)
        # kept * tail vanishes pointwise: the only shared atom is 0
        assert np.min(norms_kept) == 0.0 or np.min(norms_tail) == 0.0

    def test_moment_chains(self, stream):
        rng = stream("trunc-chain")
        for i in range(6):
            atoms = rng.normal(size=(6, 3)) * rng.uniform(0.5, 6.0)
            dist = SourceDistribution.finite_discrete(atoms, rng.dirichlet(np.ones(6)))
            n = int(rng.integers(1, 5))
            rep = truncate(dist, n_samples=n)
            sigma_sq = dist.sigma_sq
            bound = dist.beta(4) / (sigma_sq ** 2 * n)
            low = rep.pi_sphere(2.0) + rep.lambda4_sphere
            mid = rep.pi_sphere(3.0) + rep.lambda4_sphere
            assert low <= mid + 1e-12
            assert mid <= bound + 1e-12 * bound
            # whitened chain at the fourth-moment end
            wdist = dist.linear_transform(dist.covariance_model.inv_half_power)
            wbound = wdist.beta(4) / (3 ** 2 * n)
            wmid = rep.pi_whitened(3.0) + rep.lambda4_whitened
            assert wmid <= wbound + 1e-10 * max(1.0, wbound)

    def test_whitened_split_matches_transformed_sphere_split(self, stream):
        # the sphere split of C^{-1/2} X coincides with C^{-1/2} times the
        # whitened split of X, atom by atom
        rng = stream("trunc-wh")
        atoms = rng.normal(size=(6, 3)) * 3.0
        dist = SourceDistribution.finite_discrete(atoms, rng.dirichlet(np.ones(6)))
        n = 2
        rep = truncate(dist, n_samples=n)
        inv_half = dist.covariance_model.inv_half_power
        wdist = dist.linear_transform(inv_half)
        wrep = truncate(wdist, n_samples=n)
        lhs = sorted(map(tuple, wrep.sphere_kept[0]))
        rhs = sorted(map(tuple, rep.whitened_kept[0] @ inv_half.T))
        assert np.allclose(np.array(lhs), np.array(rhs), atol=1e-12)


class TestSampleSn:
    def test_gaussian_stability_and_mean(self, eye5, cov5, stream):
        dist = SourceDistribution.gaussian(cov5)
        vals = sample_sn(dist, eye5, n_samples=64, reps=40_000, stream=stream("sn-g"))
        target = float(np.trace(eye5.entries @ cov5.entries))
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - target) <= 4.0 * se

    def test_single_summand_frequencies(self, stream):
        dist = SourceDistribution.finite_discrete(
            [[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]],
            [0.25, 0.25, 0.25, 0.25])
        form = identity_form(2)
        vals = sample_sn(dist, form, n_samples=1, reps=40_000, stream=stream("sn-1"))
        freq4 = np.mean(np.isclose(vals, 4.0))
        se = math.sqrt(0.5 * 0.5 / 40_000)
        assert abs(freq4 - 0.5) <= 4.0 * se

    def test_fixed_seed_bit_identical(self, rademacher5, eye5, stream):
        a = sample_sn(rademacher5, eye5, 16, 500, stream("sn-det"))
        b = sample_sn(rademacher5, eye5, 16, 500, stream("sn-det"))
        assert np.array_equal(a, b)


class TestExactTable:
    def test_single_summand_point_mass(self, rademacher5, eye5):
        table = exact_cdf_product(rademacher5, eye5, n_samples=1)
        assert len(table.keys) == 1
        assert table.values("sn")[0] == 5.0
        assert table.probs[0] == 1.0

    def test_two_summands_binomial(self, rademacher5, eye5):
        table = exact_cdf_product(rademacher5, eye5, n_samples=2)
        vals = table.values("sn")
        assert np.array_equal(vals, 2.0 * np.arange(6))
        assert np.allclose(table.probs, [math.comb(5, k) / 32.0 for k in range(6)])

    def test_mass_and_mc_cross_check(self, rademacher5, eye5, stream):
        table = exact_cdf_product(rademacher5, eye5, n_samples=8)
        assert abs(table.probs.sum() - 1.0) <= 1e-12
        draws = sample_sn(rademacher5, eye5, 8, 50_000, stream("tab-mc"))
        vals = table.values("sn")
        cdf = table.cdf
        for v, c in zip(vals[::4], cdf[::4]):
            emp = np.mean(draws <= v + 1e-12)
            se = math.sqrt(max(c * (1 - c), 1e-4) / 50_000)
            assert abs(emp - c) <= 4.0 * se

    def test_requires_diagonal_form_and_integer_support(self, rademacher5):
        tilted = build_quadratic_form(np.eye(5) + 0.1 * (np.ones((5, 5)) - np.eye(5)))
        with pytest.raises(ValidationError):
            exact_cdf_product(rademacher5, tilted, 4)
        frac = SourceDistribution.coordinate_product(
            [(np.array([-0.5, 0.5]), np.array([0.5, 0.5]))] * 2)
        with pytest.raises(ValidationError):
            exact_cdf_product(frac, identity_form(2), 4)

    def test_table_cap(self, rademacher5, eye5):
        with pytest.raises(CapExceededError):
            exact_cdf_product(rademacher5, eye5, n_samples=1024, table_cap=1000)


class TestDelta:
    def test_gaussian_source_is_the_limit(self, eye5, cov5, stream):
        dist = SourceDistribution.gaussian(cov5)
        est = estimate_delta(dist, eye5, None, 32, mode="monte-carlo",
                             reps=4000, stream=stream("delta-g"), h_tol=2e-4)
        assert est.estimate <= 3.0 * (est.mc_se + est.reference_budget)

    def test_exact_sweep_slope(self, rademacher5, eye5):
        pts = []
        for n in (16, 32, 64, 128, 256):
            est = estimate_delta(rademacher5, eye5, None, n, mode="exact",
                                 reference_cdf=chi5)
            assert est.mc_se == 0.0
            pts.append((n, est.estimate))
        fit = rate_fit(pts)
        assert -1.3 <= fit.slope <= -0.7

    def test_exact_mode_against_pipeline_reference(self, rademacher5, eye5, cov5):
        # the certified grid reference and the closed-form oracle agree
        oracle = estimate_delta(rademacher5, eye5, None, 64, mode="exact",
                                reference_cdf=chi5)
        pipeline = estimate_delta(rademacher5, eye5, None, 64, mode="exact",
                                  h_tol=1e-4, cov=cov5)
        assert abs(oracle.estimate - pipeline.estimate) <= pipeline.reference_budget

    def test_mc_mode_on_own_table(self, rademacher5, eye5, stream):
        table = exact_cdf_product(rademacher5, eye5, 16)
        est = estimate_delta(rademacher5, eye5, None, 16, mode="monte-carlo",
                             reps=20_000, stream=stream("delta-self"),
                             reference_cdf=table.cdf_callable("sn"))
        assert est.estimate <= 3.0 * est.mc_se

    def test_exact_mode_rejects_shift(self, rademacher5, eye5):
        with pytest.raises(ValidationError):
            estimate_delta(rademacher5, eye5, np.ones(5), 16, mode="exact",
                           reference_cdf=chi5)


class TestConcentration:
    def test_point_mass_at_n_one(self, rademacher5, eye5):
        est = concentration(rademacher5, eye5, 0.0, 1,
                            candidate_shifts=[np.zeros(5, dtype=int)])
        assert est.value == 1.0
        assert est.best_window_start == 5.0

    def test_window_covering_support_gives_one(self, rademacher5, eye5):
        est = concentration(rademacher5, eye5, 1000.0, 4,
                            candidate_shifts=[np.zeros(5, dtype=int)])
        assert abs(est.value - 1.0) <= 1e-12

    def test_monotone_in_lambda(self, rademacher5, eye5):
        values = [concentration(rademacher5, eye5, lam, 16).value
                  for lam in (0.0, 1.0, 4.0, 16.0)]
        assert np.all(np.diff(values) >= -1e-15)

    def test_search_report_contains_candidates(self, rademacher5, eye5):
        est = concentration(rademacher5, eye5, 0.0, 4)
        assert len(est.search) == 6  # zero plus the five axis directions
        assert est.value >= max(row[2] for row in est.search) - 1e-15

    def test_monte_carlo_mode_tracks_exact(self, rademacher5, eye5, stream):
        exact = concentration(rademacher5, eye5, 1.0, 16,
                              candidate_shifts=[np.zeros(5, dtype=int)])
        mc = concentration(rademacher5, eye5, 1.0, 16, mode="monte-carlo",
                           reps=40_000, stream=stream("conc-mc"),
                           candidate_shifts=[np.zeros(5, dtype=int)])
        assert abs(mc.value - exact.value) <= 4.0 * 0.5 / math.sqrt(40_000)


class TestCharfn:
    def test_trivial_point(self, rademacher5, eye5):
        val = charfn_qf_exact(0.0, np.zeros(5), rademacher5, 3, eye5)
        assert abs(val - 1.0) <= 1e-14

    def test_balanced_form_real_at_zero_linear(self, rademacher5, eye5):
        # the form value Z1^2 - Z2^2 is a symmetric random variable, so the
        # characteristic function is real; an all-plus form is not symmetric
        dist = SourceDistribution.rademacher(2)
        balanced = build_quadratic_form(np.diag([1.0, -1.0]))
        val = charfn_qf_exact(0.37, np.zeros(2), dist, 3, balanced)
        assert abs(val.imag) <= 1e-13
        assert abs(val) <= 1.0 + 1e-12
        plain = charfn_qf_exact(0.37, np.zeros(5), rademacher5, 3, eye5)
        assert abs(plain) <= 1.0 + 1e-12

    def test_dp_matches_full_enumeration(self, rademacher5, eye5, stream):
        rng = stream("charfn")
        t = float(rng.uniform(-2.0, 2.0))
        x = rng.normal(size=5)
        fast = charfn_qf_exact(t, x, rademacher5, 3, eye5)
        atoms, probs = rademacher5.as_atoms()
        brute = charfn_qf_exact(t, x,
                                SourceDistribution.finite_discrete(atoms, probs),
                                3, eye5)
        assert abs(fast - brute) <= 1e-11

    def test_kappa_probe(self, rademacher5, eye5, stream):
        xs = [np.zeros(5)] + [v for v in stream("kappa").normal(size=(5, 5))]
        best, arg = kappa_probe(0.2, rademacher5, eye5, 2, xs)
        assert 0.0 <= best <= 1.0 + 1e-12

    def test_enumeration_cap(self, stream):
        rng = stream("charfn-cap")
        dist = SourceDistribution.finite_discrete(rng.normal(size=(4, 3)),
                                                  [0.25] * 4)
        tilted = build_quadratic_form(np.eye(3) + 0.1)
        with pytest.raises(CapExceededError):
            charfn_qf_exact(0.3, np.zeros(3), dist, 7, tilted, cap=10_000)


class TestRateFit:
    def test_exact_inverse_law(self):
        fit = rate_fit([(n, 7.0 / n) for n in (4, 8, 16, 32)])
        assert abs(fit.slope + 1.0) <= 1e-12
        assert abs(fit.intercept - math.log(7.0)) <= 1e-12
        assert fit.slope_se <= 1e-12

    def test_square_root_law(self):
        fit = rate_fit([(n, 3.0 * n ** -0.5) for n in (4, 8, 16, 32, 64)])
        assert abs(fit.slope + 0.5) <= 1e-12

    def test_rejects_bad_input(self):
        with pytest.raises(ValidationError):
            rate_fit([(4, 1.0), (8, 0.5)])
        with pytest.raises(ValidationError):
            rate_fit([(4, 1.0), (8, 0.5), (16, -0.2)])
