import math

import numpy as np
import pytest

import rwre_lab as rl
from rwre_lab import ballisticity as bal


class TestScaleConstants:
    def test_log_m0_values(self):
        assert bal.log_m0(3) == pytest.approx(100 + 12 * math.log(12) ** 2, abs=1e-12)
        assert bal.log_m0(3) == pytest.approx(174.0971, abs=1e-3)
        assert bal.log_m0(2) == pytest.approx(100 + 8 * math.log(8) ** 2, abs=1e-12)
        assert bal.log_m0(2) == pytest.approx(134.5928, abs=1e-3)

    def test_log_m0_monotone_in_dimension(self):
        vals = [bal.log_m0(d) for d in range(2, 11)]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        with pytest.raises(ValueError):
            bal.log_m0(1)

    def test_c_alpha_cases(self):
        val, case = bal.c_alpha_L(3, 2 / 3, 4)
        assert val == pytest.approx(8.0, abs=1e-12)  # L^{3/2}
        assert case == "d=3"
        val4, _ = bal.c_alpha_L(4, 0.5, 3)
        assert val4 == pytest.approx(3 ** (4 * 0.5 / 1.5), rel=1e-12)
        val5, _ = bal.c_alpha_L(5, 0.9, 10)
        assert val5 == 1.0
        with pytest.raises(ValueError):
            bal.c_alpha_L(5, 0.5, 4)
        with pytest.raises(ValueError):
            bal.c_alpha_L(3, 1.0, 4)


class TestFreedman:
    def test_reference_values(self):
        assert bal.freedman_bound(u=1, b=1, sum_v2=1) \
            == pytest.approx(math.exp(-0.375), abs=1e-12)
        assert bal.freedman_bound(u=1, b=1, sum_v2=1) == pytest.approx(0.687289, abs=1e-6)
        assert bal.freedman_bound(u=2, b=1, sum_v2=0) \
            == pytest.approx(math.exp(-3.0), abs=1e-12)
        assert bal.freedman_bound(u=2, b=1, sum_v2=0) == pytest.approx(0.049787, abs=1e-6)
        assert bal.freedman_bound(u=0, b=1, sum_v2=3) == 1.0

    def test_monotonicity(self):
        us = np.linspace(0.5, 8, 12)
        vals = [bal.freedman_bound(u=u, b=1, sum_v2=2) for u in us]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        v2s = np.linspace(0.1, 5, 8)
        vals = [bal.freedman_bound(u=2, b=1, sum_v2=v) for v in v2s]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        bs = np.linspace(0.1, 5, 8)
        vals = [bal.freedman_bound(u=2, b=b, sum_v2=1) for b in bs]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            bal.freedman_bound(u=-1, b=1, sum_v2=1)
        with pytest.raises(ValueError):
            bal.freedman_bound(u=1, b=0, sum_v2=1)
        with pytest.raises(ValueError):
            bal.freedman_bound(u=1, b=1, sum_v2=-0.5)

    def test_empirical_tails_small(self):
        rep = bal.martingale_tail_test("plusminus", 100, [2, 6, 10], 20_000, seed=5)
        assert rep.all_within
        rep_u = bal.martingale_tail_test("uniform", 100, [2, 6], 10_000, seed=6)
        assert rep_u.all_within
        rep_l = bal.martingale_tail_test("lazy", 100, [2, 6], 10_000, seed=7, q=0.3)
        assert rep_l.all_within
        with pytest.raises(ValueError):
            bal.martingale_tail_test("cauchy", 10, [1], 10, seed=1)


class TestConditionP:
    def test_ssrw_m2_fails_threshold(self):
        rep = bal.condition_p_probe(rl.ssrw_law(2), 2, n_per_site=20_000, seed=3)
        assert rep.verdict == "fail"
        assert rep.below_m0
        assert rep.threshold_exponent == 35
        assert rep.log_threshold == pytest.approx(-35 * math.log(2), abs=1e-12)
        assert abs(rep.sup_estimate - 2 / 3) < 0.015
        # origin start dominates; the middle-frontal core sits near 1/3
        core = [s for s in rep.starts if s.site[0] == 1]
        assert all(abs(s.p_hat - 1 / 3) < 0.03 for s in core)

    def test_exact_solver_cross_check(self):
        env = rl.sample_environment(rl.ssrw_law(2), seed=0)
        box = rl.BallisticityBox(2, 2)
        dist = rl.exit_distribution(env, box, (0, 0), tol=1e-11)
        assert 1 - dist.frontal_mass() == pytest.approx(2 / 3, abs=1e-6)
        dist1 = rl.exit_distribution(env, box, (1, 0), tol=1e-11)
        assert 1 - dist1.frontal_mass() == pytest.approx(1 / 3, abs=1e-6)

    def test_strong_drift_point_mass_passes_informally(self):
        law = rl.PointMassLaw([0.5, 0.0, 0.25, 0.25])
        rep = bal.condition_p_probe(law, 2, n_per_site=20_000, seed=3)
        assert rep.sup_estimate == 0.0
        assert rep.verdict == "pass-informal"
        assert all(s.hits == 0 for s in rep.starts)

    def test_shifted_law_sup_below_ssrw(self):
        base = bal.condition_p_probe(rl.ssrw_law(2), 2, n_per_site=4000, seed=4)
        prev = base.sup_estimate + 0.02
        for i, shift in enumerate((0.05, 0.1, 0.2)):
            law = rl.build_shifted_law(rl.ssrw_law(2), shift)
            rep = bal.condition_p_probe(law, 2, n_per_site=4000, seed=5 + i)
            assert rep.sup_estimate <= prev
            prev = rep.sup_estimate + 0.02

    def test_site_cap_subsamples_with_declared_coverage(self):
        rep = bal.condition_p_probe(rl.ssrw_law(2), 2, n_per_site=500,
                                    site_cap=5, seed=1)
        assert rep.star_total == 15
        assert rep.star_scanned <= 5
        assert len(rep.starts) == rep.star_scanned + 1


class TestDriftGreen:
    def test_requires_positive_drift(self):
        with pytest.raises(ValueError):
            bal.mean_drift_green_check(rl.ssrw_law(2), 3, 18, 5, seed=1)

    def test_point_mass_zero_spread(self):
        law = rl.PointMassLaw([0.30, 0.20, 0.25, 0.25])
        stats = bal.mean_drift_green_check(law, 3, 18, 8, seed=1)
        assert stats.variance < 1e-25
        env = rl.sample_environment(law, seed=0)
        slab = rl.SlabRegion(3, 18, 2)
        ones = np.ones(slab.interior_count())
        expected = 0.1 * rl.green_operator(env, slab, ones, (0, 0), tol=1e-12)
        assert stats.mean == pytest.approx(expected, abs=1e-8)

    def test_kick_law_beats_bound_smallscale(self):
        law = rl.SignedAxisKickLaw(3, 0.005, 0.05)
        stats = bal.mean_drift_green_check(law, 3, 18, 30, seed=2)
        assert stats.bound == pytest.approx(0.4 * 3 * 0.05 * 9, rel=1e-12)
        assert stats.bound_holds_with_ci
        assert stats.eps_L_warning  # eps*L = 0.36*3 > 3/4


class TestFluctuationScan:
    def test_quadratic_scaling(self):
        scan = bal.fluctuation_scan(lambda a: rl.SignedAxisKickLaw(2, a),
                                    [0.01, 0.02], 4, 64, 800, alpha=2 / 3, seed=17)
        assert 3.2 <= scan.ratios[0] <= 4.8
        assert 1.6 <= scan.slope <= 2.4
        assert scan.c_alpha == pytest.approx(
            4 ** (1 + 2 * (1 / 3) / (4 / 3)), rel=1e-12)

    def test_point_mass_has_no_fluctuations(self):
        scan = bal.fluctuation_scan(
            lambda a: rl.PointMassLaw([0.25 + a / 2, 0.25 - a / 2, 0.25, 0.25]),
            [0.01, 0.02], 3, 18, 10, alpha=0.5, seed=3)
        assert all(r.variance < 1e-25 for r in scan.rows)
        assert math.isnan(scan.slope)

    def test_amplitudes_must_increase(self):
        with pytest.raises(ValueError):
            bal.fluctuation_scan(lambda a: rl.SignedAxisKickLaw(2, a),
                                 [0.02, 0.01], 4, 64, 10, alpha=0.5, seed=1)


class TestRhoStatistics:
    def test_derived_scales_and_lambda0(self):
        law = rl.SignedAxisKickLaw(2, 0.02)  # eps=0.16, sigma=sqrt(2)*0.02
        stats = bal.rho_statistics(law, theta=0.2, eta=0.5, n_env=5, seed=4,
                                   lateral_cap=40)
        assert stats.L == 2 and stats.M == 16
        sigma = math.sqrt(2) * 0.02
        assert stats.lambda0 == pytest.approx(
            max(sigma * 0.16, 0.16 ** 2.5), rel=1e-12)
        assert np.all(stats.q_samples >= 0) and np.all(stats.q_samples <= 1)
        np.testing.assert_allclose(
            stats.rho_samples, stats.q_samples / (1 - stats.q_samples), atol=1e-12)

    def test_lambda0_formula_oracle(self):
        # max(sigma * eps^{1.5 - eta}, eps^{3 - eta}) at eta = 0.5
        val = max(1e-3 * 0.1 ** 1.0, 0.1 ** 2.5)
        assert val == pytest.approx(3.162277e-3, rel=1e-6)

    def test_rho_hat_bound_in_small_perturbation_regime(self):
        law = rl.SignedAxisKickLaw(2, 0.02)  # eps*L = 0.32 < 3/4
        stats = bal.rho_statistics(law, theta=0.2, eta=0.5, n_env=25, seed=9,
                                   lateral_cap=40)
        assert stats.eps_L < 0.75
        assert stats.rho_hat_max <= 3.0

    def test_ssrw_rho_hat_is_one_with_explicit_L(self):
        stats = bal.rho_statistics(rl.ssrw_law(2), theta=0.2, eta=0.5,
                                   n_env=3, seed=4, L=2, lateral_cap=40)
        np.testing.assert_allclose(stats.rho_hat_samples, 1.0, atol=1e-9)
        assert np.all(np.abs(stats.g_origin_samples) < 1e-9)

    def test_ssrw_long_box_exit_is_balanced(self):
        # frontal and back exits are symmetric; side exits are a small excess
        env = rl.sample_environment(rl.ssrw_law(2), seed=1)
        box = rl.CorollaryBox(4, 2)
        q = bal._nonfrontal_exit_probability(env, box, tol=1e-11)
        dist = rl.exit_distribution(env, box, (0, 0), tol=1e-11)
        assert q == pytest.approx(1 - dist.frontal_mass(), abs=1e-8)
        assert q == pytest.approx(0.5, abs=0.02)
        assert q >= 0.5

    def test_eps_zero_needs_explicit_L(self):
        with pytest.raises(ValueError):
            bal.rho_statistics(rl.ssrw_law(2), theta=0.2, eta=0.5, n_env=2, seed=1)

    def test_size_error_without_subsampling(self):
        law = rl.SignedAxisKickLaw(2, 0.02)
        with pytest.raises(bal.SizeError):
            bal.rho_statistics(law, theta=0.9, eta=0.5, n_env=2, seed=1,
                               allow_subsample=False)

    def test_lateral_cap_is_declared(self):
        law = rl.SignedAxisKickLaw(2, 0.02)
        stats = bal.rho_statistics(law, theta=0.2, eta=0.5, n_env=3, seed=4,
                                   lateral_cap=40)
        assert stats.lateral_capped
        assert stats.lateral_half_width == 40
