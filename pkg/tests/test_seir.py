import math

import numpy as np
import pytest

from epiplan import (
    Action,
    ContinuousState,
    DomainError,
    EpidemicParams,
    binomial_pmf,
    compile_rates,
    nominal_reward,
    sample_transition,
    transition_pmf,
)
from epiplan.seir import apply_draw


def small_params(**kw):
    base = dict(N=10, mu=10.0, beta=0.025, alpha0=0.9, l_C=0.5, l_D=1 / 3,
                Q=2.0, k_R=3.0, W=1.0, L=5, M=5, lam=0.95, T=4)
    base.update(kw)
    return EpidemicParams(**base)


class TestCompileRates:
    def test_no_infectives_means_no_exposure(self):
        p = small_params()
        s = ContinuousState(0.5, 0.2, 0.0)
        assert compile_rates(p, s, Action(0, 0)).phi == 0.0
        assert compile_rates(p, s, Action(3, 2)).phi == 0.0

    def test_full_reduction_kills_exposure(self):
        p = small_params(alpha0=1.0)
        s = ContinuousState(0.5, 0.2, 0.2)
        r = compile_rates(p, s, Action(0, p.M))
        assert r.alpha_t == 1.0
        assert r.phi == 0.0

    def test_closed_form_value(self):
        # 1 - exp(-mu * p_I * beta) with mu=10, beta=0.025, p_I=0.2
        p = small_params()
        s = ContinuousState(0.4, 0.2, 0.2)
        r = compile_rates(p, s, Action(0, 0))
        assert r.phi == pytest.approx(1.0 - math.exp(-0.05), abs=1e-12)
        assert r.phi == pytest.approx(0.0487706, abs=1e-6)
        assert r.rho_C == pytest.approx(1.0 - math.exp(-0.5), abs=1e-15)
        assert r.rho_D == pytest.approx(1.0 - math.exp(-1 / 3), abs=1e-15)

    def test_phi_nonincreasing_in_y_R(self):
        p = small_params()
        s = ContinuousState(0.4, 0.2, 0.3)
        phis = [compile_rates(p, s, Action(0, r)).phi for r in range(p.M + 1)]
        assert all(a >= b - 1e-15 for a, b in zip(phis, phis[1:]))

    def test_action_out_of_bounds(self):
        p = small_params()
        s = ContinuousState(0.4, 0.2, 0.2)
        with pytest.raises(DomainError):
            compile_rates(p, s, Action(p.L + 1, 0))


class TestBinomialPmf:
    def test_zero_probability(self):
        assert binomial_pmf(5, 0.0, 0) == 1.0
        assert binomial_pmf(5, 0.0, 3) == 0.0

    def test_direct_formula(self):
        assert binomial_pmf(4, 0.5, 2) == pytest.approx(0.375, abs=1e-12)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            binomial_pmf(10, 0.3, 11)
        with pytest.raises(DomainError):
            binomial_pmf(10, 1.5, 2)
        with pytest.raises(DomainError):
            binomial_pmf(10, 0.3, -1)

    def test_large_n_no_overflow(self):
        v = binomial_pmf(100000, 0.3, 30000)
        assert 0.0 < v < 1.0
        assert np.isfinite(v)

    def test_row_sums_to_one(self):
        for n, p in [(17, 0.3), (40, 0.05), (8, 0.9)]:
            total = sum(binomial_pmf(n, p, k) for k in range(n + 1))
            assert total == pytest.approx(1.0, abs=1e-12)


class TestTransitionPmf:
    def test_degenerate_state_self_loop(self):
        p = small_params()
        s = ContinuousState(0.4, 0.0, 0.0)
        tbl = transition_pmf(p, s, Action(0, 0))
        assert len(tbl) == 1
        assert tbl.probs[0] == pytest.approx(1.0)
        np.testing.assert_allclose(tbl.points[0], [0.4, 0.0, 0.0])

    def test_no_infectives_only_incubation_moves(self):
        p = small_params()
        s = ContinuousState(0.4, 0.3, 0.0)
        tbl = transition_pmf(p, s, Action(0, 0))
        # n_B = n_D = 0 forced, so mass over n_C matches Bin(N*p_E, rho_C)
        n_E = round(p.N * 0.3)
        assert len(tbl) == n_E + 1
        for (n_B, n_C, n_D), pr in zip(tbl.draws, tbl.probs):
            assert n_B == 0 and n_D == 0
            assert pr == pytest.approx(binomial_pmf(n_E, p.rho_C, int(n_C)), rel=1e-9)

    def test_matches_exhaustive_enumeration(self):
        # Oracle: direct triple loop over all (n_B, n_C, n_D) with scalar pmfs.
        p = small_params(N=10)
        s = ContinuousState(0.4, 0.2, 0.2)
        a = Action(0, 0)
        rates = compile_rates(p, s, a)
        n_S, n_E, n_I = 4, 2, 2
        expect = {}
        for n_B in range(n_S + 1):
            for n_C in range(n_E + 1):
                for n_D in range(n_I + 1):
                    pr = (
                        binomial_pmf(n_S, rates.phi, n_B)
                        * binomial_pmf(n_E, rates.rho_C, n_C)
                        * binomial_pmf(n_I, rates.rho_D, n_D)
                    )
                    expect[(n_B, n_C, n_D)] = pr

        tbl = transition_pmf(p, s, a)
        got = {tuple(map(int, d)): pr for d, pr in zip(tbl.draws, tbl.probs)}
        total = sum(expect.values())
        for key, pr in expect.items():
            if pr >= 1e-11:
                assert got[key] == pytest.approx(pr / total, rel=1e-6), key

    def test_vaccination_removes_susceptibles_before_exposure(self):
        p = small_params(N=10)
        s = ContinuousState(0.4, 0.0, 0.2)
        tbl = transition_pmf(p, s, Action(p.L, 0))  # vaccinate everyone
        # trials for exposure are zero, so p_S' = 0 in every atom
        assert np.all(tbl.points[:, 0] == 0.0)

    def test_rows_sum_to_one(self):
        p = small_params(N=50)
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = rng.multinomial(50, [0.4, 0.2, 0.2, 0.2])
            s = ContinuousState(n[0] / 50, n[1] / 50, n[2] / 50)
            a = Action(int(rng.integers(0, 6)), int(rng.integers(0, 6)))
            tbl = transition_pmf(p, s, a)
            assert tbl.probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(tbl.probs >= 0)

    def test_expected_new_exposures_monotone_in_action(self):
        p = small_params(N=100)
        s = ContinuousState(0.5, 0.2, 0.2)
        def expected_exposures(a):
            tbl = transition_pmf(p, s, a)
            return float(np.dot(tbl.draws[:, 0], tbl.probs))
        base = expected_exposures(Action(0, 0))
        for v in range(1, p.L + 1):
            nxt = expected_exposures(Action(v, 0))
            assert nxt <= base + 1e-9
            base = nxt
        base = expected_exposures(Action(0, 0))
        for r in range(1, p.M + 1):
            nxt = expected_exposures(Action(0, r))
            assert nxt <= base + 1e-9
            base = nxt


class TestSampleTransition:
    def test_degenerate_always_zero(self):
        p = small_params()
        s = ContinuousState(0.4, 0.0, 0.0)
        rng = np.random.default_rng(0)
        d = sample_transition(p, s, Action(0, 0), rng)
        assert (d.n_B, d.n_C, d.n_D) == (0, 0, 0)

    def test_deterministic_under_seed(self):
        p = small_params(N=100)
        s = ContinuousState(0.5, 0.2, 0.2)
        a = Action(1, 1)
        d1 = sample_transition(p, s, a, np.random.default_rng(42))
        d2 = sample_transition(p, s, a, np.random.default_rng(42))
        assert d1 == d2

    def test_empirical_matches_pmf(self):
        # Monte Carlo frequencies vs the exact law, chi-square at the 0.01 level.
        from scipy.stats import chi2

        p = small_params(N=12)
        s = ContinuousState(0.5, 0.25, 0.25)
        a = Action(1, 2)
        tbl = transition_pmf(p, s, a)
        rng = np.random.default_rng(123)
        n_draws = 100_000
        counts = {}
        for _ in range(n_draws):
            d = sample_transition(p, s, a, rng)
            key = (d.n_B, d.n_C, d.n_D)
            counts[key] = counts.get(key, 0) + 1

        keys = [tuple(map(int, d)) for d in tbl.draws]
        probs = tbl.probs
        mask = probs * n_draws >= 5.0  # standard cell-count floor
        obs = np.array([counts.get(k, 0) for k in keys])
        rest_obs = n_draws - obs[mask].sum()
        rest_p = 1.0 - probs[mask].sum()
        exp = np.append(probs[mask] * n_draws, max(rest_p, 1e-300) * n_draws)
        obs = np.append(obs[mask], rest_obs)
        stat = float(((obs - exp) ** 2 / exp).sum())
        dof = len(obs) - 1
        assert stat < chi2.ppf(0.99, dof)

    def test_apply_draw_consistent(self):
        p = small_params(N=20)
        s = ContinuousState(0.5, 0.25, 0.25)
        a = Action(2, 1)
        rng = np.random.default_rng(5)
        d = sample_transition(p, s, a, rng)
        nxt = apply_draw(p, s, a, d)
        total_before = s.p_S + s.p_E + s.p_I
        total_after = nxt.p_S + nxt.p_E + nxt.p_I
        assert total_after <= total_before + 1e-12


class TestNominalReward:
    def test_disease_free_no_action_is_free(self):
        p = small_params()
        s = ContinuousState(0.6, 0.0, 0.0)
        assert nominal_reward(p, s, Action(0, 0)) == 0.0

    def test_closed_form_example(self):
        p = EpidemicParams(N=100, mu=10, beta=0.025, alpha0=0.9, l_C=0.5,
                           l_D=1 / 3, Q=2, k_R=3, W=1, L=5, M=5, lam=0.95, T=4)
        s = ContinuousState(0.6, 0.1, 0.2)
        r = nominal_reward(p, s, Action(5, 2))
        c_I = 20 + 10 * (1 - math.exp(-0.5)) - 20 * (1 - math.exp(-1 / 3))
        assert r == pytest.approx(-(120 + 6 + c_I), abs=1e-9)
        assert r == pytest.approx(-144.265, abs=1e-3)

    def test_vaccination_cost_strictly_increasing(self):
        p = small_params(N=100)
        s = ContinuousState(0.5, 0.1, 0.1)
        rewards = [nominal_reward(p, s, Action(v, 0)) for v in range(p.L + 1)]
        assert all(a > b for a, b in zip(rewards, rewards[1:]))

    def test_components_nonnegative(self):
        p = small_params(N=100)
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = rng.multinomial(100, [0.3, 0.2, 0.2, 0.3])
            s = ContinuousState(n[0] / 100, n[1] / 100, n[2] / 100)
            a = Action(int(rng.integers(0, 6)), int(rng.integers(0, 6)))
            assert nominal_reward(p, s, a) <= 1e-12


class TestStateValidation:
    def test_fraction_ranges(self):
        with pytest.raises(DomainError):
            ContinuousState(-0.1, 0.2, 0.2)
        with pytest.raises(DomainError):
            ContinuousState(0.6, 0.3, 0.2)

    def test_counts_round(self):
        s = ContinuousState(1 / 3, 1 / 3, 1 / 3)
        assert s.counts(30) == (10, 10, 10)
        assert s.counts(10) == (3, 3, 3)
