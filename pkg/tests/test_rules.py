import numpy as np
import pytest

from epiplan import Action, DomainError, UnderdeterminedError
from epiplan.grid import SparseDistribution
from epiplan.rules import AmbiguityConfig, DecisionRuleCoefficients, eta_bounds, fit_rules, reward_rule


def grid_actions(L=2, M=2):
    return [Action(v, r) for v in range(L + 1) for r in range(M + 1)]


def affine_instance(actions, support, c0, c1, c2, delta=0.0):
    """Kernels whose rows are exactly affine in (y_V, y_R) over the support."""
    kernels = []
    for a in actions:
        probs = c0 + c1 * a.y_V + c2 * a.y_R
        kernels.append(SparseDistribution(support, probs))
    return kernels


class TestFitRules:
    def test_exact_affine_recovery(self):
        actions = grid_actions()
        support = np.array([3, 7, 9])
        c0 = np.array([0.5, 0.3, 0.2])
        c1 = np.array([0.02, -0.01, -0.01])
        c2 = np.array([-0.04, 0.01, 0.03])
        kernels = affine_instance(actions, support, c0, c1, c2)
        rewards = [-(1.0 + 2.0 * a.y_V + 3.0 * a.y_R) for a in actions]
        cfg = AmbiguityConfig(delta=0.0, k=10.0)
        coeffs = fit_rules(actions, kernels, rewards, cfg)
        np.testing.assert_allclose(coeffs.rho[0], c0, atol=1e-8)
        np.testing.assert_allclose(coeffs.rho[1], c1, atol=1e-8)
        np.testing.assert_allclose(coeffs.rho[2], c2, atol=1e-8)
        np.testing.assert_allclose(coeffs.sigma, coeffs.rho, atol=1e-10)
        np.testing.assert_allclose(coeffs.eps, [-1.0, -2.0, -3.0], atol=1e-8)

    def test_constant_targets_zero_slopes(self):
        actions = grid_actions()
        support = np.array([0, 5])
        kernels = [SparseDistribution(support, np.array([0.4, 0.6])) for _ in actions]
        rewards = [-7.0] * len(actions)
        coeffs = fit_rules(actions, kernels, rewards, AmbiguityConfig(0.05, 1.0))
        np.testing.assert_allclose(coeffs.rho[1:], 0.0, atol=1e-8)
        np.testing.assert_allclose(coeffs.sigma[1:], 0.0, atol=1e-8)
        np.testing.assert_allclose(coeffs.eps[1:], 0.0, atol=1e-8)
        assert coeffs.eps[0] == pytest.approx(-7.0, abs=1e-8)

    def test_residuals_orthogonal_to_design(self):
        # Normal-equations oracle: X'(y - X b) = 0 for every target column.
        rng = np.random.default_rng(21)
        actions = grid_actions(3, 3)
        support = np.arange(5)
        X = np.array([[1.0, a.y_V, a.y_R] for a in actions])
        kernels = []
        raw = rng.random((len(actions), 5))
        raw /= raw.sum(axis=1, keepdims=True)
        for row in raw:
            kernels.append(SparseDistribution(support, row))
        rewards = list(-rng.random(len(actions)) * 100)
        coeffs = fit_rules(actions, kernels, rewards, AmbiguityConfig(0.02, 1.0))
        resid = (raw + 0.02) - X @ coeffs.rho
        np.testing.assert_allclose(X.T @ resid, 0.0, atol=1e-7)
        resid_r = np.asarray(rewards) - X @ coeffs.eps
        np.testing.assert_allclose(X.T @ resid_r, 0.0, atol=1e-7)

    def test_underdetermined_rejected(self):
        support = np.array([0])
        kernels = [SparseDistribution(support, np.array([1.0]))] * 2
        with pytest.raises(UnderdeterminedError):
            fit_rules([Action(0, 0), Action(1, 0)], kernels, [0.0, 0.0],
                      AmbiguityConfig(0.0, 1.0))

    def test_collinear_actions_rejected(self):
        # Three distinct actions on one line cannot identify both slopes.
        actions = [Action(0, 0), Action(1, 1), Action(2, 2)]
        support = np.array([0])
        kernels = [SparseDistribution(support, np.array([1.0]))] * 3
        with pytest.raises(UnderdeterminedError):
            fit_rules(actions, kernels, [0.0, 0.0, 0.0], AmbiguityConfig(0.0, 1.0))

    def test_order_independent(self):
        rng = np.random.default_rng(4)
        actions = grid_actions()
        support = np.arange(4)
        raw = rng.random((len(actions), 4))
        raw /= raw.sum(axis=1, keepdims=True)
        kernels = [SparseDistribution(support, r) for r in raw]
        rewards = list(-rng.random(len(actions)))
        cfg = AmbiguityConfig(0.01, 1.0)
        a = fit_rules(actions, kernels, rewards, cfg)
        perm = rng.permutation(len(actions))
        b = fit_rules([actions[i] for i in perm], [kernels[i] for i in perm],
                      [rewards[i] for i in perm], cfg)
        np.testing.assert_allclose(a.rho, b.rho, atol=1e-10)
        np.testing.assert_allclose(a.eps, b.eps, atol=1e-10)


class TestEtaBounds:
    def test_delta_zero_exact_fit_reproduces_rows(self):
        actions = grid_actions()
        support = np.array([1, 2])
        c0 = np.array([0.7, 0.3])
        c1 = np.array([0.05, -0.05])
        c2 = np.array([-0.02, 0.02])
        kernels = affine_instance(actions, support, c0, c1, c2)
        coeffs = fit_rules(actions, kernels, [0.0] * len(actions),
                           AmbiguityConfig(0.0, 1.0))
        for a, row in zip(actions, kernels):
            eb = eta_bounds(coeffs, a)
            np.testing.assert_allclose(eb.eta_L, row.probs, atol=1e-8)
            np.testing.assert_allclose(eb.eta_U, row.probs, atol=1e-8)

    def test_band_width_is_two_delta(self):
        actions = grid_actions()
        support = np.array([1, 2])
        kernels = affine_instance(actions, support, np.array([0.6, 0.4]),
                                  np.array([0.01, -0.01]), np.array([0.0, 0.0]))
        coeffs = fit_rules(actions, kernels, [0.0] * len(actions),
                           AmbiguityConfig(0.1, 1.0))
        for a in actions:
            eb = eta_bounds(coeffs, a)
            np.testing.assert_allclose(eb.eta_U - eb.eta_L, 0.2, atol=1e-8)

    def test_general_affine_evaluation(self):
        rho = np.array([[0.5, 0.1], [0.02, 0.0], [-0.01, 0.03]])
        sigma = rho - 0.08
        coeffs = DecisionRuleCoefficients(
            support=np.array([0, 1]), rho=rho, sigma=sigma, eps=np.zeros(3))
        a = Action(2, 3)
        eb = eta_bounds(coeffs, a)
        np.testing.assert_allclose(
            eb.eta_U, rho[0] + 2 * rho[1] + 3 * rho[2], atol=1e-12)
        np.testing.assert_allclose(
            eb.eta_L, sigma[0] + 2 * sigma[1] + 3 * sigma[2], atol=1e-12)


class TestRewardRule:
    def test_exact_affine_rewards(self):
        actions = grid_actions()
        support = np.array([0])
        kernels = [SparseDistribution(support, np.array([1.0]))] * len(actions)
        rewards = [-(10.0 + 4.0 * a.y_V + 6.0 * a.y_R) for a in actions]
        coeffs = fit_rules(actions, kernels, rewards, AmbiguityConfig(0.0, 1.0))
        for a, r in zip(actions, rewards):
            assert reward_rule(coeffs, a) == pytest.approx(r, abs=1e-8)

    def test_prediction_matches_manual_ols(self):
        rng = np.random.default_rng(8)
        actions = grid_actions()
        X = np.array([[1.0, a.y_V, a.y_R] for a in actions])
        y = -rng.random(len(actions)) * 50
        support = np.array([0])
        kernels = [SparseDistribution(support, np.array([1.0]))] * len(actions)
        coeffs = fit_rules(actions, kernels, list(y), AmbiguityConfig(0.0, 1.0))
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
        for a in actions:
            manual = beta @ np.array([1.0, a.y_V, a.y_R])
            assert reward_rule(coeffs, a) == pytest.approx(manual, abs=1e-6)


class TestAmbiguityConfig:
    def test_validation(self):
        with pytest.raises(DomainError):
            AmbiguityConfig(delta=-0.1)
        with pytest.raises(DomainError):
            AmbiguityConfig(k=-1.0)
