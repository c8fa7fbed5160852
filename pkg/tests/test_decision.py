import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import brentq

import oracles
from qrse_priors.core import ActionSet, UtilityModel
from qrse_priors.decision import (
    AbsoluteContinuityViolation,
    DecisionContext,
    DegeneratePrior,
    NonBinaryActionSet,
    UnreachableUtility,
    ZeroPriorEntry,
    conditional_entropy,
    decision_probabilities,
    dual_decision_probabilities,
    dual_multiplier,
    kl_from_prior,
    mu_star_equivalent,
    shift_potential,
    shifted_decision_probabilities,
)

BINARY = ActionSet.binary()
BUS = ActionSet(("car", "blue-bus", "red-bus"))


def binary_ctx(prior=(0.5, 0.5), mu=0.0, T=1.0):
    return DecisionContext(BINARY, prior, UtilityModel.binary(mu), T)


priors2 = st.floats(0.001, 0.999).map(lambda c: (c, 1.0 - c))
temps = st.floats(0.05, 50.0)


class TestDecisionProbabilities:
    def test_indifference_point_uniform_prior(self):
        f = decision_probabilities(binary_ctx(mu=0.25), 0.25)
        assert f.tolist() == [0.5, 0.5]

    @pytest.mark.parametrize("T", [1e-3, 1.0, 1e3])
    def test_zero_utility_returns_prior(self, T):
        ctx = DecisionContext(BINARY, (0.7, 0.3), UtilityModel.constant([0.0, 0.0]), T)
        np.testing.assert_allclose(decision_probabilities(ctx, 3.0), [0.7, 0.3], rtol=0, atol=1e-15)

    def test_bus_priors_preserved(self):
        ctx = DecisionContext(BUS, (0.5, 0.25, 0.25), UtilityModel.constant([1.0, 1.0, 1.0]), 1.0)
        assert decision_probabilities(ctx, 0.0).tolist() == [0.5, 0.25, 0.25]
        uniform = DecisionContext(BUS, (1 / 3, 1 / 3, 1 / 3), UtilityModel.constant([1.0, 1.0, 1.0]), 1.0)
        np.testing.assert_allclose(decision_probabilities(uniform, 0.0), [1 / 3] * 3, atol=1e-16)

    def test_high_temperature_reverts_to_prior(self):
        f = decision_probabilities(binary_ctx((0.7, 0.3), mu=0.0, T=1e9), 1.0)
        np.testing.assert_allclose(f, [0.7, 0.3], atol=1e-6)

    def test_low_temperature_maximizes_utility(self):
        ctx = DecisionContext(BINARY, (0.01, 0.99), UtilityModel.constant([1.0, 0.0]), 1e-6)
        f = decision_probabilities(ctx, 0.0)
        assert f[0] > 1 - 1e-12 and f[1] < 1e-12

    def test_no_overflow_for_large_utility_ratio(self):
        ctx = binary_ctx(mu=0.0, T=1e-3)
        for x in (0.7, -0.7, 50.0, -50.0):
            f = decision_probabilities(ctx, x)
            assert np.all(np.isfinite(f)) and abs(f.sum() - 1) < 1e-12

    def test_point_mass_prior_is_returned(self):
        ctx = binary_ctx((1.0, 0.0), mu=0.0, T=1.0)
        assert decision_probabilities(ctx, -5.0).tolist() == [1.0, 0.0]

    def test_prior_only_on_impossible_actions(self):
        u = UtilityModel.table(2, lambda x: np.stack([np.full(np.shape(x), -np.inf), np.zeros(np.shape(x))]))
        ctx = DecisionContext(BINARY, (1.0, 0.0), u, 1.0)
        with pytest.raises(DegeneratePrior):
            decision_probabilities(ctx, 0.0)

    def test_vectorized_shape(self):
        f = decision_probabilities(binary_ctx(), np.linspace(-1, 1, 7))
        assert f.shape == (2, 7)

    def test_ties_split_at_low_temperature(self):
        ctx = DecisionContext(BUS, (0.2, 0.3, 0.5), UtilityModel.constant([1.0, 1.0, 0.0]), 1e-6)
        f = decision_probabilities(ctx, 0.0)
        assert f[2] < 1e-12
        np.testing.assert_allclose(f[:2], [0.4, 0.6], atol=1e-12)

    @given(st.floats(-20, 20), temps, st.floats(-5, 5), priors2)
    def test_normalized(self, x, T, mu, prior):
        f = decision_probabilities(binary_ctx(prior, mu, T), x)
        assert abs(f.sum() - 1.0) < 1e-12 and np.all(f >= 0)

    @given(st.floats(-20, 20), temps, st.floats(-5, 5))
    def test_uniform_prior_is_plain_logit(self, x, T, mu):
        f = decision_probabilities(binary_ctx(mu=mu, T=T), x)
        u = np.array([x - mu, -(x - mu)]) / T
        logit = np.exp(u - u.max()) / np.exp(u - u.max()).sum()
        np.testing.assert_allclose(f, logit, rtol=0, atol=1e-12)

    @given(temps, st.floats(-5, 5), priors2)
    def test_entry_probability_increasing(self, T, mu, prior):
        xs = np.linspace(mu - 3 * T, mu + 3 * T, 41)
        f = decision_probabilities(binary_ctx(prior, mu, T), xs)[0]
        assert np.all(np.diff(f) > 0)

    @given(temps, st.floats(-5, 5), priors2)
    def test_half_at_mu_only_for_uniform_prior(self, T, mu, prior):
        f = decision_probabilities(binary_ctx(prior, mu, T), mu)[0]
        if abs(prior[0] - 0.5) > 1e-9:
            assert f != pytest.approx(0.5, abs=1e-12)
        assert decision_probabilities(binary_ctx(mu=mu, T=T), mu)[0] == pytest.approx(0.5, abs=1e-15)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 10))
    def test_iia_with_uniform_prior(self, u1, u2, u3, u3_alt, T):
        ratios = []
        for third in (u3, u3_alt):
            ctx = DecisionContext(BUS, (1 / 3, 1 / 3, 1 / 3), UtilityModel.constant([u1, u2, third]), T)
            f = decision_probabilities(ctx, 0.0)
            ratios.append(f[0] / f[1])
        assert ratios[0] == pytest.approx(ratios[1], rel=1e-12)


class TestShiftPotential:
    def test_uniform(self):
        np.testing.assert_array_equal(shift_potential(binary_ctx()), [math.log(0.5)] * 2)

    def test_skewed(self):
        alpha = shift_potential(binary_ctx((0.99, 0.01), T=2.0))
        np.testing.assert_allclose(alpha, [2 * math.log(0.99), 2 * math.log(0.01)], rtol=1e-15)

    def test_zero_prior_entry_rejected(self):
        with pytest.raises(ZeroPriorEntry):
            shift_potential(binary_ctx((1.0, 0.0)))

    @given(st.floats(-10, 10), temps, st.floats(-5, 5), priors2)
    def test_both_paths_agree(self, x, T, mu, prior):
        ctx = binary_ctx(prior, mu, T)
        np.testing.assert_allclose(shifted_decision_probabilities(ctx, x), decision_probabilities(ctx, x),
                                   rtol=0, atol=1e-12)


class TestEntropyAndKL:
    def test_entropy_at_indifference(self):
        assert conditional_entropy(binary_ctx(mu=1.5), 1.5) == pytest.approx(math.log(2), abs=1e-15)

    def test_entropy_deterministic_choice(self):
        assert conditional_entropy(binary_ctx(T=1e-6), 1.0) < 1e-12

    def test_entropy_matches_oracle(self):
        expected = oracles.entropy(oracles.choice([0.7, 0.3], oracles.binary_utils(0.5, 0.0), 1.0))
        assert conditional_entropy(binary_ctx((0.7, 0.3), 0.0, 1.0), 0.5) == pytest.approx(float(expected), abs=1e-14)

    def test_kl_zero_utility(self):
        ctx = DecisionContext(BINARY, (0.7, 0.3), UtilityModel.constant([0.0, 0.0]), 1.0)
        assert kl_from_prior(ctx, 2.0) == pytest.approx(0.0, abs=1e-16)

    def test_kl_high_temperature(self):
        assert kl_from_prior(binary_ctx((0.7, 0.3), T=1e9), 1.0) < 1e-12

    def test_kl_matches_oracle(self):
        f = oracles.choice([0.5, 0.5], oracles.binary_utils(1.0, 0.0), 1.0)
        expected = oracles.kl(f, [0.5, 0.5])
        assert kl_from_prior(binary_ctx(), 1.0) == pytest.approx(float(expected), abs=1e-14)

    def test_kl_rejects_zero_prior(self):
        with pytest.raises(AbsoluteContinuityViolation):
            kl_from_prior(binary_ctx((1.0, 0.0)), 1.0)

    @given(st.floats(-10, 10), temps, st.floats(-5, 5), priors2)
    def test_kl_nonnegative_and_entropy_bounded(self, x, T, mu, prior):
        ctx = binary_ctx(prior, mu, T)
        assert kl_from_prior(ctx, x) >= 0
        assert -1e-15 <= conditional_entropy(ctx, x) <= math.log(2) + 1e-15


class TestDuality:
    def test_slack_constraint_gives_uniform(self):
        ctx = DecisionContext(BUS, (0.2, 0.3, 0.5), UtilityModel.constant([1.0, 2.0, 6.0]), 1.0)
        f = dual_decision_probabilities(ctx, 0.0, 3.0)
        np.testing.assert_allclose(f, [1 / 3] * 3, atol=1e-15)

    def test_binding_at_max_gives_point_mass(self):
        ctx = DecisionContext(BUS, (1 / 3,) * 3, UtilityModel.constant([1.0, 2.0, 6.0]), 1.0)
        assert dual_decision_probabilities(ctx, 0.0, 6.0).tolist() == [0.0, 0.0, 1.0]

    def test_binary_tanh_case(self):
        beta_oracle = brentq(lambda b: math.tanh(b) - 0.5, 0.0, 10.0, xtol=1e-15)
        ctx = DecisionContext(BINARY, (0.5, 0.5), UtilityModel.constant([1.0, -1.0]), 1.0)
        beta = dual_multiplier(np.array([1.0, -1.0]), 0.5)
        assert beta == pytest.approx(beta_oracle, abs=1e-11)
        primal = DecisionContext(BINARY, (0.5, 0.5), UtilityModel.constant([1.0, -1.0]), 1.0 / beta)
        np.testing.assert_allclose(dual_decision_probabilities(ctx, 0.0, 0.5),
                                   decision_probabilities(primal, 0.0), atol=1e-10)

    def test_unreachable(self):
        ctx = DecisionContext(BINARY, (0.5, 0.5), UtilityModel.constant([1.0, -1.0]), 1.0)
        with pytest.raises(UnreachableUtility):
            dual_decision_probabilities(ctx, 0.0, 1.5)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=5, unique=True), st.floats(0.01, 0.99))
    def test_expected_utility_hits_target(self, utils, frac):
        u = np.array(utils)
        assume(np.ptp(u) > 1e-3)
        target = u.mean() + frac * (u.max() - u.mean())
        beta = dual_multiplier(u, target)
        z = beta * u
        f = np.exp(z - z.max())
        f /= f.sum()
        assert abs(f @ u - target) < 1e-9


class TestMuStar:
    def test_uniform_prior_is_identity(self):
        assert mu_star_equivalent((0.5, 0.5), 1.3, 2.0) == 1.3

    def test_known_value(self):
        assert mu_star_equivalent((0.8, 0.2), 1.0, 2.0) == pytest.approx(1 - math.log(4), abs=1e-15)

    def test_curves_agree_on_grid(self):
        mu_star = mu_star_equivalent((0.8, 0.2), 1.0, 2.0)
        xs = np.linspace(-10, 10, 501)
        a = decision_probabilities(binary_ctx((0.8, 0.2), 1.0, 2.0), xs)
        b = decision_probabilities(binary_ctx((0.5, 0.5), mu_star, 2.0), xs)
        assert np.abs(a - b).max() < 1e-12

    def test_non_binary_rejected(self):
        with pytest.raises(NonBinaryActionSet):
            mu_star_equivalent((0.2, 0.3, 0.5), 0.0, 1.0)
