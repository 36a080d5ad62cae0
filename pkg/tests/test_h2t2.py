"""
Tests for the online two-threshold learner: expert grid, region masses,
decisions, pseudo-losses, rate tuning and the weight updates of a full run.
"""

import math

import numpy as np
import pytest

from Offloader.data.generate import MixtureSpec, gen_mixture
from Offloader.errors import ConfigError, FeedbackError
from Offloader.processing.core import (
    CostModel,
    Decision,
    Feedback,
    FixedBeta,
    Score,
    ThresholdPair,
    pair_losses,
    rng_stream,
)
from Offloader.processing.h2t2 import (
    ExpertGrid,
    H2T2Policy,
    RegionMasses,
    decide,
    decide_from_masses,
    expert_count,
    new_policy,
    pseudo_loss,
    pseudo_losses,
    region_masses,
    regret_bound,
    tuned_params,
    update,
)
from Offloader.processing.harness import run


def brute_force_masses(grid, f):
    w = grid.weights
    q = w[(grid.lower <= f) & (f < grid.upper)].sum()
    p = w[grid.upper <= f].sum()
    r = w[grid.lower > f].sum()
    return q, p, r


class TestExpertGrid:
    """Every pair 0 <= lower <= upper < 2^b is an expert."""

    @pytest.mark.parametrize("bits", [1, 2, 3, 4, 5, 6])
    def test_count(self, bits):
        n = 2 ** bits
        enumerated = sum(1 for l in range(n) for u in range(l, n))
        assert expert_count(bits) == enumerated == 2 ** (bits - 1) * (2 ** bits + 1)
        assert len(new_policy(bits, 1.0, 0.1)) == enumerated

    def test_reference_count(self):
        assert expert_count(4) == 136

    def test_one_bit_pairs(self):
        grid = new_policy(1, 1.0, 0.1)
        values = [(p.theta_l, p.theta_u) for p in grid.pairs]
        assert values == [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5)]

    def test_uniform_start(self):
        grid = new_policy(4, 1.0, 0.1)
        np.testing.assert_allclose(grid.weights, np.full(136, 1 / 136))

    def test_rejects_bad_rates(self):
        with pytest.raises(ConfigError):
            ExpertGrid(4, 0.0, 0.1)
        with pytest.raises(ConfigError):
            ExpertGrid(4, 1.0, 0.0)
        with pytest.raises(ConfigError):
            ExpertGrid(4, 1.0, 1.5)


class TestRegionMasses:
    """q, p and r partition the weight at every score."""

    def test_one_bit_thirds(self):
        masses = region_masses(new_policy(1, 1.0, 0.1), Score(0, 1))
        assert masses.q == pytest.approx(1 / 3)
        assert masses.p == pytest.approx(1 / 3)
        assert masses.r == pytest.approx(1 / 3)

    def test_top_cell_has_no_predict_zero_mass(self):
        masses = region_masses(new_policy(3, 1.0, 0.1), Score(7, 3))
        assert abs(masses.r) < 1e-12

    def test_concentrated_weight(self):
        grid = new_policy(3, 1.0, 0.1)
        target = grid.pairs.index(ThresholdPair(2, 6, 3))
        grid.log_weights = np.full(len(grid), -1000.0)
        grid.log_weights[target] = 0.0
        assert grid.region_masses(4).q == pytest.approx(1.0, abs=1e-9)
        assert grid.region_masses(6).p == pytest.approx(1.0, abs=1e-9)
        assert grid.region_masses(1).r == pytest.approx(1.0, abs=1e-9)

    def test_matches_brute_force(self, rng):
        grid = new_policy(4, 1.0, 0.1)
        grid.log_weights = rng.normal(0.0, 3.0, size=len(grid))
        for f in range(16):
            masses = grid.region_masses(f)
            q, p, r = brute_force_masses(grid, f)
            np.testing.assert_allclose([masses.q, masses.p, masses.r], [q, p, r], atol=1e-12)
            assert min(masses.q, masses.p, masses.r) >= -1e-15
            assert masses.q + masses.p + masses.r == pytest.approx(1.0)


class TestDecide:
    def test_offload_region(self):
        action = decide_from_masses(RegionMasses(q=1.0, p=0.0, r=0.0), psi=0.7, zeta=True)
        assert action.decision is Decision.OFFLOAD
        assert not action.explored

    def test_local_prediction(self):
        action = decide_from_masses(RegionMasses(q=0.0, p=1.0, r=0.0), psi=0.5, zeta=False)
        assert action.decision is Decision.LOCAL1

    def test_exploration_keeps_counterfactual(self):
        action = decide_from_masses(RegionMasses(q=0.2, p=0.3, r=0.5), psi=0.5, zeta=True)
        assert action.decision is Decision.OFFLOAD
        assert action.explored
        assert action.local_pred == 1

    def test_predict_zero_region(self):
        action = decide_from_masses(RegionMasses(q=0.2, p=0.3, r=0.5), psi=0.9, zeta=False)
        assert action.decision is Decision.LOCAL0

    def test_policy_draws_psi_then_zeta(self):
        costs = CostModel(0.7, 1.0)
        policy = H2T2Policy(3, costs, eta=1.0, epsilon=0.3)
        policy.reset(rng_stream(11, 1))
        mirror = rng_stream(11, 1)
        grid = new_policy(3, 1.0, 0.3)
        for t in range(20):
            score = Score(t % 8, 3)
            action = policy.act(t, score, 0.3)
            psi = mirror.random()
            zeta = bool(mirror.random() < 0.3)
            assert action == decide(grid, score, psi, zeta)


class TestPseudoLoss:
    """Importance-weighted loss estimates."""

    def test_ambiguous_pays_beta(self):
        pair = ThresholdPair.from_values(0.25, 0.75, 2)
        assert pseudo_loss(pair, Score(2, 2), True, False, None, 0.4, 0.1) == 0.4

    def test_explored_unambiguous(self):
        pair = ThresholdPair.from_values(0.25, 0.5, 2)
        value = pseudo_loss(pair, Score(3, 2), True, True, 0.7, 0.3, 0.1)
        assert value == pytest.approx(7.0)

    def test_unexplored_unambiguous_is_free(self):
        pair = ThresholdPair.from_values(0.25, 0.5, 2)
        assert pseudo_loss(pair, Score(3, 2), True, False, None, 0.3, 0.1) == 0.0

    def test_literal_variant_skips_local_rounds(self):
        pair = ThresholdPair.from_values(0.25, 0.75, 2)
        assert pseudo_loss(pair, Score(2, 2), False, False, None, 0.3, 0.1, "literal") == 0.0
        assert pseudo_loss(pair, Score(2, 2), False, False, None, 0.3, 0.1, "unbiased") == 0.3

    def test_exploration_requires_offload(self):
        pair = ThresholdPair.from_values(0.25, 0.5, 2)
        with pytest.raises(FeedbackError):
            pseudo_loss(pair, Score(3, 2), False, True, 0.7, 0.3, 0.1)
        with pytest.raises(FeedbackError):
            pseudo_loss(pair, Score(3, 2), True, True, None, 0.3, 0.1)

    def test_vectorized_matches_scalar(self, costs):
        grid = new_policy(3, 1.0, 0.2)
        for f in range(8):
            for label in (0, 1):
                for offloaded, explored in ((True, True), (True, False), (False, False)):
                    vector = pseudo_losses(grid, f, offloaded, explored, label if explored else None,
                                           0.3, costs, "literal")
                    scalar = []
                    for pair in grid.pairs:
                        own = 1 if f >= pair.upper else 0
                        phi_value = costs.delta_fp if (own, label) == (1, 0) else (
                            costs.delta_fn if (own, label) == (0, 1) else 0.0)
                        scalar.append(pseudo_loss(pair, Score(f, 3), offloaded, explored, phi_value,
                                                  0.3, 0.2, "literal"))
                    np.testing.assert_allclose(vector, scalar)

    def test_unbiased_in_expectation(self, costs):
        """E[pseudo-loss] equals the true loss of every expert."""
        rng = np.random.default_rng(42)
        epsilon = 0.1
        draws = 100_000
        grid = new_policy(3, 1.0, epsilon)
        explore_fraction = float(np.mean(rng.random(draws) < epsilon))
        for f in (0, 2, 4, 7):
            for label in (0, 1):
                explored = pseudo_losses(grid, f, True, True, label, 0.3, costs)
                quiet = pseudo_losses(grid, f, False, False, None, 0.3, costs)
                np.testing.assert_array_equal(quiet, pseudo_losses(grid, f, True, False, None, 0.3, costs))
                mean = explore_fraction * explored + (1 - explore_fraction) * quiet
                truth = pair_losses(grid.lower, grid.upper, f, label, 0.3, costs)
                sigma = truth / epsilon * math.sqrt(epsilon * (1 - epsilon)) / math.sqrt(draws)
                assert np.all(np.abs(mean - truth) <= 4 * sigma + 1e-12)


class TestUpdate:
    def test_zero_losses_keep_weights(self):
        grid = new_policy(2, 1.0, 0.1)
        before = grid.weights.copy()
        grid.update(np.zeros(len(grid)))
        np.testing.assert_allclose(grid.weights, before)

    def test_single_expert_penalty(self):
        grid = new_policy(2, 1.0, 0.1)
        losses = np.zeros(len(grid))
        losses[3] = 1.0
        grid.update(losses)
        w = grid.weights
        assert w[3] / w[0] == pytest.approx(math.exp(-1.0))

    def test_updates_compose(self, rng):
        a, b = rng.random(36), rng.random(36)
        first, second, joint = (new_policy(3, 0.5, 0.1) for _ in range(3))
        first.update(a)
        first.update(b)
        second.update(b)
        second.update(a)
        joint.update(a + b)
        np.testing.assert_allclose(first.weights, joint.weights, rtol=1e-12)
        np.testing.assert_allclose(second.weights, joint.weights, rtol=1e-12)

    def test_large_learning_rate_stays_finite(self, costs):
        grid = new_policy(4, 1000.0, 0.5)
        rng = np.random.default_rng(42)
        for _ in range(1000):
            f = int(rng.integers(0, 16))
            update(grid, Score(f, 4), True, True, int(rng.integers(0, 2)), 0.3, costs)
        assert np.all(np.isfinite(grid.log_weights))
        assert grid.weights.sum() == pytest.approx(1.0)

    def test_literal_variant_ignores_local_rounds(self, costs):
        for variant, changes in (("literal", False), ("unbiased", True)):
            policy = H2T2Policy(3, costs, eta=1.0, epsilon=1e-9, variant=variant)
            policy.reset(np.random.default_rng(42))
            target = policy.grid.pairs.index(ThresholdPair(0, 2, 3))
            policy.grid.log_weights = np.full(len(policy.grid), -1000.0)
            policy.grid.log_weights[target] = 0.0
            before = policy.grid.log_weights.copy()

            action = policy.act(0, Score(5, 3), 0.3)
            assert action.decision is Decision.LOCAL1
            policy.learn(Feedback(0, Score(5, 3), 0.3, offloaded=False, label=None))
            assert (not np.array_equal(before, policy.grid.log_weights)) == changes


class TestTunedRates:
    """Rates minimizing the regret bound."""

    def test_reference_values(self):
        epsilon, eta = tuned_params(4, 10_000)
        assert epsilon == pytest.approx(0.0626, rel=1e-2)
        assert eta == pytest.approx(0.00784, rel=1e-2)

    def test_reference_bound(self):
        epsilon, eta = tuned_params(4, 10_000)
        assert regret_bound(eta, epsilon, 10_000, 1.0, 136) == pytest.approx(1879, rel=1e-3)

    def test_monotone_in_horizon_and_cap(self):
        e1, _ = tuned_params(4, 1000)
        e2, _ = tuned_params(4, 10_000)
        e3, _ = tuned_params(4, 10_000, beta_cap=0.5)
        assert e2 < e1
        assert e3 > e2

    def test_clamped_at_one(self):
        epsilon, eta = tuned_params(4, 1)
        assert epsilon == 1.0
        assert eta == pytest.approx(math.sqrt(2 * math.log(136)))

    def test_bound_grows_as_two_thirds_power(self):
        short = regret_bound(*reversed(tuned_params(4, 10_000)), 10_000, 1.0, 136)
        long = regret_bound(*reversed(tuned_params(4, 80_000)), 80_000, 1.0, 136)
        assert long / short == pytest.approx(4.0, rel=1e-9)


class TestLearning:
    """Whole runs of the policy."""

    @pytest.fixture
    def stream(self):
        return gen_mixture(MixtureSpec(), 200, 3, seed=5)

    def test_full_exploration_is_plain_exponential_weights(self, stream, costs):
        for seed in range(5):
            policy = H2T2Policy(3, costs, eta=0.5, epsilon=1.0)
            run(policy, stream, costs, seed)

            weights = np.full(expert_count(3), 1 / expert_count(3))
            lower, upper = np.triu_indices(8)
            for sample in stream:
                losses = pair_losses(lower, upper, sample.score.index, sample.rdl_label, 0.3, costs)
                weights = weights * np.exp(-0.5 * losses)
                weights = weights / weights.sum()
            np.testing.assert_allclose(policy.grid.weights, weights, rtol=1e-9)

    def test_converges_to_best_grid_pair(self, costs):
        stream = gen_mixture(MixtureSpec(), 2000, 3, seed=9)
        policy = H2T2Policy(3, costs, eta=1.0, epsilon=1.0)
        run(policy, stream, costs, seed=0)
        lower, upper = np.triu_indices(8)
        totals = np.zeros(len(lower))
        for sample in stream:
            totals += pair_losses(lower, upper, sample.score.index, sample.rdl_label, 0.3, costs)
        best = policy.grid.best_pair()
        k = policy.grid.pairs.index(best)
        assert totals[k] <= totals.min() + 1e-6

    def test_deterministic_given_seed(self, stream, costs):
        policy = H2T2Policy(3, costs, eta=1.0, epsilon=0.2)
        first = run(policy, stream, costs, seed=3).to_frame()
        second = run(policy, stream, costs, seed=3).to_frame()
        assert first.equals(second)
        third = run(policy, stream, costs, seed=4).to_frame()
        assert not first["decision"].equals(third["decision"])

    def test_mean_thresholds_are_ordered(self, stream, costs):
        policy = H2T2Policy(3, costs, eta=1.0, epsilon=0.2)
        run(policy, stream, costs, seed=1)
        theta_l, theta_u = policy.grid.mean_thresholds()
        assert 0.0 <= theta_l <= theta_u < 1.0

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            H2T2Policy(3, CostModel(0.7, 1.0, FixedBeta(0.3)), 1.0, 0.1, variant="biased")
