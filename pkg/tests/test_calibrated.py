"""
Tests for the closed-form calibrated rules, binary and multiclass.

Grid checks run on fractions.Fraction inputs so boundary cases compare
exactly.
"""

from fractions import Fraction

import numpy as np
import pytest

from Offloader.errors import CostModelError
from Offloader.processing.calibrated import (
    CalibratedPolicy,
    CostMatrix,
    SoftmaxVector,
    calibrated_decision,
    expected_cost,
    multiclass_decide,
    multiclass_predict,
    optimal_band,
    optimal_predictor,
    population_cost,
)
from Offloader.processing.core import CostModel, Decision, Score
from Offloader.data.generate import uniform_law


def exact_costs(delta_fp, delta_fn):
    return CostModel(delta_fp=Fraction(delta_fp), delta_fn=Fraction(delta_fn))


def decision_cost(decision, f, beta, costs):
    if decision is Decision.OFFLOAD:
        return beta
    if decision is Decision.LOCAL1:
        return costs.delta_fp * (1 - f)
    return costs.delta_fn * f


class TestOptimalPredictor:
    def test_examples(self, costs):
        assert optimal_predictor(0.5, costs) == 1
        assert optimal_predictor(0.5, CostModel(0.5, 0.5)) == 1
        assert optimal_predictor(0.3, costs) == 0

    def test_undefined_without_costs(self):
        with pytest.raises(CostModelError):
            optimal_predictor(0.5, CostModel(0.0, 0.0))


class TestOptimalBand:
    """The band [beta / delta_fn, 1 - beta / delta_fp) and its emptiness."""

    def test_reference_point(self, costs):
        band = optimal_band(0.3, costs)
        assert band.lower == pytest.approx(0.3)
        assert band.upper == pytest.approx(1 - 0.3 / 0.7)
        assert not band.empty

    def test_symmetric_half_is_empty(self):
        assert optimal_band(0.5, CostModel(1.0, 1.0)).empty

    def test_empty_exactly_at_harmonic_cost(self):
        costs = exact_costs(Fraction(7, 10), 1)
        assert optimal_band(Fraction(7, 17), costs).empty
        assert not optimal_band(Fraction(7, 17) - Fraction(1, 1000), costs).empty

    def test_needs_positive_costs(self):
        with pytest.raises(CostModelError):
            optimal_band(0.1, CostModel(0.0, 1.0))

    def test_expected_cost_examples(self, costs):
        assert expected_cost(0.5, 0.3, costs) == pytest.approx(0.3)
        assert expected_cost(0.1, 0.3, costs) == pytest.approx(0.1)
        assert expected_cost(0.9, 0.3, costs) == pytest.approx(0.07)


class TestCalibratedOptimality:
    """The chosen action attains the minimum expected cost on a dense grid."""

    def test_exact_mesh(self):
        scores = [Fraction(i, 16) for i in range(16)]
        betas = [Fraction(k, 25) for k in range(26)]
        deltas = [Fraction(k, 5) for k in range(1, 6)]
        checked = 0
        for delta_fp in deltas:
            for delta_fn in deltas:
                costs = CostModel(delta_fp=delta_fp, delta_fn=delta_fn)
                for beta in betas:
                    band = optimal_band(beta, costs)
                    assert band.empty == (beta * (delta_fp + delta_fn) >= delta_fp * delta_fn)
                    for f in scores:
                        decision = calibrated_decision(f, beta, costs)
                        assert decision_cost(decision, f, beta, costs) == expected_cost(f, beta, costs)
                        assert band.contains(f) == (decision is Decision.OFFLOAD)
                        if band.empty:
                            assert decision is not Decision.OFFLOAD
                        checked += 1
        assert checked >= 10_000

    def test_symmetric_costs_reduce_to_confidence_rule(self):
        delta = Fraction(4, 5)
        costs = CostModel(delta_fp=delta, delta_fn=delta)
        for beta in [Fraction(k, 20) for k in range(9)]:
            for f in [Fraction(i, 64) for i in range(64)]:
                if 1 - f == beta / delta:
                    continue
                offload = calibrated_decision(f, beta, costs) is Decision.OFFLOAD
                assert offload == (min(f, 1 - f) >= beta / delta)

    def test_population_cost_reference_point(self, costs):
        assert population_cost(uniform_law(4), 4, 0.3, costs) == pytest.approx(0.190234375)

    def test_policy_plays_the_rule(self, costs):
        policy = CalibratedPolicy(costs)
        assert policy.act(0, Score(8, 4), 0.3).offloaded
        assert policy.act(0, Score(15, 4), 0.3).decision is Decision.LOCAL1
        assert policy.act(0, Score(1, 4), 0.3).decision is Decision.LOCAL0


class TestMulticlass:
    """argmin over cost-matrix columns with an offload option."""

    def test_one_hot_predicts_its_class(self, rng):
        matrix = rng.uniform(0.1, 1.0, size=(3, 3))
        np.fill_diagonal(matrix, 0.0)
        c = CostMatrix(matrix)
        for i in range(3):
            onehot = SoftmaxVector(np.eye(3)[i])
            assert multiclass_predict(onehot, c) == i
            action, cost = multiclass_decide(onehot, c, 0.2)
            assert not action.offload
            assert action.prediction == i
            assert cost == 0.0

    def test_never_offloads_above_largest_cost(self, rng):
        matrix = rng.uniform(0.0, 1.0, size=(4, 4))
        np.fill_diagonal(matrix, 0.0)
        c = CostMatrix(matrix)
        beta = float(matrix.max()) + 1e-12
        for probs in rng.dirichlet(np.ones(4), size=200):
            action, _ = multiclass_decide(SoftmaxVector(probs), c, beta)
            assert not action.offload

    def test_brute_force_three_classes(self, rng):
        matrix = rng.uniform(0.0, 1.0, size=(3, 3))
        np.fill_diagonal(matrix, 0.0)
        c = CostMatrix(matrix)
        for probs in rng.dirichlet(np.ones(3), size=200):
            beta = float(rng.random())
            action, cost = multiclass_decide(SoftmaxVector(probs), c, beta)
            candidates = [beta] + [float(probs @ matrix[:, k]) for k in range(3)]
            assert cost == pytest.approx(min(candidates))

    def test_binary_reduction(self):
        """K = 2 with C = [[0, delta_fp], [delta_fn, 0]] matches the binary rule."""
        scores = [i / 256 for i in range(256)]
        betas = [0.05 * k for k in range(10)]
        deltas = [0.1 * k for k in range(1, 11)]
        for delta_fp in deltas:
            costs = CostModel(delta_fp=delta_fp, delta_fn=1.0)
            c = CostMatrix.binary(delta_fp, 1.0)
            for beta in betas:
                for f in scores:
                    action, cost = multiclass_decide(SoftmaxVector.binary(f), c, beta)
                    binary = calibrated_decision(f, beta, costs)
                    predict_zero_cost = 1.0 * f
                    predict_one_cost = delta_fp * (1 - f)
                    assert cost == min(beta, predict_zero_cost, predict_one_cost)
                    tie = beta in (predict_zero_cost, predict_one_cost) or predict_zero_cost == predict_one_cost
                    if not tie:
                        assert action.as_binary() is binary

    def test_matrix_validation(self):
        with pytest.raises(CostModelError):
            CostMatrix(np.array([[0.1, 1.0], [1.0, 0.0]]))
        with pytest.raises(CostModelError):
            CostMatrix(np.zeros((1, 1)))
        with pytest.raises(ValueError):
            SoftmaxVector(np.array([0.5, 0.6]))
