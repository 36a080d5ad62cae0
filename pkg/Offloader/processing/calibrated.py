"""
Calibrated Module - Closed-form decisions for calibrated local models

When the local score equals the posterior probability of class 1, the
cost-minimizing action needs no learning: predict with a cost-weighted
threshold and offload inside a band around it. The multiclass variant
minimizes the expected cost column of a cost matrix.

The binary rules are written with plain arithmetic so they also accept
fractions.Fraction inputs for exact evaluation.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from Offloader.errors import CostModelError
from Offloader.processing.core import Action, CostModel, Decision, Score, grid_size

# Configure logging
logger = logging.getLogger(__name__)

SOFTMAX_TOLERANCE = 1e-9


@dataclass(frozen=True)
class OffloadBand:
    """Offload when lower <= f < upper; empty when no score should be offloaded"""

    lower: float
    upper: float
    empty: bool

    def contains(self, f) -> bool:
        return not self.empty and self.lower <= f < self.upper


def _require_defined(costs: CostModel) -> None:
    if costs.delta_fp == 0 and costs.delta_fn == 0:
        raise CostModelError("prediction rule undefined when both misclassification costs are 0")


def _require_positive(costs: CostModel) -> None:
    if costs.delta_fp <= 0 or costs.delta_fn <= 0:
        raise CostModelError(
            f"offload band needs positive costs, got delta_fp={costs.delta_fp}, delta_fn={costs.delta_fn}"
        )


def optimal_predictor(f, costs: CostModel) -> int:
    """
    Bayes-optimal local prediction for a calibrated score

    Args:
        f: Calibrated probability of class 1
        costs: Misclassification costs

    Returns:
        1 iff f >= delta_fp / (delta_fp + delta_fn), ties going to 1
    """
    _require_defined(costs)
    # f * (d1 + d-1) >= d1, kept multiplicative so grid values compare exactly
    return 1 if costs.delta_fn * f >= costs.delta_fp * (1 - f) else 0


def optimal_band(beta, costs: CostModel) -> OffloadBand:
    """
    Offload band [beta / delta_fn, 1 - beta / delta_fp) of a calibrated model

    The band is empty exactly when beta >= delta_fp * delta_fn / (delta_fp + delta_fn).
    """
    _require_positive(costs)
    if beta < 0:
        raise CostModelError(f"offloading cost must be non-negative, got {beta}")
    lower = beta / costs.delta_fn
    upper = 1 - beta / costs.delta_fp
    empty = beta * (costs.delta_fp + costs.delta_fn) >= costs.delta_fp * costs.delta_fn
    return OffloadBand(lower=lower, upper=upper, empty=empty)


def expected_cost(f, beta, costs: CostModel):
    """min{beta, delta_fp * (1 - f), delta_fn * f}"""
    return min(beta, costs.delta_fp * (1 - f), costs.delta_fn * f)


def calibrated_decision(f, beta, costs: CostModel) -> Decision:
    """
    The action chosen by the optimal predictor and band together

    Band membership is evaluated as beta <= delta_fn * f and
    beta < delta_fp * (1 - f), which is the band written without divisions.
    """
    _require_positive(costs)
    if beta <= costs.delta_fn * f and beta < costs.delta_fp * (1 - f):
        return Decision.OFFLOAD
    return Decision.local(optimal_predictor(f, costs))


def population_cost(law: Sequence[float], bits: int, beta: float, costs: CostModel) -> float:
    """
    Expected per-round cost of the optimal rule under a score law on the grid

    Args:
        law: Probability of each grid cell
        bits: Quantization bits
        beta: Fixed offloading cost
        costs: Misclassification costs

    Returns:
        Sum over cells of law[i] * expected_cost(i / 2^b)
    """
    n = grid_size(bits)
    weights = np.asarray(law, dtype=float)
    if weights.shape != (n,):
        raise ValueError(f"score law needs {n} cells, got {weights.shape}")
    cell_costs = [expected_cost(i / n, beta, costs) for i in range(n)]
    return float(np.dot(weights, cell_costs))


# ---------------------------------------------------------------------------
# Multiclass
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostMatrix:
    """entries[i][j] is the cost of predicting class j when the class is i"""

    entries: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.entries, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 2:
            raise CostModelError(f"cost matrix must be K x K with K >= 2, got shape {matrix.shape}")
        if np.any(np.diag(matrix) != 0):
            raise CostModelError("cost matrix diagonal must be zero")
        if np.any((matrix < 0) | (matrix > 1)):
            raise CostModelError("cost matrix entries must lie in [0, 1]")
        object.__setattr__(self, "entries", matrix)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def binary(cls, delta_fp: float, delta_fn: float) -> "CostMatrix":
        return cls(np.array([[0.0, delta_fp], [delta_fn, 0.0]]))


@dataclass(frozen=True)
class SoftmaxVector:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1:
            raise ValueError("softmax vector must be one-dimensional")
        if np.any((probs < 0) | (probs > 1)):
            raise ValueError("softmax entries must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > SOFTMAX_TOLERANCE:
            raise ValueError(f"softmax entries sum to {probs.sum()}, not 1")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def binary(cls, f: float) -> "SoftmaxVector":
        return cls(np.array([1.0 - f, f]))


@dataclass(frozen=True)
class MulticlassAction:
    """Offload, or predict the class index held in prediction"""

    offload: bool
    prediction: int

    def as_binary(self) -> Decision:
        if self.offload:
            return Decision.OFFLOAD
        return Decision.local(self.prediction)


def _column_costs(f: SoftmaxVector, c: CostMatrix) -> np.ndarray:
    if f.probs.shape[0] != c.k:
        raise ValueError(f"softmax has {f.probs.shape[0]} classes, cost matrix has {c.k}")
    return f.probs @ c.entries


def multiclass_predict(f: SoftmaxVector, c: CostMatrix) -> int:
    """argmin_k f^T C_k, ties to the smallest class index"""
    return int(np.argmin(_column_costs(f, c)))


def multiclass_decide(f: SoftmaxVector, c: CostMatrix, beta: float) -> Tuple["MulticlassAction", float]:
    """
    Offload iff the cheapest local prediction still costs more than beta

    Returns:
        The action and its expected cost min{beta, min_k f^T C_k}
    """
    column_costs = _column_costs(f, c)
    k = int(np.argmin(column_costs))
    best = float(column_costs[k])
    if best > beta:
        return MulticlassAction(offload=True, prediction=k), beta
    return MulticlassAction(offload=False, prediction=k), best


class CalibratedPolicy:
    """Plays the closed-form rule online, trusting the score as a posterior"""

    def __init__(self, costs: CostModel, name: str = "calibrated"):
        self.costs = costs
        self.name = name

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def act(self, t: int, score: Score, beta: float) -> Action:
        decision = calibrated_decision(score.value, beta, self.costs)
        if decision is Decision.OFFLOAD:
            return Action.offload()
        return Action.local(1 if decision is Decision.LOCAL1 else 0)

    def learn(self, feedback) -> None:
        pass
