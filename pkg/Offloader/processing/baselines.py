"""
Baselines Module - Comparison policies and offline optima

Fixed policies (No-offload, Full-offload, any fixed threshold pair), the
online single-threshold learner, and brute-force offline optimizers over the
two-threshold and single-threshold families.

The offline two-threshold family extends the online grid with the closing
level theta_u = 1 (upper cell 2^b), so Full-offload and every grid-aligned
single threshold are members and dominance holds exactly.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from Offloader.errors import ConfigError, DataError, FeedbackError
from Offloader.processing.core import (
    Action,
    CostModel,
    Feedback,
    RoundRecord,
    Sample,
    Score,
    ThresholdPair,
    error_rates,
    grid_size,
    play_round,
)
from Offloader.processing.h2t2 import PSEUDO_LOSS_VARIANTS

# Configure logging
logger = logging.getLogger(__name__)

OFFLINE_METHODS = ("prefix", "naive")


def argmax_label(f_index: int, bits: int) -> int:
    """Local argmax prediction; f = 0.5 goes to class 1"""
    return 1 if 2 * f_index >= grid_size(bits) else 0


# ---------------------------------------------------------------------------
# Fixed policies
# ---------------------------------------------------------------------------

class NoOffloadPolicy:
    """Accepts the local argmax every round"""

    def __init__(self, bits: int, name: str = "no-offload"):
        self.bits = bits
        self.name = name

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def act(self, t: int, score: Score, beta: float) -> Action:
        return Action.local(argmax_label(score.index, self.bits))

    def learn(self, feedback: Feedback) -> None:
        pass


class FullOffloadPolicy:
    def __init__(self, name: str = "full-offload"):
        self.name = name

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def act(self, t: int, score: Score, beta: float) -> Action:
        return Action.offload()

    def learn(self, feedback: Feedback) -> None:
        pass


class FixedPairPolicy:
    """Replays one threshold pair, e.g. an offline optimum"""

    def __init__(self, pair: ThresholdPair, name: Optional[str] = None):
        self.pair = pair
        self.name = name or f"pair({pair.theta_l:g},{pair.theta_u:g})"

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def act(self, t: int, score: Score, beta: float) -> Action:
        if self.pair.is_ambiguous(score.index):
            return Action.offload()
        return Action.local(self.pair.predict(score.index))

    def learn(self, feedback: Feedback) -> None:
        pass


def no_offload_step(t: int, sample: Sample, costs: CostModel) -> RoundRecord:
    bits = sample.score.bits
    return play_round(NoOffloadPolicy(bits), t, sample, 0.0, costs)


def full_offload_step(t: int, sample: Sample, beta: float, costs: CostModel) -> RoundRecord:
    return play_round(FullOffloadPolicy(), t, sample, beta, costs)


# ---------------------------------------------------------------------------
# Online single-threshold learner
# ---------------------------------------------------------------------------

class SingleThresholdState:
    """
    Exponential weights over confidence thresholds j / 2^b, j = 2^(b-1)..2^b

    A threshold theta is ambiguous for a score whose confidence
    max(f, 1 - f) is below theta. Every unambiguous threshold predicts the
    argmax, so they all share the same exploration charge.

    Args:
        bits: Quantization bits
        eta: Learning rate
        epsilon: Exploration rate
        variant: Pseudo-loss variant, as for H2T2
    """

    def __init__(self, bits: int, eta: float, epsilon: float, variant: str = "unbiased"):
        if not eta > 0:
            raise ConfigError(f"learning rate must be positive, got {eta}")
        if not 0 < epsilon <= 1:
            raise ConfigError(f"exploration rate must lie in (0, 1], got {epsilon}")
        if variant not in PSEUDO_LOSS_VARIANTS:
            raise ConfigError(f"unknown pseudo-loss variant '{variant}'")
        self.bits = bits
        self.eta = float(eta)
        self.epsilon = float(epsilon)
        self.variant = variant
        n = grid_size(bits)
        self.thresholds = np.arange(n // 2, n + 1)
        self.log_weights = np.zeros(self.thresholds.shape[0])

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    def confidence_cell(self, f_index: int) -> int:
        return max(f_index, grid_size(self.bits) - f_index)

    def ambiguous_mask(self, f_index: int) -> np.ndarray:
        return self.confidence_cell(f_index) < self.thresholds

    def decide(self, f_index: int, psi: float, zeta: bool) -> Action:
        q = float(self.weights[self.ambiguous_mask(f_index)].sum())
        if psi <= q:
            return Action.offload()
        prediction = argmax_label(f_index, self.bits)
        if zeta:
            return Action.offload(explored=True, counterfactual=prediction)
        return Action.local(prediction)

    def update(self, f_index: int, offloaded: bool, explored: bool,
               rdl_label: Optional[int], beta: float, costs: CostModel) -> None:
        if explored and (not offloaded or rdl_label is None):
            raise FeedbackError("exploration estimate needs the remote label of an offloaded round")
        ambiguous = self.ambiguous_mask(f_index)
        charge = beta if (offloaded or self.variant == "unbiased") else 0.0
        losses = np.where(ambiguous, charge, 0.0)
        if explored:
            prediction = argmax_label(f_index, self.bits)
            if prediction == 1 and rdl_label == 0:
                own_phi = costs.delta_fp
            elif prediction == 0 and rdl_label == 1:
                own_phi = costs.delta_fn
            else:
                own_phi = 0.0
            losses = np.where(ambiguous, losses, own_phi / self.epsilon)
        self.log_weights = self.log_weights - self.eta * losses
        self.log_weights -= self.log_weights.max()

    def best_threshold(self) -> float:
        return int(self.thresholds[int(np.argmax(self.log_weights))]) / grid_size(self.bits)


class SingleThresholdPolicy:
    """
    Online single-threshold HI baseline

    Draws psi then zeta per round like H2T2. When draws is given, the pairs
    it yields replace the random stream (used to script individual rounds).
    """

    def __init__(self, bits: int, costs: CostModel, eta: float, epsilon: float,
                 variant: str = "unbiased", name: str = "hi-single",
                 state: Optional[SingleThresholdState] = None,
                 draws: Optional[Iterator[Tuple[float, bool]]] = None):
        self.bits = bits
        self.costs = costs
        self.eta = eta
        self.epsilon = epsilon
        self.variant = variant
        self.name = name
        self.state = state or SingleThresholdState(bits, eta, epsilon, variant)
        self._draws = draws
        self._rng = np.random.default_rng(0)
        self._pending: Optional[Tuple[bool, Action]] = None

    def reset(self, rng: np.random.Generator) -> None:
        self.state = SingleThresholdState(self.bits, self.eta, self.epsilon, self.variant)
        self._rng = rng
        self._pending = None

    def act(self, t: int, score: Score, beta: float) -> Action:
        if self._draws is not None:
            psi, zeta = next(self._draws)
        else:
            psi = self._rng.random()
            zeta = bool(self._rng.random() < self.epsilon)
        action = self.state.decide(score.index, psi, zeta)
        self._pending = (zeta, action)
        return action

    def learn(self, feedback: Feedback) -> None:
        zeta, action = self._pending
        if self.variant == "literal":
            if not feedback.offloaded:
                return
            explored = action.explored
        else:
            explored = zeta
        label = feedback.rdl_label if explored else None
        self.state.update(feedback.score.index, feedback.offloaded, explored, label,
                          feedback.beta, self.costs)


def single_threshold_hi_step(state: SingleThresholdState, t: int, sample: Sample, beta: float,
                             costs: CostModel, psi: float, zeta: bool) -> Tuple[RoundRecord, SingleThresholdState]:
    """One round of the single-threshold learner with explicit draws"""
    policy = SingleThresholdPolicy(state.bits, costs, state.eta, state.epsilon, state.variant,
                                   state=state, draws=iter([(psi, bool(zeta))]))
    record = play_round(policy, t, sample, beta, costs)
    return record, policy.state


# ---------------------------------------------------------------------------
# Offline optima
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OfflineOptimum:
    """
    Best fixed rule in hindsight

    Attributes:
        pair: Minimizing pair (the embedded pair for a single threshold)
        loss: Realized cumulative loss
        key: Identity of the (dataset, beta trace) it was computed on
        threshold: Confidence threshold, for the single-threshold family
    """

    pair: ThresholdPair
    loss: float
    key: str
    threshold: Optional[float] = None


def extended_pairs(bits: int) -> Tuple[np.ndarray, np.ndarray]:
    """(lower, upper) cells of every pair with 0 <= lower <= upper <= 2^b"""
    return np.triu_indices(grid_size(bits) + 1)


def symmetric_pair(theta: float, bits: int) -> ThresholdPair:
    """
    Two-threshold pair equivalent to the confidence rule at theta

    Offloading iff max(f, 1 - f) < theta = j / 2^b covers cells
    2^b - j + 1 .. j - 1; at j = 2^(b-1) nothing is offloaded and the split
    sits at 0.5.
    """
    n = grid_size(bits)
    j = theta * n
    if j != int(j) or not n // 2 <= j <= n:
        raise ValueError(f"confidence threshold {theta} is not a grid value in [0.5, 1]")
    j = int(j)
    if j == n // 2:
        return ThresholdPair(j, j, bits)
    return ThresholdPair(n - j + 1, j, bits)


def _require_rows(dataset, betas: np.ndarray) -> None:
    if len(dataset) == 0:
        raise DataError("offline optimum needs a non-empty dataset")
    if len(betas) != len(dataset):
        raise DataError(f"beta trace has {len(betas)} entries for {len(dataset)} samples")


def _prefix_losses(dataset, costs: CostModel, betas: np.ndarray,
                   lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """
    Exact cumulative losses from per-cell totals

    Totals are kept as Fractions so the result is the correctly rounded
    exact sum, identical to summing the per-round losses with math.fsum.
    """
    n = grid_size(dataset.bits)
    f = dataset.score_index
    ones = np.bincount(f[dataset.rdl_label == 1], minlength=n)
    zeros = np.bincount(f[dataset.rdl_label == 0], minlength=n)

    beta_cells = [Fraction(0)] * n
    for cell, beta in zip(f.tolist(), betas.tolist()):
        beta_cells[cell] += Fraction(beta)

    fn_cost, fp_cost = Fraction(costs.delta_fn), Fraction(costs.delta_fp)
    # below[k]: predict-0 cost of cells < k; offload[k]: beta of cells < k;
    # above[k]: predict-1 cost of cells >= k
    below = [Fraction(0)] * (n + 1)
    offload = [Fraction(0)] * (n + 1)
    above = [Fraction(0)] * (n + 1)
    for k in range(n):
        below[k + 1] = below[k] + fn_cost * int(ones[k])
        offload[k + 1] = offload[k] + beta_cells[k]
    for k in range(n - 1, -1, -1):
        above[k] = above[k + 1] + fp_cost * int(zeros[k])

    return np.array([
        float(below[l] + (offload[u] - offload[l]) + above[u])
        for l, u in zip(lower.tolist(), upper.tolist())
    ])


def _naive_losses(dataset, costs: CostModel, betas: np.ndarray,
                  lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Per-round losses of every pair, summed with math.fsum"""
    f = dataset.score_index
    rdl = dataset.rdl_label
    false_positive = np.where(rdl == 0, costs.delta_fp, 0.0)
    false_negative = np.where(rdl == 1, costs.delta_fn, 0.0)
    totals = []
    for l, u in zip(lower.tolist(), upper.tolist()):
        losses = np.where((l <= f) & (f < u), betas, np.where(f >= u, false_positive, false_negative))
        totals.append(math.fsum(losses.tolist()))
    return np.array(totals)


def _pick(losses: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> int:
    """Index of the minimum loss; ties go to the narrower band, then lexicographic"""
    order = np.lexsort((upper, lower, upper - lower, losses))
    return int(order[0])


def offline_best_two_threshold(dataset, costs: CostModel, betas: np.ndarray,
                               method: str = "prefix") -> OfflineOptimum:
    """
    Best fixed threshold pair in hindsight

    Args:
        dataset: Samples with remote labels
        costs: Misclassification costs
        betas: Realized offloading cost of every round
        method: 'prefix' (per-cell totals) or 'naive' (full enumeration);
            both return the same optimum

    Returns:
        The minimizing pair and its cumulative loss
    """
    if method not in OFFLINE_METHODS:
        raise ConfigError(f"unknown offline method '{method}'")
    betas = np.asarray(betas, dtype=float)
    _require_rows(dataset, betas)
    lower, upper = extended_pairs(dataset.bits)
    if method == "prefix":
        losses = _prefix_losses(dataset, costs, betas, lower, upper)
    else:
        losses = _naive_losses(dataset, costs, betas, lower, upper)
    k = _pick(losses, lower, upper)
    pair = ThresholdPair(int(lower[k]), int(upper[k]), dataset.bits)
    logger.debug(f"Offline two-threshold optimum ({method}): {pair} with loss {losses[k]:.6f}")
    return OfflineOptimum(pair=pair, loss=float(losses[k]), key=dataset.key(betas))


def single_threshold_grid(bits: int) -> List[float]:
    n = grid_size(bits)
    return [j / n for j in range(n // 2, n + 1)]


def offline_best_single_threshold(dataset, costs: CostModel, betas: np.ndarray) -> OfflineOptimum:
    """
    Best confidence threshold in hindsight (theta dagger)

    Ties go to the smallest threshold, i.e. the least offloading.
    """
    betas = np.asarray(betas, dtype=float)
    _require_rows(dataset, betas)
    thresholds = single_threshold_grid(dataset.bits)
    pairs = [symmetric_pair(theta, dataset.bits) for theta in thresholds]
    lower = np.array([p.lower for p in pairs])
    upper = np.array([p.upper for p in pairs])
    losses = _prefix_losses(dataset, costs, betas, lower, upper)
    k = int(np.argmin(losses))
    return OfflineOptimum(pair=pairs[k], loss=float(losses[k]), key=dataset.key(betas),
                          threshold=thresholds[k])


def _rule_metrics(dataset, costs: CostModel, betas: np.ndarray, pair: ThresholdPair) -> dict:
    f = dataset.score_index
    rdl = dataset.rdl_label
    offloaded = (pair.lower <= f) & (f < pair.upper)
    predictions = (f >= pair.upper).astype(int)
    fpr, fnr, no_local = error_rates(~offloaded, predictions, rdl)
    losses = np.where(
        offloaded, betas,
        np.where(predictions == 1, np.where(rdl == 0, costs.delta_fp, 0.0),
                 np.where(rdl == 1, costs.delta_fn, 0.0)),
    )
    return {
        "theta_l": pair.theta_l,
        "theta_u": pair.theta_u,
        "avg_cost": math.fsum(losses.tolist()) / len(dataset),
        "fpr": fpr,
        "fnr": fnr,
        "no_local_rounds": no_local,
        "offload_rate": float(offloaded.mean()),
    }


def threshold_frontier(dataset, costs: CostModel, betas: np.ndarray) -> pd.DataFrame:
    """
    FPR, FNR, offload rate and average cost of every fixed rule

    One row per extended two-threshold pair (family 'two') and per
    confidence threshold (family 'single').
    """
    betas = np.asarray(betas, dtype=float)
    _require_rows(dataset, betas)
    rows = []
    lower, upper = extended_pairs(dataset.bits)
    for l, u in zip(lower.tolist(), upper.tolist()):
        row = {"family": "two", "threshold": float("nan")}
        row.update(_rule_metrics(dataset, costs, betas, ThresholdPair(l, u, dataset.bits)))
        rows.append(row)
    for theta in single_threshold_grid(dataset.bits):
        row = {"family": "single", "threshold": theta}
        row.update(_rule_metrics(dataset, costs, betas, symmetric_pair(theta, dataset.bits)))
        rows.append(row)
    logger.info(f"Evaluated {len(rows)} fixed rules on {len(dataset)} samples")
    return pd.DataFrame(rows)
