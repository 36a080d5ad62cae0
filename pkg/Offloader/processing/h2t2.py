"""
H2T2 Module - Exponential weights over two-threshold experts

Each expert is a threshold pair (theta_l <= theta_u) on the score grid. The
policy samples an expert implicitly through the normalized mass of the three
score regions, explores unambiguous samples with probability epsilon, and
updates every expert with an importance-weighted pseudo-loss.

Weights are kept in log space and shifted so the largest log weight is 0,
which keeps them finite for any horizon and learning rate.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from Offloader.errors import ConfigError, FeedbackError
from Offloader.processing.core import (
    Action,
    CostModel,
    Feedback,
    Score,
    ThresholdPair,
    grid_size,
    pair_losses,
)

# Configure logging
logger = logging.getLogger(__name__)

PSEUDO_LOSS_VARIANTS = ("unbiased", "literal")


def expert_count(bits: int) -> int:
    """|Theta| = 2^(b-1) * (2^b + 1)"""
    n = grid_size(bits)
    return n * (n + 1) // 2


@dataclass(frozen=True)
class RegionMasses:
    """Normalized weight of experts that offload (q), predict 1 (p), predict 0 (r)"""

    q: float
    p: float
    r: float


class ExpertGrid:
    """
    Weights over all threshold pairs of a b-bit grid

    Args:
        bits: Quantization bits
        eta: Learning rate
        epsilon: Exploration rate
    """

    def __init__(self, bits: int, eta: float, epsilon: float):
        if bits < 1:
            raise ConfigError(f"bits must be >= 1, got {bits}")
        if not eta > 0:
            raise ConfigError(f"learning rate must be positive, got {eta}")
        if not 0 < epsilon <= 1:
            raise ConfigError(f"exploration rate must lie in (0, 1], got {epsilon}")
        self.bits = bits
        self.eta = float(eta)
        self.epsilon = float(epsilon)
        self.cells = grid_size(bits)
        # lexicographic (lower, upper) order
        self.lower, self.upper = np.triu_indices(self.cells)
        self.log_weights = np.zeros(self.lower.shape[0])

    def __len__(self) -> int:
        return self.lower.shape[0]

    @property
    def pairs(self) -> List[ThresholdPair]:
        return [ThresholdPair(int(l), int(u), self.bits) for l, u in zip(self.lower, self.upper)]

    @property
    def weights(self) -> np.ndarray:
        """Normalized weights (they sum to 1)"""
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    def weight_matrix(self) -> np.ndarray:
        matrix = np.zeros((self.cells, self.cells))
        matrix[self.lower, self.upper] = self.weights
        return matrix

    def region_masses(self, f_index: int) -> RegionMasses:
        """
        Region masses from 2-D prefix sums over the (lower, upper) triangle

        prefix[a, b] holds the weight of experts with lower <= a and upper <= b,
        so predict-1 experts (upper <= f) sum to prefix[f, f] and experts with
        lower <= f sum to prefix[f, -1].
        """
        prefix = self.weight_matrix().cumsum(axis=0).cumsum(axis=1)
        total = prefix[-1, -1]
        predict_one = prefix[f_index, f_index]
        lower_at_most_f = prefix[f_index, -1]
        q = (lower_at_most_f - predict_one) / total
        p = predict_one / total
        return RegionMasses(q=q, p=p, r=max(0.0, 1.0 - p - q))

    def ambiguous_mask(self, f_index: int) -> np.ndarray:
        return (self.lower <= f_index) & (f_index < self.upper)

    def update(self, losses: np.ndarray) -> None:
        """Multiply every weight by exp(-eta * loss)"""
        self.log_weights = self.log_weights - self.eta * np.asarray(losses, dtype=float)
        self.log_weights -= self.log_weights.max()

    def best_pair(self) -> ThresholdPair:
        k = int(np.argmax(self.log_weights))
        return ThresholdPair(int(self.lower[k]), int(self.upper[k]), self.bits)

    def mean_thresholds(self) -> Tuple[float, float]:
        """Weight-averaged (theta_l, theta_u)"""
        w = self.weights
        return (float(np.dot(w, self.lower)) / self.cells, float(np.dot(w, self.upper)) / self.cells)


def new_policy(bits: int, eta: float, epsilon: float) -> ExpertGrid:
    """Uniform weights over every valid threshold pair"""
    return ExpertGrid(bits, eta, epsilon)


def region_masses(state: ExpertGrid, f: Score) -> RegionMasses:
    return state.region_masses(f.index)


def decide_from_masses(masses: RegionMasses, psi: float, zeta: bool) -> Action:
    """
    Turn region masses and the round's two draws into an action

    psi in [0, q] lands on an offloading expert, (q, q + p] on a predict-1
    expert, the rest on a predict-0 expert. zeta forces an offload; it counts
    as exploration only when the drawn expert was unambiguous.
    """
    if psi <= masses.q:
        return Action.offload()
    prediction = 1 if psi <= masses.q + masses.p else 0
    if zeta:
        return Action.offload(explored=True, counterfactual=prediction)
    return Action.local(prediction)


def decide(state: ExpertGrid, f: Score, psi: float, zeta: bool) -> Action:
    return decide_from_masses(state.region_masses(f.index), psi, zeta)


def pseudo_loss(pair: ThresholdPair, f: Score, offloaded: bool, explored: bool,
                phi: Optional[float], beta: float, epsilon: float,
                variant: str = "unbiased") -> float:
    """
    Importance-weighted loss estimate of one expert

    Args:
        pair: The expert
        f: Round score
        offloaded: O_t
        explored: Exploration indicator feeding the estimator
        phi: Misclassification cost of this expert's own prediction
            (needed only when explored)
        beta: Offloading cost of the round
        epsilon: Exploration rate
        variant: 'unbiased' charges beta to ambiguous experts on every round,
            'literal' only on offloaded rounds

    Returns:
        beta for an ambiguous expert, phi / epsilon for an unambiguous expert
        on an exploration round, 0 otherwise
    """
    if variant not in PSEUDO_LOSS_VARIANTS:
        raise ConfigError(f"unknown pseudo-loss variant '{variant}'")
    if explored and not offloaded:
        raise FeedbackError("exploration indicator set on a round that was not offloaded")
    if pair.is_ambiguous(f.index):
        return beta if (offloaded or variant == "unbiased") else 0.0
    if explored:
        if phi is None:
            raise FeedbackError("phi is required on exploration rounds")
        return phi / epsilon
    return 0.0


def pseudo_losses(state: ExpertGrid, f_index: int, offloaded: bool, explored: bool,
                  rdl_label: Optional[int], beta: float, costs: CostModel,
                  variant: str = "unbiased") -> np.ndarray:
    """pseudo_loss for every expert of the grid at once"""
    if explored and (not offloaded or rdl_label is None):
        raise FeedbackError("exploration estimate needs the remote label of an offloaded round")
    ambiguous = state.ambiguous_mask(f_index)
    charge = beta if (offloaded or variant == "unbiased") else 0.0
    losses = np.where(ambiguous, charge, 0.0)
    if explored:
        # off the ambiguous band pair_losses is the expert's own phi
        own_phi = pair_losses(state.lower, state.upper, f_index, rdl_label, beta, costs)
        losses = np.where(ambiguous, losses, own_phi / state.epsilon)
    return losses


def update(state: ExpertGrid, f: Score, offloaded: bool, explored: bool,
           rdl_label: Optional[int], beta: float, costs: CostModel,
           variant: str = "unbiased") -> ExpertGrid:
    """Apply one round's pseudo-losses to the grid in place and return it"""
    state.update(pseudo_losses(state, f.index, offloaded, explored, rdl_label, beta, costs, variant))
    return state


def tuned_params(bits: int, horizon: int, beta_cap: float = 1.0) -> Tuple[float, float]:
    """
    Regret-bound minimizing exploration and learning rates

    Returns:
        (epsilon*, eta*) with epsilon* = (ln|Theta| / (2 beta^2 T))^(1/3) clamped
        to (0, 1] and eta* = sqrt(2 epsilon* ln|Theta| / T)
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if beta_cap <= 0:
        raise ConfigError(f"beta cap must be positive, got {beta_cap}")
    log_experts = math.log(expert_count(bits))
    epsilon = (log_experts / (2.0 * beta_cap ** 2 * horizon)) ** (1.0 / 3.0)
    if epsilon > 1.0:
        logger.warning(f"Tuned exploration rate {epsilon:.4f} clamped to 1 (horizon {horizon})")
        epsilon = 1.0
    eta = math.sqrt(2.0 * epsilon * log_experts / horizon)
    return epsilon, eta


def regret_bound(eta: float, epsilon: float, horizon: int, beta_cap: float, n_experts: int) -> float:
    """(epsilon * beta + eta / (2 epsilon)) * T + ln|Theta| / eta"""
    return (epsilon * beta_cap + eta / (2.0 * epsilon)) * horizon + math.log(n_experts) / eta


class H2T2Policy:
    """
    The online two-threshold policy

    Every round draws psi then zeta from the policy stream, in that order,
    so a trace is reproducible from its seed.
    """

    def __init__(self, bits: int, costs: CostModel, eta: float, epsilon: float,
                 variant: str = "unbiased", name: str = "h2t2"):
        if variant not in PSEUDO_LOSS_VARIANTS:
            raise ConfigError(f"unknown pseudo-loss variant '{variant}'")
        self.bits = bits
        self.costs = costs
        self.eta = eta
        self.epsilon = epsilon
        self.variant = variant
        self.name = name
        self.grid = new_policy(bits, eta, epsilon)
        self._rng = np.random.default_rng(0)
        self._pending: Optional[Tuple[bool, Action]] = None

    def reset(self, rng: np.random.Generator) -> None:
        self.grid = new_policy(self.bits, self.eta, self.epsilon)
        self._rng = rng
        self._pending = None

    def act(self, t: int, score: Score, beta: float) -> Action:
        psi = self._rng.random()
        zeta = bool(self._rng.random() < self.epsilon)
        action = decide(self.grid, score, psi, zeta)
        self._pending = (zeta, action)
        return action

    def learn(self, feedback: Feedback) -> None:
        zeta, action = self._pending
        if self.variant == "literal":
            if not feedback.offloaded:
                return
            explored = action.explored
        else:
            # zeta alone drives the estimate, whichever expert was drawn
            explored = zeta
        label = feedback.rdl_label if explored else None
        update(self.grid, feedback.score, feedback.offloaded, explored, label,
               feedback.beta, self.costs, self.variant)
