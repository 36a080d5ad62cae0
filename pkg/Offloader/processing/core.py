"""
Core Module - Domain types and loss accounting for hierarchical inference

Scores live on the b-bit grid {i / 2^b : i = 0..2^b - 1}. Every policy in the
toolkit is charged through the phi / round_loss functions defined here, and
every policy is driven through play_round so that the remote label is only
ever visible on offloaded rounds.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Optional, Protocol, Tuple, Union

import numpy as np

from Offloader.errors import CostModelError, DataError, FeedbackError

# Configure logging
logger = logging.getLogger(__name__)

# Keys of the independent random streams derived from one run seed
BETA_STREAM = 0
POLICY_STREAM = 1
DATA_STREAM = 2


def rng_stream(seed: int, key: int) -> np.random.Generator:
    """Independent, reproducible generator for one purpose within a run"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def grid_size(bits: int) -> int:
    """Number of score cells for a b-bit quantization"""
    if bits < 1:
        raise ValueError(f"bits must be a positive integer, got {bits}")
    return 1 << bits


def score_index(x: float, bits: int) -> int:
    """
    Grid cell of a raw score

    Args:
        x: Raw score in [0, 1]
        bits: Quantization bits

    Returns:
        floor(x * 2^b), with x = 1 mapped to the top cell
    """
    n = grid_size(bits)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"score {x} outside [0, 1]")
    return min(int(math.floor(x * n)), n - 1)


def quantize(x: float, bits: int) -> float:
    """Quantize a raw score onto the b-bit grid"""
    return score_index(x, bits) / grid_size(bits)


def quantize_indices(values: np.ndarray, bits: int) -> np.ndarray:
    """Vectorized score_index; values must already be checked against [0, 1]"""
    n = grid_size(bits)
    return np.minimum(np.floor(np.asarray(values, dtype=float) * n), n - 1).astype(np.int64)


class Label(IntEnum):
    """Binary class; ONE is the class or event of interest"""

    ZERO = 0
    ONE = 1


class Decision(str, Enum):
    """What happens to a sample in one round"""

    LOCAL0 = "local0"
    LOCAL1 = "local1"
    OFFLOAD = "offload"

    @classmethod
    def local(cls, prediction: int) -> "Decision":
        return cls.LOCAL1 if prediction == 1 else cls.LOCAL0


@dataclass(frozen=True)
class Score:
    """A quantized local-model score f_t, stored as its grid cell"""

    index: int
    bits: int

    def __post_init__(self):
        n = grid_size(self.bits)
        if not 0 <= self.index < n:
            raise ValueError(f"score cell {self.index} outside grid of {n} cells")

    @classmethod
    def from_value(cls, x: float, bits: int) -> "Score":
        return cls(score_index(x, bits), bits)

    @property
    def value(self) -> float:
        return self.index / grid_size(self.bits)


# ---------------------------------------------------------------------------
# Offloading cost sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedBeta:
    beta: float

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.full(n, float(self.beta))


@dataclass(frozen=True)
class UniformBeta:
    low: float
    high: float

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=n)


@dataclass(frozen=True)
class TraceBeta:
    """Replays a recorded cost sequence, repeating it when the run is longer"""

    values: Tuple[float, ...]

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if not self.values:
            raise CostModelError("empty beta trace")
        return np.resize(np.asarray(self.values, dtype=float), n)


@dataclass(frozen=True)
class SinusoidBeta:
    mean: float
    amplitude: float
    period: float

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.period <= 0:
            raise CostModelError(f"sinusoid period must be positive, got {self.period}")
        t = np.arange(n, dtype=float)
        return self.mean + self.amplitude * np.sin(2.0 * np.pi * t / self.period)


BetaSource = Union[FixedBeta, UniformBeta, TraceBeta, SinusoidBeta]


@dataclass(frozen=True)
class CostModel:
    """
    Normalized false-positive, false-negative and offloading costs

    Attributes:
        delta_fp: Cost of predicting 1 when the remote label is 0
        delta_fn: Cost of predicting 0 when the remote label is 1
        beta_source: Generator of the per-round offloading cost
        beta_cap: Upper bound on every emitted offloading cost
    """

    delta_fp: float
    delta_fn: float
    beta_source: BetaSource = FixedBeta(0.3)
    beta_cap: float = 1.0

    def __post_init__(self):
        for name in ("delta_fp", "delta_fn"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise CostModelError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.beta_cap <= 1.0:
            raise CostModelError(f"beta_cap must lie in [0, 1], got {self.beta_cap}")
        if isinstance(self.beta_source, FixedBeta) and not 0.0 <= self.beta_source.beta <= self.beta_cap:
            raise CostModelError(
                f"fixed beta {self.beta_source.beta} outside [0, {self.beta_cap}]"
            )

    def with_beta(self, beta: float) -> "CostModel":
        """Same misclassification costs with a fixed offloading cost"""
        return replace(self, beta_source=FixedBeta(beta))

    @property
    def harmonic_cost(self) -> float:
        """delta_fp * delta_fn / (delta_fp + delta_fn); offloading never pays above it"""
        total = self.delta_fp + self.delta_fn
        return 0.0 if total == 0 else self.delta_fp * self.delta_fn / total


def beta_sequence(costs: CostModel, n: int, seed: int) -> np.ndarray:
    """
    Per-round offloading costs announced at the start of each round

    Args:
        costs: Cost model holding the beta source
        n: Number of rounds
        seed: Run seed (the beta stream is independent of the policy stream)

    Returns:
        Array of n costs clipped into [0, beta_cap]
    """
    raw = costs.beta_source.generate(n, rng_stream(seed, BETA_STREAM))
    clipped = np.clip(raw, 0.0, costs.beta_cap)
    if not np.array_equal(raw, clipped):
        logger.warning(f"Clipped {int(np.sum(raw != clipped))} offloading costs into [0, {costs.beta_cap}]")
    return clipped


def resolve_betas(dataset, costs: CostModel, seed: int) -> np.ndarray:
    """Generated costs with the per-sample overrides of a dataset applied"""
    betas = beta_sequence(costs, len(dataset), seed)
    overrides = dataset.beta_overrides
    mask = ~np.isnan(overrides)
    if mask.any():
        bad = overrides[mask]
        if np.any((bad < 0) | (bad > costs.beta_cap)):
            raise DataError(f"beta overrides must lie in [0, {costs.beta_cap}]")
        betas[mask] = overrides[mask]
    return betas


# ---------------------------------------------------------------------------
# Samples, thresholds and round records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    """One round's input as the simulator sees it"""

    score: Score
    rdl_label: int
    true_label: Optional[int] = None
    beta_override: Optional[float] = None

    def __post_init__(self):
        if self.rdl_label not in (0, 1):
            raise ValueError(f"rdl_label must be binary, got {self.rdl_label}")
        if self.true_label is not None and self.true_label not in (0, 1):
            raise ValueError(f"true_label must be binary, got {self.true_label}")
        if self.beta_override is not None and not 0.0 <= self.beta_override <= 1.0:
            raise ValueError(f"beta_override {self.beta_override} outside [0, 1]")


@dataclass(frozen=True)
class ThresholdPair:
    """
    Two-threshold rule on grid cells: predict 0 below lower, offload in
    [lower, upper), predict 1 at or above upper.

    upper may equal 2^b (threshold value 1), the closing level that makes
    "offload everything except f = 0" expressible.
    """

    lower: int
    upper: int
    bits: int

    def __post_init__(self):
        n = grid_size(self.bits)
        if not 0 <= self.lower <= self.upper <= n:
            raise ValueError(f"invalid threshold pair ({self.lower}, {self.upper}) for {n} cells")

    @classmethod
    def from_values(cls, theta_l: float, theta_u: float, bits: int) -> "ThresholdPair":
        n = grid_size(bits)
        lower, upper = theta_l * n, theta_u * n
        if lower != int(lower) or upper != int(upper):
            raise ValueError(f"thresholds ({theta_l}, {theta_u}) are not on the {bits}-bit grid")
        return cls(int(lower), int(upper), bits)

    @property
    def theta_l(self) -> float:
        return self.lower / grid_size(self.bits)

    @property
    def theta_u(self) -> float:
        return self.upper / grid_size(self.bits)

    @property
    def in_grid(self) -> bool:
        """True when the pair belongs to the online expert grid"""
        return self.upper < grid_size(self.bits)

    def is_ambiguous(self, f_index: int) -> bool:
        return self.lower <= f_index < self.upper

    def predict(self, f_index: int) -> int:
        return 1 if f_index >= self.upper else 0

    def decide(self, f_index: int) -> Decision:
        if self.is_ambiguous(f_index):
            return Decision.OFFLOAD
        return Decision.local(self.predict(f_index))


@dataclass(frozen=True)
class RoundRecord:
    """What a policy did in one round and what it cost"""

    t: int
    decision: Decision
    explored: bool
    offloaded: bool
    phi: float
    beta: float
    loss: float

    def __post_init__(self):
        if self.explored and not self.offloaded:
            raise ValueError(f"round {self.t}: exploration without offloading")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def phi(local_pred: int, rdl_label: int, costs: CostModel) -> float:
    """
    Misclassification cost of a local prediction against the remote label

    Returns:
        delta_fp for a false positive, delta_fn for a false negative, 0 otherwise
    """
    if local_pred == 1 and rdl_label == 0:
        return costs.delta_fp
    if local_pred == 0 and rdl_label == 1:
        return costs.delta_fn
    return 0.0


def round_loss(decision: Decision, phi_value: float, beta: float) -> float:
    return beta if decision is Decision.OFFLOAD else phi_value


def fixed_threshold_loss(pair: ThresholdPair, sample: Sample, beta: float, costs: CostModel) -> float:
    """Loss of a fixed two-threshold policy on one sample"""
    f = sample.score.index
    if pair.is_ambiguous(f):
        return beta
    return phi(pair.predict(f), sample.rdl_label, costs)


def pair_losses(lower: np.ndarray, upper: np.ndarray, f_index: int, rdl_label: int,
                beta: float, costs: CostModel) -> np.ndarray:
    """fixed_threshold_loss for many pairs at once (arrays of grid cells)"""
    ambiguous = (lower <= f_index) & (f_index < upper)
    predicts_one = f_index >= upper
    if rdl_label == 1:
        local = np.where(predicts_one, 0.0, costs.delta_fn)
    else:
        local = np.where(predicts_one, costs.delta_fp, 0.0)
    return np.where(ambiguous, beta, local)


def error_rates(local: np.ndarray, predictions: np.ndarray, rdl_labels: np.ndarray) -> Tuple[float, float, bool]:
    """
    False-positive and false-negative rates of the locally decided rounds

    Args:
        local: Mask of rounds decided locally
        predictions: Local prediction per round (ignored where not local)
        rdl_labels: Remote labels

    Returns:
        (fpr, fnr, no_local_rounds); a rate with an empty denominator is 0
    """
    local = np.asarray(local, dtype=bool)
    negatives = local & (rdl_labels == 0)
    positives = local & (rdl_labels == 1)
    fp = int(np.sum(negatives & (predictions == 1)))
    fn = int(np.sum(positives & (predictions == 0)))
    fpr = fp / int(negatives.sum()) if negatives.any() else 0.0
    fnr = fn / int(positives.sum()) if positives.any() else 0.0
    return fpr, fnr, not local.any()


# ---------------------------------------------------------------------------
# Policy protocol
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Action:
    """
    A policy's choice for one round

    local_pred is the prediction used locally or, on an exploration round,
    the prediction the policy would have used had it not explored.
    """

    decision: Decision
    explored: bool = False
    local_pred: Optional[int] = None

    @classmethod
    def local(cls, prediction: int) -> "Action":
        return cls(Decision.local(prediction), False, int(prediction))

    @classmethod
    def offload(cls, explored: bool = False, counterfactual: Optional[int] = None) -> "Action":
        return cls(Decision.OFFLOAD, explored, counterfactual)

    @property
    def offloaded(self) -> bool:
        return self.decision is Decision.OFFLOAD


class Feedback:
    """
    Everything a policy may observe after deciding

    The remote label is only attached on offloaded rounds; asking for it
    otherwise is a contract violation.
    """

    __slots__ = ("t", "score", "beta", "offloaded", "_label")

    def __init__(self, t: int, score: Score, beta: float, offloaded: bool, label: Optional[int]):
        if label is not None and not offloaded:
            raise FeedbackError(f"round {t}: label attached to a non-offloaded round")
        self.t = t
        self.score = score
        self.beta = beta
        self.offloaded = offloaded
        self._label = label

    @property
    def rdl_label(self) -> int:
        if not self.offloaded or self._label is None:
            raise FeedbackError(f"round {self.t}: remote label requested without offloading")
        return self._label


class Policy(Protocol):
    """Interface every online policy implements"""

    name: str

    def reset(self, rng: np.random.Generator) -> None:
        ...

    def act(self, t: int, score: Score, beta: float) -> Action:
        ...

    def learn(self, feedback: Feedback) -> None:
        ...


def play_round(policy: Policy, t: int, sample: Sample, beta: float, costs: CostModel) -> RoundRecord:
    """
    Run one round of the offloading protocol

    Args:
        policy: Online policy, already reset
        t: Round index
        sample: The round's sample (the label is withheld from the policy
            unless it offloads)
        beta: Offloading cost announced before the decision
        costs: Misclassification costs

    Returns:
        The round record with the loss charged to the policy
    """
    action = policy.act(t, sample.score, beta)
    label = sample.rdl_label if action.offloaded else None
    policy.learn(Feedback(t, sample.score, beta, action.offloaded, label))

    if action.local_pred is None:
        phi_value = float("nan")
    else:
        phi_value = phi(action.local_pred, sample.rdl_label, costs)
    loss = round_loss(action.decision, phi_value, beta)
    return RoundRecord(
        t=t,
        decision=action.decision,
        explored=action.explored,
        offloaded=action.offloaded,
        phi=phi_value,
        beta=beta,
        loss=loss,
    )
