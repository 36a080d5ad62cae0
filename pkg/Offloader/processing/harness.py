"""
Harness Module - Replay simulation, metrics and regret accounting

Drives any policy through a dataset round by round, keeps the per-round
records, and compares the realized cumulative loss against offline optima
computed on the same samples and offloading costs.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from Offloader.errors import DataError, HarnessError
from Offloader.processing.baselines import OfflineOptimum, offline_best_two_threshold
from Offloader.processing.core import (
    POLICY_STREAM,
    CostModel,
    Decision,
    Policy,
    RoundRecord,
    error_rates,
    play_round,
    resolve_betas,
    rng_stream,
)

# Configure logging
logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["t", "decision", "explored", "offloaded", "beta", "phi", "loss", "cum_loss"]


@dataclass
class Trace:
    """
    Per-round records of one policy on one dataset

    rdl_labels belong to the harness, not to the policy; they are kept so
    local error rates can be computed afterwards.
    """

    records: List[RoundRecord]
    policy_id: str
    seed: int
    key: str
    rdl_labels: np.ndarray

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records], dtype=float)

    @property
    def cumulative_loss(self) -> np.ndarray:
        """Running sums L_t"""
        return np.cumsum(self.losses)

    @property
    def total_loss(self) -> float:
        """L_T, summed exactly"""
        return math.fsum(r.loss for r in self.records)

    def prefix_loss(self, horizon: int) -> float:
        return math.fsum(r.loss for r in self.records[:horizon])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "t": [r.t for r in self.records],
            "decision": [r.decision.value for r in self.records],
            "explored": [int(r.explored) for r in self.records],
            "offloaded": [int(r.offloaded) for r in self.records],
            "beta": [r.beta for r in self.records],
            "phi": [r.phi for r in self.records],
            "loss": self.losses,
        })
        frame["cum_loss"] = self.cumulative_loss
        return frame[TRACE_COLUMNS]


def run(policy: Policy, dataset, costs: CostModel, seed: int,
        betas: Optional[np.ndarray] = None) -> Trace:
    """
    Replay a dataset through a policy

    Args:
        policy: Any online policy; it is reset from the run seed
        dataset: Non-empty score stream
        costs: Cost model (also the beta source when betas is None)
        seed: Run seed
        betas: Pre-resolved offloading costs, one per sample

    Returns:
        The trace of the run
    """
    if len(dataset) == 0:
        raise DataError("cannot run a policy on an empty dataset")
    if betas is None:
        betas = resolve_betas(dataset, costs, seed)
    betas = np.asarray(betas, dtype=float)
    if betas.shape != (len(dataset),):
        raise HarnessError(f"beta trace has {betas.shape[0]} entries for {len(dataset)} samples")

    policy.reset(rng_stream(seed, POLICY_STREAM))
    beta_values = betas.tolist()
    records = [
        play_round(policy, t, sample, beta_values[t], costs)
        for t, sample in enumerate(dataset)
    ]
    trace = Trace(records, policy.name, seed, dataset.key(betas), dataset.rdl_label.copy())
    logger.debug(f"Run {policy.name} (seed {seed}): L_T = {trace.total_loss:.4f} over {len(trace)} rounds")
    return trace


@dataclass
class Summary:
    policy_id: str
    seed: int
    rounds: int
    total_loss: float
    avg_cost: float
    regret_vs_two: float
    regret_vs_single: float
    fpr: float
    fnr: float
    no_local_rounds: bool
    offload_rate: float
    explore_rate: float

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def _check_key(trace: Trace, optimum: Optional[OfflineOptimum], label: str) -> None:
    if optimum is not None and optimum.key != trace.key:
        logger.error(f"{label} optimum was computed on {optimum.key}, trace on {trace.key}")
        raise HarnessError(f"{label} optimum and trace {trace.policy_id} come from different data")


def summarize(trace: Trace, offline_two: Optional[OfflineOptimum] = None,
              offline_single: Optional[OfflineOptimum] = None) -> Summary:
    """
    Metrics of one trace

    Regrets are measured against the realized optima on the same samples and
    beta trace; they are NaN when the optimum is not given. FPR and FNR
    count locally decided rounds only.
    """
    _check_key(trace, offline_two, "two-threshold")
    _check_key(trace, offline_single, "single-threshold")

    decisions = [r.decision for r in trace.records]
    local = np.array([d is not Decision.OFFLOAD for d in decisions])
    predictions = np.array([1 if d is Decision.LOCAL1 else 0 for d in decisions])
    fpr, fnr, no_local = error_rates(local, predictions, trace.rdl_labels)

    total = trace.total_loss
    rounds = len(trace)
    return Summary(
        policy_id=trace.policy_id,
        seed=trace.seed,
        rounds=rounds,
        total_loss=total,
        avg_cost=total / rounds,
        regret_vs_two=total - offline_two.loss if offline_two else float("nan"),
        regret_vs_single=total - offline_single.loss if offline_single else float("nan"),
        fpr=fpr,
        fnr=fnr,
        no_local_rounds=no_local,
        offload_rate=float(np.mean([r.offloaded for r in trace.records])),
        explore_rate=float(np.mean([r.explored for r in trace.records])),
    )


def regret_curve(traces: Sequence[Trace], optima: Sequence[OfflineOptimum],
                 bounds: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """
    R_T of each trace against the optimum of its own horizon

    Args:
        traces: One trace per horizon
        optima: Offline two-threshold optimum of each trace's data
        bounds: Regret bound evaluated at each horizon, if known

    Returns:
        DataFrame with columns T, regret and bound
    """
    if len(traces) != len(optima):
        raise HarnessError("regret curve needs one optimum per trace")
    rows = []
    for i, (trace, optimum) in enumerate(zip(traces, optima)):
        _check_key(trace, optimum, "two-threshold")
        rows.append({
            "T": len(trace),
            "regret": trace.total_loss - optimum.loss,
            "bound": bounds[i] if bounds is not None else float("nan"),
        })
    return pd.DataFrame(rows, columns=["T", "regret", "bound"])


def prefix_regret_curve(trace: Trace, dataset, costs: CostModel, betas: np.ndarray,
                        horizons: Sequence[int]) -> pd.DataFrame:
    """R_T of the prefixes of one trace, each against its prefix optimum"""
    betas = np.asarray(betas, dtype=float)
    if trace.key != dataset.key(betas):
        raise HarnessError(f"trace {trace.policy_id} was not run on this dataset")
    rows = []
    for horizon in horizons:
        if not 1 <= horizon <= len(trace):
            raise HarnessError(f"horizon {horizon} outside the trace length {len(trace)}")
        optimum = offline_best_two_threshold(dataset.prefix(horizon), costs, betas[:horizon])
        rows.append({"T": horizon, "regret": trace.prefix_loss(horizon) - optimum.loss})
    return pd.DataFrame(rows, columns=["T", "regret"])


def loglog_slope(points: Sequence[Tuple[float, float]]) -> float:
    """Least-squares slope of log R against log T"""
    if len(points) < 2:
        raise HarnessError("a slope needs at least two horizons")
    horizons = np.array([p[0] for p in points], dtype=float)
    values = np.array([p[1] for p in points], dtype=float)
    if np.any(horizons <= 0) or np.any(values <= 0):
        raise HarnessError("log-log slope needs positive horizons and regrets")
    slope, _ = np.polyfit(np.log(horizons), np.log(values), 1)
    return float(slope)
