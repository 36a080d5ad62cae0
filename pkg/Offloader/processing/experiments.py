"""
Experiments Module - Sweep protocols behind the command-line interface

Each command builds its tasks (sweep point x seed), fans them out to a
bounded thread pool, and merges the results in task order so the written
tables do not depend on scheduling.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np
import pandas as pd

from Offloader.config import ExperimentConfig
from Offloader.data.files import OutputManager
from Offloader.data.generate import Dataset, gen_calibrated, gen_mixture
from Offloader.data.loader import load_csv, write_csv
from Offloader.errors import ConfigError
from Offloader.processing.baselines import (
    FixedPairPolicy,
    FullOffloadPolicy,
    NoOffloadPolicy,
    OfflineOptimum,
    SingleThresholdPolicy,
    offline_best_single_threshold,
    offline_best_two_threshold,
    threshold_frontier,
)
from Offloader.processing.calibrated import CalibratedPolicy
from Offloader.processing.core import CostModel, Policy, resolve_betas
from Offloader.processing.h2t2 import H2T2Policy, expert_count, regret_bound, tuned_params
from Offloader.processing.harness import Summary, loglog_slope, run, summarize
from Offloader.processing.reports import mean_sd_table, offline_report, summaries_frame, with_aggregates

# Configure logging
logger = logging.getLogger(__name__)

LEARNING_POLICIES = ("h2t2", "hi-single")

T = TypeVar("T")


def fan_out(tasks: Sequence[Callable[[], T]], workers: int) -> List[T]:
    """Run tasks on a bounded pool; results come back in task order"""
    if workers <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [future.result() for future in futures]


def run_seeds(config: ExperimentConfig) -> List[int]:
    return [config.seed + k for k in range(config.seeds)]


def make_dataset(config: ExperimentConfig, bits: Optional[int] = None) -> Dataset:
    """The configured score stream on a b-bit grid"""
    bits = config.bits if bits is None else bits
    if config.dataset == "mixture":
        return gen_mixture(config.mixture_spec(), config.samples, bits, config.data_seed)
    if config.dataset == "calibrated":
        return gen_calibrated(config.score_law_vector(bits), config.samples, bits, config.data_seed)
    return load_csv(config.data_path, bits)


def build_policy(name: str, config: ExperimentConfig, costs: CostModel, bits: int,
                 epsilon: float, eta: float, two: OfflineOptimum, single: OfflineOptimum) -> Policy:
    """
    Instantiate a policy by its CLI name

    The offline policies replay the optima computed on the run's own data.
    """
    if name == "no-offload":
        return NoOffloadPolicy(bits)
    if name == "full-offload":
        return FullOffloadPolicy()
    if name == "hi-single":
        return SingleThresholdPolicy(bits, costs, eta, epsilon, config.pseudo_loss)
    if name == "offline-single":
        return FixedPairPolicy(single.pair, name="offline-single")
    if name == "offline-two":
        return FixedPairPolicy(two.pair, name="offline-two")
    if name == "h2t2":
        return H2T2Policy(bits, costs, eta, epsilon, config.pseudo_loss)
    if name == "calibrated":
        return CalibratedPolicy(costs)
    raise ConfigError(f"unknown policy '{name}'")


@dataclass
class PointResult:
    """Everything one (sweep point, seed) task produced"""

    summaries: List[Summary] = field(default_factory=list)
    coords: List[Dict[str, Any]] = field(default_factory=list)
    traces: Dict[str, Any] = field(default_factory=dict)
    timings: List[Dict[str, Any]] = field(default_factory=list)


def evaluate_point(config: ExperimentConfig, dataset: Dataset, costs: CostModel, seed: int,
                   policies: Sequence[str], point: Dict[str, Any],
                   eta: Optional[float] = None, keep_traces: bool = False) -> PointResult:
    """
    Run every policy on one dataset with one seed

    Args:
        config: Resolved config
        dataset: Score stream
        costs: Cost model of this sweep point
        seed: Run seed (beta stream and policy stream)
        policies: Policy names
        point: Sweep coordinates copied into every summary row
        eta: Learning rate override
        keep_traces: Keep the full traces for writing

    Returns:
        Summary rows (with offline regrets), traces and wall-clock timings
    """
    betas = resolve_betas(dataset, costs, seed)
    two = offline_best_two_threshold(dataset, costs, betas)
    single = offline_best_single_threshold(dataset, costs, betas)
    epsilon, tuned_eta = config.rates(dataset.bits, len(dataset))
    eta = tuned_eta if eta is None else eta

    result = PointResult()
    for name in policies:
        policy = build_policy(name, config, costs, dataset.bits, epsilon, eta, two, single)
        started = time.perf_counter()
        trace = run(policy, dataset, costs, seed, betas)
        elapsed = time.perf_counter() - started
        result.summaries.append(summarize(trace, two, single))
        result.coords.append(dict(point))
        result.timings.append({**point, "policy_id": name, "seed": seed, "seconds": elapsed})
        if keep_traces:
            result.traces[f"{name}_seed{seed}"] = trace
    logger.info(f"Finished {point or 'run'} seed {seed}: {len(policies)} policies")
    return result


def _collect(results: List[PointResult]) -> pd.DataFrame:
    summaries = [summary for result in results for summary in result.summaries]
    coords = [coord for result in results for coord in result.coords]
    return summaries_frame(summaries, coords)


def _sweep(config: ExperimentConfig, output: OutputManager, name: str, column: str,
           points: List[Dict[str, Any]], task_for: Callable[[Dict[str, Any], int], PointResult]) -> pd.DataFrame:
    tasks = [
        (lambda p=p, s=s: task_for(p, s))
        for p in points for s in run_seeds(config)
    ]
    frame = _collect(fan_out(tasks, config.workers))
    output.write_table(with_aggregates(frame, [column, "policy_id"]), f"{name}.csv")
    output.write_table(mean_sd_table(frame, column).reset_index(), f"{name}_table.csv")
    return frame


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_run(config: ExperimentConfig, output: OutputManager) -> pd.DataFrame:
    """Every configured policy on the configured data, one trace per (policy, seed)"""
    dataset = make_dataset(config)
    costs = config.cost_model()
    tasks = [
        (lambda s=s: evaluate_point(config, dataset, costs, s, config.policies, {}, keep_traces=True))
        for s in run_seeds(config)
    ]
    results = fan_out(tasks, config.workers)
    for result in results:
        for trace_name, trace in result.traces.items():
            output.write_table(trace.to_frame(), f"{trace_name}.csv", subdir="traces")
    frame = _collect(results)
    output.write_table(with_aggregates(frame, ["policy_id"]), "summary.csv")
    return frame


def cmd_sweep_beta(config: ExperimentConfig, output: OutputManager) -> pd.DataFrame:
    """Average cost of every policy across fixed offloading costs"""
    dataset = make_dataset(config)
    points = [{"beta": beta} for beta in config.beta_grid]

    def task(point, seed):
        costs = config.cost_model(beta=point["beta"])
        return evaluate_point(config, dataset, costs, seed, config.policies, point)

    return _sweep(config, output, "sweep_beta", "beta", points, task)


def asymmetric_costs(ratio: float, delta_fn: float) -> Dict[str, float]:
    """delta_fp / delta_fn = ratio with the larger cost normalized to 1"""
    if delta_fn <= 0:
        raise ConfigError("asymmetry ratio is undefined when delta_fn is 0")
    if ratio <= 0:
        raise ConfigError(f"asymmetry ratio must be positive, got {ratio}")
    if ratio <= 1:
        return {"delta_fp": ratio, "delta_fn": 1.0}
    return {"delta_fp": 1.0, "delta_fn": 1.0 / ratio}


def cmd_sweep_asymmetry(config: ExperimentConfig, output: OutputManager) -> pd.DataFrame:
    """Average cost across the ratio delta_fp / delta_fn"""
    dataset = make_dataset(config)
    points = []
    for ratio in config.ratio_grid:
        points.append({"ratio": ratio, **asymmetric_costs(ratio, config.delta_fn)})

    def task(point, seed):
        costs = config.cost_model(delta_fp=point["delta_fp"], delta_fn=point["delta_fn"])
        return evaluate_point(config, dataset, costs, seed, config.policies, point)

    return _sweep(config, output, "sweep_asymmetry", "ratio", points, task)


def eta_points(config: ExperimentConfig, bits: int, horizon: int) -> List[float]:
    """The configured grid plus the tuned rate and 1"""
    _, tuned_eta = tuned_params(bits, horizon, config.beta_cap)
    return sorted(set(config.eta_grid) | {tuned_eta, 1.0})


def cmd_sweep_eta(config: ExperimentConfig, output: OutputManager) -> pd.DataFrame:
    """Learning policies across learning rates"""
    dataset = make_dataset(config)
    costs = config.cost_model()
    policies = [p for p in config.policies if p in LEARNING_POLICIES] or ["h2t2"]
    points = [{"eta": eta} for eta in eta_points(config, dataset.bits, len(dataset))]

    def task(point, seed):
        return evaluate_point(config, dataset, costs, seed, policies, point, eta=point["eta"])

    return _sweep(config, output, "sweep_eta", "eta", points, task)


def cmd_sweep_bits(config: ExperimentConfig, output: OutputManager) -> pd.DataFrame:
    """
    Average cost across quantizations

    Wall-clock runtimes go to timings.csv so the main tables stay
    reproducible byte for byte.
    """
    datasets = {bits: make_dataset(config, bits) for bits in config.bits_grid}
    costs = config.cost_model()
    points = [{"bits": bits, "experts": expert_count(bits)} for bits in config.bits_grid]
    tasks = [
        (lambda p=p, s=s: evaluate_point(config, datasets[p["bits"]], costs, s, config.policies, p))
        for p in points for s in run_seeds(config)
    ]
    results = fan_out(tasks, config.workers)
    frame = _collect(results)
    output.write_table(with_aggregates(frame, ["bits", "experts", "policy_id"]), "sweep_bits.csv")
    output.write_table(mean_sd_table(frame, "bits").reset_index(), "sweep_bits_table.csv")
    output.write_table(pd.DataFrame([t for r in results for t in r.timings]), "timings.csv")
    return frame


def cmd_offline_opt(config: ExperimentConfig, output: OutputManager) -> pd.DataFrame:
    """Both offline optima and the fixed baselines on the configured data"""
    dataset = make_dataset(config)
    costs = config.cost_model()
    betas = resolve_betas(dataset, costs, config.seed)
    two = offline_best_two_threshold(dataset, costs, betas)
    single = offline_best_single_threshold(dataset, costs, betas)
    baselines = {
        "no-offload": run(NoOffloadPolicy(dataset.bits), dataset, costs, config.seed, betas).total_loss,
        "full-offload": run(FullOffloadPolicy(), dataset, costs, config.seed, betas).total_loss,
    }

    rows = [
        {"rule": "offline-two", "theta_l": two.pair.theta_l, "theta_u": two.pair.theta_u,
         "threshold": np.nan, "loss": two.loss},
        {"rule": "offline-single", "theta_l": single.pair.theta_l, "theta_u": single.pair.theta_u,
         "threshold": single.threshold, "loss": single.loss},
    ]
    rows += [{"rule": name, "theta_l": np.nan, "theta_u": np.nan, "threshold": np.nan, "loss": loss}
             for name, loss in baselines.items()]
    frame = pd.DataFrame(rows)
    frame["avg_cost"] = frame["loss"] / len(dataset)
    output.write_table(frame, "offline_opt.csv")

    beta_label = f"{config.beta_source} (beta={config.beta})"
    report = offline_report(dataset.provenance, len(dataset), beta_label, two, single, baselines)
    output.write_text(report, "offline_opt.txt")
    logger.info(f"Offline optimum: two-threshold {two.pair} loss {two.loss:.4f}, "
                f"single threshold {single.threshold} loss {single.loss:.4f}")
    return frame


def cmd_gen_data(config: ExperimentConfig, output: OutputManager, path: Optional[str] = None) -> pd.DataFrame:
    """Write the configured stream in the trace schema"""
    dataset = make_dataset(config)
    write_csv(dataset, path or output.path("dataset.csv"))
    return dataset.to_frame()


def cmd_frontier(config: ExperimentConfig, output: OutputManager) -> pd.DataFrame:
    """FPR / FNR / cost map of every fixed rule"""
    dataset = make_dataset(config)
    costs = config.cost_model()
    frame = threshold_frontier(dataset, costs, resolve_betas(dataset, costs, config.seed))
    output.write_table(frame, "frontier.csv")
    return frame


def regret_task(config: ExperimentConfig, dataset: Dataset, costs: CostModel,
                horizon: int, seed: int) -> Dict[str, Any]:
    """H2T2 at one horizon with rates tuned for it, against the prefix optimum"""
    data = dataset.prefix(horizon)
    epsilon, eta = config.rates(dataset.bits, horizon)
    betas = resolve_betas(data, costs, seed)
    two = offline_best_two_threshold(data, costs, betas)
    trace = run(H2T2Policy(dataset.bits, costs, eta, epsilon, config.pseudo_loss), data, costs, seed, betas)
    return {
        "T": horizon,
        "seed": seed,
        "regret": trace.total_loss - two.loss,
        "bound": regret_bound(eta, epsilon, horizon, config.beta_cap, expert_count(dataset.bits)),
    }


def cmd_regret(config: ExperimentConfig, output: OutputManager) -> pd.DataFrame:
    """Empirical regret of H2T2 across horizons next to its bound"""
    horizons = sorted(config.horizons)
    longest = horizons[-1]
    if config.samples < longest:
        logger.info(f"Extending the stream to {longest} samples for the longest horizon")
        config = replace(config, samples=longest)
    dataset = make_dataset(config)
    if len(dataset) < longest:
        raise ConfigError(f"dataset has {len(dataset)} samples, horizon {longest} needs more")
    costs = config.cost_model()
    tasks = [
        (lambda h=h, s=s: regret_task(config, dataset, costs, h, s))
        for h in horizons for s in run_seeds(config)
    ]
    frame = pd.DataFrame(fan_out(tasks, config.workers))
    output.write_table(frame, "regret.csv")

    curve = frame.groupby("T", sort=True).agg(
        mean_regret=("regret", "mean"), sd_regret=("regret", "std"), bound=("bound", "first")
    ).reset_index()
    curve["sd_regret"] = curve["sd_regret"].fillna(0.0)
    output.write_table(curve, "regret_curve.csv")
    positive = curve[curve["mean_regret"] > 0]
    if len(positive) >= 2:
        slope = loglog_slope(list(zip(positive["T"], positive["mean_regret"])))
        logger.info(f"Log-log slope of mean regret: {slope:.3f}")
    return curve


COMMANDS: Dict[str, Callable[[ExperimentConfig, OutputManager], pd.DataFrame]] = {
    "run": cmd_run,
    "sweep-beta": cmd_sweep_beta,
    "sweep-asymmetry": cmd_sweep_asymmetry,
    "sweep-eta": cmd_sweep_eta,
    "sweep-bits": cmd_sweep_bits,
    "offline-opt": cmd_offline_opt,
    "gen-data": cmd_gen_data,
    "frontier": cmd_frontier,
    "regret": cmd_regret,
}
