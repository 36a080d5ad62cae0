"""
Reports Generation Module - Tables and text reports from run summaries

Turns Summary objects into flat tables, appends mean / sample-sd rows per
sweep point, pivots them into "mean ± sd" tables, and renders the offline
optimum report.
"""

import logging
import os
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

# Configure logging
logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "total_loss", "avg_cost", "regret_vs_two", "regret_vs_single",
    "fpr", "fnr", "offload_rate", "explore_rate",
]


def summaries_frame(summaries: Sequence[Any], extra: Optional[List[Dict[str, Any]]] = None) -> pd.DataFrame:
    """
    One row per summary

    Args:
        summaries: Summary objects
        extra: Per-summary sweep coordinates (e.g. beta), same order

    Returns:
        DataFrame with the sweep coordinates first
    """
    rows = []
    for i, summary in enumerate(summaries):
        row = dict(extra[i]) if extra else {}
        row.update(summary.to_dict())
        rows.append(row)
    return pd.DataFrame(rows)


def with_aggregates(frame: pd.DataFrame, group_cols: List[str]) -> pd.DataFrame:
    """
    Append a mean and a sample-sd row per group

    Aggregate rows carry 'mean' / 'sd' in the seed column. With a single seed
    the sd is reported as 0.
    """
    if frame.empty:
        logger.warning("Empty dataframe provided for aggregation")
        return frame
    metrics = [col for col in METRIC_COLUMNS if col in frame.columns]
    grouped = frame.groupby(group_cols, sort=False)[metrics]
    means = grouped.mean().reset_index()
    sds = grouped.std(ddof=1).fillna(0.0).reset_index()
    means["seed"] = "mean"
    sds["seed"] = "sd"

    seeds = frame.copy()
    seeds["seed"] = seeds["seed"].astype(str)
    combined = pd.concat([seeds, means, sds], ignore_index=True, sort=False)
    return combined[[col for col in frame.columns if col in combined.columns]]


def mean_sd_table(frame: pd.DataFrame, column: str, value: str = "avg_cost") -> pd.DataFrame:
    """Policy x sweep value table of "mean ± sd" strings"""
    stats = frame.groupby(["policy_id", column], sort=False)[value].agg(["mean", "std"]).reset_index()
    stats["std"] = stats["std"].fillna(0.0)
    stats["cell"] = [f"{m:.4f} ± {s:.4f}" for m, s in zip(stats["mean"], stats["std"])]
    table = stats.pivot(index="policy_id", columns=column, values="cell")
    policy_order = list(dict.fromkeys(frame["policy_id"]))
    return table.reindex(policy_order)


def offline_report(dataset_name: str, rounds: int, beta_label: str,
                   two: Any, single: Any, baselines: Dict[str, float]) -> str:
    """
    Plain text report of the offline optima

    Args:
        dataset_name: Provenance of the data
        rounds: Number of samples
        beta_label: Description of the offloading cost
        two: Two-threshold optimum
        single: Single-threshold optimum
        baselines: Cumulative loss of the fixed baselines by name

    Returns:
        The report as a string
    """
    text = f"""
===========================================================
                 OFFLINE OPTIMUM REPORT
===========================================================

Data: {dataset_name}
Rounds: {rounds:,}
Offloading cost: {beta_label}

-----------------------------------------------------------
                  TWO-THRESHOLD OPTIMUM
-----------------------------------------------------------
theta_l = {two.pair.theta_l:g}, theta_u = {two.pair.theta_u:g}
cumulative loss = {two.loss:.6f} (average {two.loss / rounds:.6f})

-----------------------------------------------------------
                 SINGLE-THRESHOLD OPTIMUM
-----------------------------------------------------------
theta = {single.threshold:g} (band [{single.pair.theta_l:g}, {single.pair.theta_u:g}))
cumulative loss = {single.loss:.6f} (average {single.loss / rounds:.6f})

-----------------------------------------------------------
                     FIXED BASELINES
-----------------------------------------------------------
"""
    for name, loss in baselines.items():
        text += f"{name}: {loss:.6f} (average {loss / rounds:.6f})\n"
    return text


def export_results(result_df: pd.DataFrame, file_path: str) -> str:
    """
    Exports a result table to a CSV file

    Args:
        result_df: Table to write
        file_path: Destination

    Returns:
        Path to the exported file
    """
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    result_df.to_csv(file_path, index=False, na_rep="")

    logger.info(f"Results exported to {file_path}")
    return file_path
