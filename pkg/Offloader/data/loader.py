"""
Data Loading Module - CSV ingestion and emission of score traces

Schema: header f,rdl_label[,true_label][,beta]; comma separated, UTF-8.
Every problem in a file is collected first and reported in one DataError
with the offending line numbers.
"""

import logging
import os
from typing import List

import numpy as np
import pandas as pd

from Offloader.data.generate import MISSING_LABEL, Dataset
from Offloader.errors import DataError
from Offloader.processing.core import quantize_indices

# Configure logging
logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ["f", "rdl_label"]
OPTIONAL_COLUMNS = ["true_label", "beta"]


def _line(index: int) -> int:
    # header is line 1
    return int(index) + 2


def check_trace_compatibility(frame: pd.DataFrame) -> List[str]:
    """
    Check a raw trace for schema and range problems

    Args:
        frame: The file read with every cell as a string

    Returns:
        List of issues found (empty if no issues)
    """
    issues = []

    missing = [col for col in REQUIRED_COLUMNS if col not in frame.columns]
    if missing:
        issues.append(f"missing required columns: {', '.join(missing)}")
        return issues

    scores = pd.to_numeric(frame["f"], errors="coerce")
    for index in frame.index[scores.isna() | (scores < 0) | (scores > 1)]:
        issues.append(f"line {_line(index)}: score '{frame.at[index, 'f']}' is not a number in [0, 1]")

    for column in ("rdl_label", "true_label"):
        if column not in frame.columns:
            continue
        values = frame[column]
        present = values.notna() if column == "true_label" else pd.Series(True, index=frame.index)
        numeric = pd.to_numeric(values, errors="coerce")
        bad = present & ~numeric.isin([0, 1])
        for index in frame.index[bad]:
            issues.append(f"line {_line(index)}: {column} '{values[index]}' is not 0 or 1")

    if "beta" in frame.columns:
        values = frame["beta"]
        numeric = pd.to_numeric(values, errors="coerce")
        bad = values.notna() & (numeric.isna() | (numeric < 0) | (numeric > 1))
        for index in frame.index[bad]:
            issues.append(f"line {_line(index)}: beta '{values[index]}' is not a number in [0, 1]")

    return issues


def load_csv(path: str, bits: int) -> Dataset:
    """
    Load a score trace and quantize it

    Args:
        path: CSV file following the trace schema
        bits: Quantization bits

    Returns:
        Dataset with provenance csv(path)
    """
    if not os.path.exists(path):
        logger.error(f"File not found: {path}")
        raise DataError(f"could not find score trace at {path}")

    try:
        logger.info(f"Loading score trace from {path}")
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        logger.error(f"Error reading {path}: {str(e)}")
        raise DataError(f"could not parse {path}: {e}") from e

    frame.columns = [str(col).strip() for col in frame.columns]
    unknown = [col for col in frame.columns if col not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
    if unknown:
        logger.warning(f"Ignoring unknown columns in {path}: {', '.join(unknown)}")

    issues = check_trace_compatibility(frame)
    if issues:
        logger.error(f"{len(issues)} problems in {path}")
        raise DataError(f"malformed score trace {path}", issues)
    if frame.empty:
        raise DataError(f"score trace {path} has no rows")

    scores = pd.to_numeric(frame["f"]).to_numpy(dtype=float)
    true_label = None
    if "true_label" in frame.columns:
        true_label = pd.to_numeric(frame["true_label"]).fillna(MISSING_LABEL).to_numpy(dtype=np.int64)
    overrides = None
    if "beta" in frame.columns:
        overrides = pd.to_numeric(frame["beta"]).to_numpy(dtype=float)

    dataset = Dataset(
        quantize_indices(scores, bits),
        pd.to_numeric(frame["rdl_label"]).to_numpy(dtype=np.int64),
        bits,
        true_label,
        overrides,
        f"csv({path})",
    )
    logger.info(f"Successfully loaded {len(dataset)} samples from {path}")
    return dataset


def write_csv(dataset: Dataset, path: str) -> str:
    """Write a dataset in the trace schema (scores as quantized values)"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    dataset.to_frame().to_csv(path, index=False, na_rep="")
    logger.info(f"Wrote {len(dataset)} samples to {path}")
    return path
