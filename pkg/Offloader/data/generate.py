"""
Data Generation Module - Score streams for the replay simulator

Provides the Dataset container shared by every run, the truncated Gaussian
mixture generator, the calibrated-stream generator (labels drawn
Bernoulli(f)) and small helpers for building distribution-shift streams.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from Offloader.errors import ConfigError, DataError
from Offloader.processing.core import (
    DATA_STREAM,
    Sample,
    Score,
    grid_size,
    quantize_indices,
    rng_stream,
    score_index,
)

# Configure logging
logger = logging.getLogger(__name__)

# Rounds of rejection sampling before a mixture is declared pathological
REJECTION_ROUNDS = 1000

MISSING_LABEL = -1


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    An ordered score stream on one quantization grid

    Attributes:
        score_index: Grid cell of every score
        rdl_label: Remote label of every sample
        bits: Quantization bits shared by all scores
        true_label: Optional ground truth, -1 where missing
        beta_overrides: Optional per-sample offloading cost, NaN where missing
        provenance: Where the samples came from
    """

    score_index: np.ndarray
    rdl_label: np.ndarray
    bits: int
    true_label: Optional[np.ndarray] = None
    beta_overrides: Optional[np.ndarray] = None
    provenance: str = "memory"

    def __post_init__(self):
        n_cells = grid_size(self.bits)
        scores = np.asarray(self.score_index, dtype=np.int64)
        labels = np.asarray(self.rdl_label, dtype=np.int64)
        size = scores.shape[0]
        true_label = (np.full(size, MISSING_LABEL, dtype=np.int64) if self.true_label is None
                      else np.asarray(self.true_label, dtype=np.int64))
        overrides = (np.full(size, np.nan) if self.beta_overrides is None
                     else np.asarray(self.beta_overrides, dtype=float))

        if not (labels.shape == true_label.shape == overrides.shape == (size,)):
            raise DataError("dataset columns have different lengths")
        if np.any((scores < 0) | (scores >= n_cells)):
            raise DataError(f"score cells outside the {self.bits}-bit grid")
        if np.any((labels != 0) & (labels != 1)):
            raise DataError("remote labels must be 0 or 1")
        if np.any((true_label != 0) & (true_label != 1) & (true_label != MISSING_LABEL)):
            raise DataError("true labels must be 0 or 1")

        object.__setattr__(self, "score_index", scores)
        object.__setattr__(self, "rdl_label", labels)
        object.__setattr__(self, "true_label", true_label)
        object.__setattr__(self, "beta_overrides", overrides)

    def __len__(self) -> int:
        return int(self.score_index.shape[0])

    def __getitem__(self, t: int) -> Sample:
        true_label = int(self.true_label[t])
        beta = float(self.beta_overrides[t])
        return Sample(
            score=Score(int(self.score_index[t]), self.bits),
            rdl_label=int(self.rdl_label[t]),
            true_label=None if true_label == MISSING_LABEL else true_label,
            beta_override=None if np.isnan(beta) else beta,
        )

    def __iter__(self) -> Iterator[Sample]:
        for t in range(len(self)):
            yield self[t]

    @property
    def scores(self) -> np.ndarray:
        """Quantized score values"""
        return self.score_index / grid_size(self.bits)

    def prefix(self, n: int) -> "Dataset":
        """The first n samples"""
        return Dataset(self.score_index[:n], self.rdl_label[:n], self.bits,
                       self.true_label[:n], self.beta_overrides[:n],
                       f"{self.provenance}[:{n}]")

    def to_frame(self) -> pd.DataFrame:
        """Columns f, rdl_label, true_label, beta; the optional ones only when present"""
        frame = pd.DataFrame({"f": self.scores, "rdl_label": self.rdl_label})
        if np.any(self.true_label != MISSING_LABEL):
            frame["true_label"] = pd.array(
                np.where(self.true_label == MISSING_LABEL, None, self.true_label).tolist(), dtype="Int64"
            )
        if np.any(~np.isnan(self.beta_overrides)):
            frame["beta"] = self.beta_overrides
        return frame

    def key(self, betas: Optional[np.ndarray] = None) -> str:
        """Identity of (scores, labels, beta trace); traces and optima carry it"""
        digest = hashlib.sha256()
        digest.update(str(self.bits).encode())
        digest.update(self.score_index.astype(np.int64).tobytes())
        digest.update(self.rdl_label.astype(np.int64).tobytes())
        if betas is not None:
            digest.update(np.asarray(betas, dtype=np.float64).tobytes())
        return digest.hexdigest()[:16]


@dataclass(frozen=True)
class MixtureSpec:
    """
    Two truncated normals, one per class

    second_param says whether sd1 / sd0 hold standard deviations ('sd') or
    variances ('variance').
    """

    mean1: float = 0.9
    sd1: float = 0.4
    mean0: float = 0.3
    sd0: float = 2.0
    class1_fraction: float = 0.5
    second_param: str = "sd"

    def __post_init__(self):
        if self.sd1 <= 0 or self.sd0 <= 0:
            raise ConfigError(f"mixture spreads must be positive, got {self.sd1}, {self.sd0}")
        if not 0.0 <= self.class1_fraction <= 1.0:
            raise ConfigError(f"class1_fraction must lie in [0, 1], got {self.class1_fraction}")
        if self.second_param not in ("sd", "variance"):
            raise ConfigError(f"second_param must be 'sd' or 'variance', got '{self.second_param}'")

    def scales(self) -> np.ndarray:
        """Standard deviations of the (class 0, class 1) components"""
        spreads = np.array([self.sd0, self.sd1], dtype=float)
        return np.sqrt(spreads) if self.second_param == "variance" else spreads


def gen_mixture(spec: MixtureSpec, n: int, bits: int, seed: int) -> Dataset:
    """
    Gaussian-mixture scores truncated to (0, 1) by rejection

    Args:
        spec: Mixture parameters
        n: Number of samples
        bits: Quantization bits
        seed: Generator seed

    Returns:
        Dataset whose remote label is the drawn class
    """
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    rng = rng_stream(seed, DATA_STREAM)
    labels = (rng.random(n) < spec.class1_fraction).astype(np.int64)
    means = np.array([spec.mean0, spec.mean1])[labels]
    scales = spec.scales()[labels]

    raw = np.empty(n)
    pending = np.arange(n)
    for _ in range(REJECTION_ROUNDS):
        draws = rng.normal(means[pending], scales[pending])
        accepted = (draws > 0.0) & (draws < 1.0)
        raw[pending[accepted]] = draws[accepted]
        pending = pending[~accepted]
        if pending.size == 0:
            break
    else:
        logger.error(f"Rejection sampling left {pending.size} of {n} scores outside (0, 1)")
        raise DataError(f"mixture {spec} rarely lands in (0, 1); rejection budget exhausted")

    logger.info(f"Generated {n} mixture samples (b={bits}, seed={seed})")
    return Dataset(quantize_indices(raw, bits), labels, bits, provenance=f"synthetic(seed={seed})")


def uniform_law(bits: int) -> np.ndarray:
    n = grid_size(bits)
    return np.full(n, 1.0 / n)


def point_mass(value: float, bits: int) -> np.ndarray:
    law = np.zeros(grid_size(bits))
    law[score_index(value, bits)] = 1.0
    return law


def gen_calibrated(score_law: Sequence[float], n: int, bits: int, seed: int) -> Dataset:
    """
    Scores drawn from a law on the grid, labels drawn Bernoulli(f)

    The stream is calibrated by construction: P(label = 1 | f) = f.
    """
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    law = np.asarray(score_law, dtype=float)
    cells = grid_size(bits)
    if law.shape != (cells,):
        raise ConfigError(f"score law needs {cells} cells, got {law.shape}")
    if np.any(law < 0) or not np.isclose(law.sum(), 1.0):
        raise ConfigError("score law must be a probability vector")
    rng = rng_stream(seed, DATA_STREAM)
    scores = rng.choice(cells, size=n, p=law / law.sum())
    labels = (rng.random(n) < scores / cells).astype(np.int64)
    logger.info(f"Generated {n} calibrated samples (b={bits}, seed={seed})")
    return Dataset(scores, labels, bits, provenance=f"calibrated(seed={seed})")


def concat(datasets: List[Dataset]) -> Dataset:
    """Streams played back to back, e.g. to emulate a distribution shift"""
    if not datasets:
        raise DataError("nothing to concatenate")
    bits = {d.bits for d in datasets}
    if len(bits) != 1:
        raise DataError(f"cannot concatenate datasets with different quantizations {sorted(bits)}")
    return Dataset(
        np.concatenate([d.score_index for d in datasets]),
        np.concatenate([d.rdl_label for d in datasets]),
        datasets[0].bits,
        np.concatenate([d.true_label for d in datasets]),
        np.concatenate([d.beta_overrides for d in datasets]),
        "+".join(d.provenance for d in datasets),
    )


def flip_scores(dataset: Dataset) -> Dataset:
    """f -> 1 - f on the grid (f = 0 lands in the top cell)"""
    n = grid_size(dataset.bits)
    flipped = np.minimum(n - dataset.score_index, n - 1)
    return Dataset(flipped, dataset.rdl_label, dataset.bits, dataset.true_label,
                   dataset.beta_overrides, f"flip({dataset.provenance})")
