"""
Configuration Module - Experiment settings, presets and key-value files

Settings are resolved in order preset < config file < --set overrides <
dedicated command-line flags. Config files hold KEY=VALUE lines and are read
with python-dotenv; list values are comma separated.
"""

import logging
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import dotenv_values

from Offloader.data.generate import MixtureSpec, point_mass, uniform_law
from Offloader.errors import ConfigError
from Offloader.processing.core import CostModel, FixedBeta, SinusoidBeta, TraceBeta, UniformBeta
from Offloader.processing.h2t2 import PSEUDO_LOSS_VARIANTS, tuned_params

# Configure logging
logger = logging.getLogger(__name__)

POLICY_NAMES = (
    "no-offload", "full-offload", "hi-single", "offline-single", "offline-two", "h2t2", "calibrated",
)
DEFAULT_POLICIES = ["no-offload", "full-offload", "hi-single", "offline-single", "offline-two", "h2t2"]
DATASET_KINDS = ("mixture", "calibrated", "csv")
BETA_SOURCES = ("fixed", "uniform", "trace", "sinusoid")
TUNED = "tuned"

Rate = Union[str, float]


@dataclass
class ExperimentConfig:
    """Everything a command needs; defaults are the reference operating point"""

    # data
    dataset: str = "mixture"
    data_path: str = ""
    samples: int = 10000
    mean1: float = 0.9
    sd1: float = 0.4
    mean0: float = 0.3
    sd0: float = 2.0
    class1_fraction: float = 0.5
    second_param: str = "sd"
    score_law: str = "uniform"
    data_seed: int = 0

    # costs
    delta_fp: float = 0.7
    delta_fn: float = 1.0
    beta: float = 0.3
    beta_source: str = "fixed"
    beta_low: float = 0.1
    beta_high: float = 0.5
    beta_trace: List[float] = field(default_factory=list)
    beta_amplitude: float = 0.1
    beta_period: float = 1000.0
    beta_cap: float = 1.0

    # policies
    policies: List[str] = field(default_factory=lambda: list(DEFAULT_POLICIES))
    bits: int = 4
    eta: Rate = 1.0
    epsilon: Rate = TUNED
    pseudo_loss: str = "unbiased"

    # sweeps
    beta_grid: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    ratio_grid: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0])
    eta_grid: List[float] = field(default_factory=lambda: [0.001, 0.01, 0.1, 1.0])
    bits_grid: List[int] = field(default_factory=lambda: [2, 3, 4, 5, 6, 7, 8])
    horizons: List[int] = field(default_factory=lambda: [2500, 5000, 10000, 20000])

    # run
    seed: int = 0
    seeds: int = 1
    workers: int = 1
    out: str = "results"

    def validate(self) -> "ExperimentConfig":
        """Raise ConfigError on the first invalid value"""
        if self.dataset not in DATASET_KINDS:
            raise ConfigError(f"dataset must be one of {', '.join(DATASET_KINDS)}, got '{self.dataset}'")
        if self.dataset == "csv" and not self.data_path:
            raise ConfigError("dataset 'csv' needs data_path")
        if self.beta_source not in BETA_SOURCES:
            raise ConfigError(f"beta_source must be one of {', '.join(BETA_SOURCES)}, got '{self.beta_source}'")
        if self.pseudo_loss not in PSEUDO_LOSS_VARIANTS:
            raise ConfigError(f"pseudo_loss must be 'unbiased' or 'literal', got '{self.pseudo_loss}'")
        unknown = [p for p in self.policies if p not in POLICY_NAMES]
        if unknown:
            raise ConfigError(f"unknown policies: {', '.join(unknown)}")
        if not self.policies:
            raise ConfigError("no policies configured")
        for name in ("samples", "bits", "seeds", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if any(b < 1 for b in self.bits_grid) or any(h < 1 for h in self.horizons):
            raise ConfigError("bits_grid and horizons must hold positive integers")
        for name in ("eta", "epsilon"):
            value = getattr(self, name)
            if value != TUNED and not isinstance(value, float):
                raise ConfigError(f"{name} must be a number or '{TUNED}', got '{value}'")
        self.score_law_vector(self.bits)
        self.cost_model()
        self.mixture_spec()
        return self

    def cost_model(self, beta: Optional[float] = None,
                   delta_fp: Optional[float] = None, delta_fn: Optional[float] = None) -> CostModel:
        """Cost model of this config, optionally with one sweep coordinate replaced"""
        beta = self.beta if beta is None else beta
        if self.beta_source == "fixed":
            source = FixedBeta(beta)
        elif self.beta_source == "uniform":
            source = UniformBeta(self.beta_low, self.beta_high)
        elif self.beta_source == "trace":
            source = TraceBeta(tuple(self.beta_trace))
        else:
            source = SinusoidBeta(beta, self.beta_amplitude, self.beta_period)
        return CostModel(
            delta_fp=self.delta_fp if delta_fp is None else delta_fp,
            delta_fn=self.delta_fn if delta_fn is None else delta_fn,
            beta_source=source,
            beta_cap=self.beta_cap,
        )

    def mixture_spec(self) -> MixtureSpec:
        return MixtureSpec(self.mean1, self.sd1, self.mean0, self.sd0, self.class1_fraction, self.second_param)

    def score_law_vector(self, bits: int):
        """'uniform' or 'point:<value>'"""
        if self.score_law == "uniform":
            return uniform_law(bits)
        if self.score_law.startswith("point:"):
            try:
                return point_mass(float(self.score_law.split(":", 1)[1]), bits)
            except ValueError as e:
                raise ConfigError(f"bad score_law '{self.score_law}': {e}") from e
        raise ConfigError(f"score_law must be 'uniform' or 'point:<value>', got '{self.score_law}'")

    def rates(self, bits: Optional[int] = None, horizon: Optional[int] = None) -> Tuple[float, float]:
        """(epsilon, eta), resolving 'tuned' at the given grid and horizon"""
        bits = self.bits if bits is None else bits
        horizon = self.samples if horizon is None else horizon
        tuned_epsilon, tuned_eta = tuned_params(bits, horizon, self.beta_cap)
        epsilon = tuned_epsilon if self.epsilon == TUNED else self.epsilon
        eta = tuned_eta if self.eta == TUNED else self.eta
        return epsilon, eta

    def to_env(self) -> str:
        """KEY=VALUE lines that load_config reads back into an equal config"""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name.upper()}={value}")
        return "\n".join(lines) + "\n"


PRESETS: Dict[str, Dict[str, str]] = {
    "reference": {"bits": "4", "delta_fp": "0.7", "delta_fn": "1", "samples": "10000",
                  "eta": "1", "epsilon": TUNED, "beta": "0.3"},
    "reference-low-fp": {"bits": "4", "delta_fp": "0.25", "delta_fn": "1", "samples": "10000",
                         "eta": "1", "epsilon": TUNED, "beta": "0.3"},
    "calibrated": {"dataset": "calibrated", "score_law": "uniform", "bits": "4", "delta_fp": "0.7",
                   "delta_fn": "1", "samples": "10000", "eta": TUNED, "epsilon": TUNED, "beta": "0.3"},
}


def _list_of(convert):
    def parse(text: str) -> list:
        return [convert(item.strip()) for item in text.split(",") if item.strip()]
    return parse


def _rate(text: str) -> Rate:
    text = text.strip()
    return TUNED if text.lower() == TUNED else float(text)


_FLOAT_LISTS = {"beta_trace", "beta_grid", "ratio_grid", "eta_grid"}
_INT_LISTS = {"bits_grid", "horizons"}


def _converter(name: str, default: Any):
    if name in ("eta", "epsilon"):
        return _rate
    if name in _FLOAT_LISTS:
        return _list_of(float)
    if name in _INT_LISTS:
        return _list_of(int)
    if name == "policies":
        return _list_of(str)
    if isinstance(default, bool):
        return lambda text: text.strip().lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return lambda text: text.strip()


def apply_settings(config: ExperimentConfig, settings: Dict[str, Optional[str]], origin: str) -> ExperimentConfig:
    """
    Apply string settings onto a config

    Args:
        config: Config to update in place
        settings: Field name (any case) to raw string value
        origin: Where the settings came from, for diagnostics

    Returns:
        The updated config
    """
    known = {f.name for f in fields(config)}
    for raw_key, raw_value in settings.items():
        key = raw_key.strip().lower()
        if key not in known:
            raise ConfigError(f"unknown config key '{raw_key}' in {origin}")
        if raw_value is None:
            raise ConfigError(f"config key '{raw_key}' in {origin} has no value")
        try:
            value = _converter(key, getattr(ExperimentConfig(), key))(str(raw_value))
        except ValueError as e:
            raise ConfigError(f"bad value '{raw_value}' for '{key}' in {origin}: {e}") from e
        setattr(config, key, value)
    return config


def parse_assignments(assignments: List[str]) -> Dict[str, str]:
    """KEY=VALUE strings from --set"""
    settings = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, value = item.split("=", 1)
        settings[key] = value
    return settings


def load_config(preset: Optional[str] = None, config_path: Optional[str] = None,
                assignments: Optional[List[str]] = None,
                flags: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Resolve an ExperimentConfig from all sources

    Args:
        preset: Name of a preset
        config_path: KEY=VALUE file
        assignments: --set KEY=VALUE strings
        flags: Dedicated command-line flags already parsed (None values skipped)

    Returns:
        Validated config
    """
    config = ExperimentConfig()
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (choose from {', '.join(PRESETS)})")
        apply_settings(config, PRESETS[preset], f"preset {preset}")

    if config_path:
        if not os.path.exists(config_path):
            logger.error(f"Config file not found: {config_path}")
            raise ConfigError(f"could not find config file {config_path}")
        logger.info(f"Loading config from {config_path}")
        apply_settings(config, dotenv_values(config_path), config_path)

    if assignments:
        apply_settings(config, parse_assignments(assignments), "--set")

    for key, value in (flags or {}).items():
        if value is not None:
            setattr(config, key, value)

    return config.validate()
