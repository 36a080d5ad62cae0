"""Shared fixtures for the offloading toolkit tests."""

import logging

import numpy as np
import pytest

from Offloader.data.generate import Dataset
from Offloader.processing.core import CostModel, FixedBeta


def make_dataset(cells, labels, bits, betas=None):
    """Dataset from plain lists of grid cells and remote labels"""
    return Dataset(np.array(cells), np.array(labels), bits, beta_overrides=betas)


@pytest.fixture(autouse=True)
def release_log_handlers():
    """Close the file handlers a CLI run attaches to the root logger"""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        handler.close()
        root.removeHandler(handler)


@pytest.fixture
def costs():
    """The reference operating point: delta_fp = 0.7, delta_fn = 1, beta = 0.3"""
    return CostModel(delta_fp=0.7, delta_fn=1.0, beta_source=FixedBeta(0.3))


@pytest.fixture
def toy_dataset():
    """f = 0.25, 0.5, 0.75 on the 2-bit grid with remote labels 1, 1, 0"""
    return make_dataset([1, 2, 3], [1, 1, 0], bits=2)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
