"""
Fixtures for pytest tests in the tests directory.
"""

import logging
from pathlib import Path

import numpy as np
import pytest

from lfr_augment.benchmark import generate_dataset, make_baseline_2dof
from lfr_augment.data import Dataset
from lfr_augment.model_core import LinearBaseline
from shared.config import ExperimentConfig, GenerateConfig, MultisineConfig
from shared.test_utils import create_standard_test_config


@pytest.fixture
def baseline() -> LinearBaseline:
    return make_baseline_2dof("ideal")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.Philox(1234))


@pytest.fixture(scope="session")
def small_splits() -> tuple[Dataset, Dataset, Dataset]:
    """Desk-scale benchmark data: 300-sample multisine periods."""
    config = GenerateConfig(
        variant="a", seed=3, multisine=MultisineConfig(period=300, bin_step=3)
    )
    return generate_dataset(config)


@pytest.fixture
def dataset_files(tmp_path: Path, small_splits: tuple[Dataset, Dataset, Dataset]) -> dict[str, Path]:
    paths = {}
    for split in small_splits:
        target = tmp_path / "data" / f"{split.split}.csv"
        split.to_csv(target)
        paths[split.split] = target
    return paths


@pytest.fixture
def test_config() -> ExperimentConfig:
    return create_standard_test_config()


@pytest.fixture
def test_logger() -> logging.Logger:
    return logging.getLogger("global_logger")
