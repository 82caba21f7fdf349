import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from shared import defaults as DEFAULTS

SPLITS = ("est", "val", "test")


def get_output_root(override: Optional[str] = None) -> Path:
    """Root for run artifacts.

    An explicit `--out` wins, then LFR_AUGMENT_OUTPUT_DIR, then ./out.
    """
    if override:
        return Path(override)
    return Path(os.environ.get("LFR_AUGMENT_OUTPUT_DIR", DEFAULTS.OUTPUT_DIR))


@dataclass
class ExperimentPaths:
    root: Path

    @property
    def log_file(self) -> Path:
        return self.root / DEFAULTS.LOG_FILE_NAME

    @property
    def checkpoint(self) -> Path:
        return self.root / DEFAULTS.CHECKPOINT_FILE_NAME

    @property
    def metrics(self) -> Path:
        return self.root / DEFAULTS.METRICS_FILE_NAME

    @property
    def results(self) -> Path:
        return self.root / DEFAULTS.RESULTS_FILE_NAME

    @property
    def config_echo(self) -> Path:
        return self.root / "experiment.json"

    def dataset(self, split: str) -> Path:
        """Layout: <root>/data/<split>.csv with a <split>.json sidecar."""
        return self.root / "data" / f"{split}.csv"


def paths_for(override: Optional[str] = None) -> ExperimentPaths:
    return ExperimentPaths(root=get_output_root(override))
