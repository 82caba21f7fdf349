"""Model checkpoints as JSON: the configuration that rebuilds the model plus its parameters."""

import json
import logging
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
from pydantic import ValidationError

from lfr_augment.benchmark import make_baseline_2dof
from lfr_augment.data import NormalizationTransforms
from lfr_augment.errors import CheckpointError, ConstructionError
from lfr_augment.model_core import AugmentedModel, BaselineComponent, NormalizedBaseline
from lfr_augment.structures import model_from_config
from shared.config import StructureConfig

logger = logging.getLogger("global_logger")

CHECKPOINT_FORMAT = "lfr-augment/1"

BASELINE_REGISTRY: dict[str, Callable[[float], BaselineComponent]] = {
    "msd-2dof-ideal": lambda ts: make_baseline_2dof("ideal", ts),
    "msd-2dof-approx": lambda ts: make_baseline_2dof("approx", ts),
}


def _physical(base: BaselineComponent) -> BaselineComponent:
    return base.inner if isinstance(base, NormalizedBaseline) else base


def save_checkpoint(
    model: AugmentedModel,
    path: Path,
    structure: StructureConfig,
    ts: float,
    seed: int = 0,
    metrics: Optional[dict[str, Any]] = None,
) -> None:
    """Write everything needed to rebuild `model` without its training data."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "structure": structure.model_dump(),
        "baseline": {"identifier": _physical(model.base).identifier, "ts": ts},
        "encoder": {"n_a": model.encoder.n_a, "n_b": model.encoder.n_b},
        "seed": seed,
        "mode": model.mode.value,
        "norm": None if model.norm is None else model.norm.to_dict(),
        "params": {
            name: {
                "shape": list(model.params.slot(name).shape),
                "trainable": model.params.is_trainable(name),
                "value": model.params.view(name).ravel().tolist(),
            }
            for name in model.params.names()
        },
        "metrics": metrics or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: Path) -> AugmentedModel:
    """Rebuild the model from a checkpoint and restore its parameters.

    Raises:
        OSError, json.JSONDecodeError: the file cannot be read or parsed
        CheckpointError: the payload does not describe a model this package can rebuild
    """
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {payload.get('format')!r}")
    try:
        structure = StructureConfig.model_validate(payload["structure"])
        identifier = payload["baseline"]["identifier"]
        ts = float(payload["baseline"]["ts"])
        n_a = int(payload["encoder"]["n_a"])
        n_b = int(payload["encoder"]["n_b"])
        seed = int(payload.get("seed", 0))
        params = payload["params"]
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from e
    if identifier not in BASELINE_REGISTRY:
        raise CheckpointError(f"unknown baseline {identifier!r}")

    base = BASELINE_REGISTRY[identifier](ts)
    norm = None
    if payload.get("norm") is not None:
        norm = NormalizationTransforms.from_dict(payload["norm"])
        if norm.x_scale is not None:
            base = NormalizedBaseline(base, norm)
    try:
        model = model_from_config(structure, base, n_a, n_b, seed)
    except ConstructionError as e:
        raise CheckpointError(f"checkpoint structure cannot be rebuilt: {e}") from e
    model.norm = norm

    if set(params) != set(model.params.names()):
        raise CheckpointError("checkpoint parameters do not match the rebuilt model")
    for name, entry in params.items():
        value = np.asarray(entry["value"], dtype=np.float64).reshape(entry["shape"])
        if value.shape != model.params.slot(name).shape:
            raise CheckpointError(f"parameter {name} has shape {value.shape}")
        model.params.set(name, value)
        model.params.set_trainable(name, bool(entry["trainable"]))
    if model.mode.value != payload.get("mode", model.mode.value):
        raise CheckpointError("checkpoint mode differs from the rebuilt structure")
    logger.info(f"Loaded {model!r} from {path}")
    return model
