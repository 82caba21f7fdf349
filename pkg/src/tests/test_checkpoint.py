import json
from pathlib import Path

import numpy as np
import pytest

from lfr_augment.checkpoint import CHECKPOINT_FORMAT, load_checkpoint, save_checkpoint
from lfr_augment.data import NormalizationTransforms
from lfr_augment.errors import CheckpointError
from lfr_augment.model_core import AugmentedModel, LinearBaseline, NormalizedBaseline, step
from lfr_augment.structures import model_from_config
from lfr_augment.training import init_baseline_equivalent
from shared.config import HiddenSpec, StructureConfig

SMALL_NETS = {
    "hidden": HiddenSpec(layers=1, nodes=4),
    "encoder_hidden": HiddenSpec(layers=1, nodes=6),
}


def _trained_like(
    structure: StructureConfig, base: LinearBaseline | NormalizedBaseline
) -> AugmentedModel:
    model = model_from_config(structure, base, 2, 3, seed=4)
    init_baseline_equivalent(model, seed=4)
    rng = np.random.Generator(np.random.Philox(11))
    mask = model.params.trainable_mask()
    model.params.data[mask] += 0.01 * rng.normal(size=int(mask.sum()))
    return model


def _same_steps(first: AugmentedModel, second: AugmentedModel) -> None:
    rng = np.random.Generator(np.random.Philox(2))
    for _ in range(3):
        x = 0.1 * rng.normal(size=first.dims.n_x)
        u = rng.normal(size=first.dims.n_u)
        for a, b in zip(step(first, x, u), step(second, x, u)):
            np.testing.assert_array_equal(a, b)


class TestRoundTrip:
    @pytest.mark.parametrize(
        "structure",
        [
            StructureConfig(label="S-DP", n_x_a=2, **SMALL_NETS),
            StructureConfig(label="S-SP+O-DSO", **SMALL_NETS),
            StructureConfig(label="flexible", mode="BaOnly", n_x_a=1, n_z_a=3, n_w_a=2, **SMALL_NETS),
            StructureConfig(label="baseline", **SMALL_NETS),
        ],
    )
    def test_restored_model_steps_identically(
        self, tmp_path: Path, structure: StructureConfig, baseline: LinearBaseline
    ) -> None:
        model = _trained_like(structure, baseline)
        target = tmp_path / "checkpoint.json"
        save_checkpoint(model, target, structure, 0.02, seed=4, metrics={"best_epoch": 3})
        restored = load_checkpoint(target)
        assert restored.structure == model.structure
        assert restored.mode == model.mode
        np.testing.assert_array_equal(restored.params.data, model.params.data)
        np.testing.assert_array_equal(
            restored.params.trainable_mask(), model.params.trainable_mask()
        )
        _same_steps(model, restored)

    def test_normalization_is_restored(self, tmp_path: Path, baseline: LinearBaseline) -> None:
        norm = NormalizationTransforms(
            u_mean=np.array([0.2]),
            u_scale=np.array([0.1]),
            y_mean=np.array([0.0]),
            y_scale=np.array([50.0]),
            x_scale=np.array([40.0, 2.0, 60.0, 3.0]),
        )
        structure = StructureConfig(label="S-SP", **SMALL_NETS)
        model = _trained_like(structure, NormalizedBaseline(baseline, norm))
        model.norm = norm
        target = tmp_path / "checkpoint.json"
        save_checkpoint(model, target, structure, 0.02)
        restored = load_checkpoint(target)
        assert isinstance(restored.base, NormalizedBaseline)
        assert restored.norm is not None
        np.testing.assert_array_equal(restored.norm.x_scale, norm.x_scale)
        _same_steps(model, restored)


class TestRejection:
    def _payload(self, tmp_path: Path, baseline: LinearBaseline) -> tuple[Path, dict]:
        structure = StructureConfig(label="S-SP", **SMALL_NETS)
        target = tmp_path / "checkpoint.json"
        save_checkpoint(_trained_like(structure, baseline), target, structure, 0.02)
        return target, json.loads(target.read_text())

    def test_unknown_format(self, tmp_path: Path, baseline: LinearBaseline) -> None:
        target, payload = self._payload(tmp_path, baseline)
        assert payload["format"] == CHECKPOINT_FORMAT
        payload["format"] = "something-else/7"
        target.write_text(json.dumps(payload))
        with pytest.raises(CheckpointError):
            load_checkpoint(target)

    def test_unknown_baseline(self, tmp_path: Path, baseline: LinearBaseline) -> None:
        target, payload = self._payload(tmp_path, baseline)
        payload["baseline"]["identifier"] = "pendulum"
        target.write_text(json.dumps(payload))
        with pytest.raises(CheckpointError):
            load_checkpoint(target)

    def test_missing_parameter(self, tmp_path: Path, baseline: LinearBaseline) -> None:
        target, payload = self._payload(tmp_path, baseline)
        payload["params"].pop("W.A")
        target.write_text(json.dumps(payload))
        with pytest.raises(CheckpointError):
            load_checkpoint(target)

    def test_malformed_structure(self, tmp_path: Path, baseline: LinearBaseline) -> None:
        target, payload = self._payload(tmp_path, baseline)
        payload["structure"]["label"] = "S-XYZ"
        target.write_text(json.dumps(payload))
        with pytest.raises(CheckpointError):
            load_checkpoint(target)

    def test_unreadable_file(self, tmp_path: Path) -> None:
        target = tmp_path / "checkpoint.json"
        target.write_text("{not json")
        with pytest.raises(json.JSONDecodeError):
            load_checkpoint(target)
