import pytest
from pydantic import ValidationError

from shared import defaults as DEFAULTS
from shared.config import (
    ExperimentConfig,
    GenerateConfig,
    HiddenSpec,
    StructureConfig,
    TrainingConfig,
)


class TestStructureConfig:
    def test_alias_is_normalized(self) -> None:
        assert StructureConfig(label="O-SSP").label == "O-SSO"

    def test_unknown_label(self) -> None:
        with pytest.raises(ValidationError):
            StructureConfig(label="S-XYZ")

    def test_static_structure_rejects_augmented_states(self) -> None:
        with pytest.raises(ValidationError):
            StructureConfig(label="O-SSI", n_x_a=1)
        assert StructureConfig(label="O-DSI", n_x_a=1).n_x_a == 1

    def test_flexible_needs_latent_sizes(self) -> None:
        with pytest.raises(ValidationError):
            StructureConfig(label="flexible", n_z_a=3)
        config = StructureConfig(label="flexible", mode="AbOnly", n_z_a=3, n_w_a=2)
        assert config.mode == "AbOnly"

    def test_unrestricted_flexible_rejected(self) -> None:
        with pytest.raises(ValidationError):
            StructureConfig(label="flexible", mode="Unrestricted", n_z_a=3, n_w_a=2)

    def test_hidden_widths(self) -> None:
        assert HiddenSpec(layers=3, nodes=5).widths == (5, 5, 5)
        assert HiddenSpec(layers=0).widths == ()


class TestTrainingConfig:
    def test_defaults(self) -> None:
        config = TrainingConfig()
        assert config.T == DEFAULTS.TRUNCATION_LENGTH
        assert config.n_a == config.n_b == DEFAULTS.ENCODER_LAG
        assert config.lam == DEFAULTS.REGULARIZATION_LAMBDA

    def test_lags_cannot_both_be_zero(self) -> None:
        with pytest.raises(ValidationError):
            TrainingConfig(n_a=0, n_b=0)
        assert TrainingConfig(n_a=0, n_b=2).n_b == 2

    def test_truncation_needs_two_steps(self) -> None:
        with pytest.raises(ValidationError):
            TrainingConfig(T=1)


class TestGenerateConfig:
    def test_filter_cutoff_below_nyquist(self) -> None:
        with pytest.raises(ValidationError):
            GenerateConfig(variant="c", lpf_cutoff_hz=30.0)

    def test_unknown_variant(self) -> None:
        with pytest.raises(ValidationError):
            GenerateConfig(variant="d")  # type: ignore[arg-type]


def test_experiment_round_trips_through_json() -> None:
    config = ExperimentConfig(
        name="s-dp", structure=StructureConfig(label="S-DP", n_x_a=2), generate=GenerateConfig()
    )
    restored = ExperimentConfig.model_validate_json(config.model_dump_json())
    assert restored == config
