from pathlib import Path

import numpy as np
import pytest

from lfr_augment.data import Dataset, fit_normalization
from lfr_augment.errors import (
    DataError,
    DivisionError,
    EvaluationDivergedError,
    InitializationError,
    RangeError,
    StageError,
)
from lfr_augment.model_core import DzwMode, LinearBaseline, NormalizedBaseline, simulate
from lfr_augment.structures import build_structure, make_baseline_model, make_flexible
from lfr_augment.training import (
    METRIC_COLUMNS,
    Adam,
    evaluate,
    evaluate_baseline,
    history_matrix,
    init_baseline_equivalent,
    pipeline_stage,
    pretrain_encoder,
    regularization_term,
    regularized_loss,
    run_pipeline,
    simulate_baseline,
    simulate_baseline_states,
    truncated_loss,
    valid_starts,
    wrap_baseline_normalized,
)
from shared.config import TrainingConfig

OPTIONS = {"n_a": 3, "n_b": 3, "encoder_hidden": (8,)}


def _ramp(n: int = 20) -> Dataset:
    return Dataset(u=np.arange(n, dtype=float), y=100.0 + np.arange(n), ts=0.02, split="est")


def _config(**overrides: object) -> TrainingConfig:
    values: dict[str, object] = {
        "T": 10,
        "batch_size": 64,
        "epochs": 1,
        "n_a": 3,
        "n_b": 3,
        "encoder_epochs": 1,
        "encoder_batch_size": 64,
    }
    values.update(overrides)
    return TrainingConfig(**values)  # type: ignore[arg-type]


@pytest.fixture
def normalized_est(
    baseline: LinearBaseline, small_splits: tuple[Dataset, Dataset, Dataset]
) -> tuple[Dataset, NormalizedBaseline]:
    """Normalized estimation split carrying scaled baseline states, and the wrapped baseline."""
    est = small_splits[0]
    norm = fit_normalization(est)
    est_ext, x_scale = simulate_baseline_states(baseline, norm.apply(est), transient=3)
    norm = norm.with_state_scale(x_scale)
    return est_ext, wrap_baseline_normalized(baseline, norm)


class TestWindows:
    def test_history_rows_hold_outputs_then_inputs(self) -> None:
        rows = history_matrix(_ramp(), n_a=2, n_b=3, starts=[3, 5])
        np.testing.assert_array_equal(rows[0], [101.0, 102.0, 0.0, 1.0, 2.0])
        np.testing.assert_array_equal(rows[1], [103.0, 104.0, 2.0, 3.0, 4.0])

    def test_valid_starts_leave_room_for_history_and_horizon(self) -> None:
        starts = valid_starts(_ramp(), lag=3, T=5)
        assert starts[0] == 3 and starts[-1] == 15

    @pytest.mark.parametrize("starts", [[2], [12], []])
    def test_out_of_range_starts(self, baseline: LinearBaseline, starts: list[int]) -> None:
        model = make_baseline_model(baseline, **OPTIONS)
        with pytest.raises(RangeError):
            truncated_loss(model, _ramp(), np.array(starts, dtype=int), T=10)


class TestLoss:
    def test_regularized_loss_adds_the_parameter_penalty(
        self, baseline: LinearBaseline
    ) -> None:
        model = make_baseline_model(baseline, **OPTIONS)
        data = _ramp(40)
        theta0 = baseline.theta * 1.1
        starts = np.array([3, 10, 20])
        total = regularized_loss(model, data, starts, 10, 2.0, theta0)
        fit = truncated_loss(model, data, starts, 10)
        penalty = regularization_term(model, 2.0, theta0)
        expected_penalty = np.sum((2.0 * (baseline.theta - theta0) / theta0) ** 2)
        assert penalty == pytest.approx(expected_penalty)
        assert total == pytest.approx(fit + penalty)

    def test_zero_nominal_parameter(self, baseline: LinearBaseline) -> None:
        model = make_baseline_model(baseline, **OPTIONS)
        theta0 = baseline.theta.copy()
        theta0[2] = 0.0
        with pytest.raises(DivisionError) as exc_info:
            regularization_term(model, 1.0, theta0)
        assert exc_info.value.parameter == "k1"


class TestAdam:
    def test_masked_coordinates_stay_fixed(self) -> None:
        data = np.array([1.0, 2.0, 3.0])
        optimizer = Adam(np.array([True, False, True]), learning_rate=0.1)
        optimizer.step(data, np.array([1.0, 1.0, -1.0]))
        assert data[1] == 2.0
        assert data[0] == pytest.approx(0.9)
        assert data[2] == pytest.approx(3.1)


class TestEncoderPrefit:
    def test_prefit_reduces_the_state_error(
        self, normalized_est: tuple[Dataset, NormalizedBaseline]
    ) -> None:
        est, wrapped = normalized_est
        model = build_structure("S-DP", wrapped, 2, (4,), **OPTIONS)
        assert model.encoder.psi_a is not None
        encoder_before = {
            name: model.params.view(name).copy() for name in model.encoder.psi_a.param_names()
        }
        initial = pretrain_encoder(model, est, _config(encoder_epochs=0))
        final = pretrain_encoder(
            model, est, _config(encoder_epochs=30, learning_rate=1e-2)
        )
        assert final < initial
        for name, value in encoder_before.items():
            np.testing.assert_array_equal(model.params.view(name), value)

    def test_needs_baseline_states(
        self, baseline: LinearBaseline, small_splits: tuple[Dataset, Dataset, Dataset]
    ) -> None:
        model = make_baseline_model(baseline, **OPTIONS)
        with pytest.raises(DataError):
            pretrain_encoder(model, small_splits[0], _config())


class TestInitialization:
    def test_unrestricted_mode_cannot_be_initialized(self, baseline: LinearBaseline) -> None:
        model = make_flexible(baseline, DzwMode.UNRESTRICTED, 0, 3, 2, (4,), **OPTIONS)
        with pytest.raises(InitializationError):
            init_baseline_equivalent(model)

    @pytest.mark.parametrize("label", ["S-SP", "O-SSO", "S-DP+O-DSO"])
    def test_initialized_model_simulates_like_the_baseline(
        self, label: str, baseline: LinearBaseline, rng: np.random.Generator
    ) -> None:
        n_x_a = 2 if label.startswith("S-DP") else 0
        model = build_structure(label, baseline, n_x_a, (4,), **OPTIONS)
        init_baseline_equivalent(model, seed=5)
        u = rng.normal(size=(200, 1))
        y_model, _ = simulate(model, np.zeros(model.dims.n_x), u)
        _, y_base = simulate_baseline(baseline, baseline.theta, u)
        np.testing.assert_allclose(y_model, y_base, atol=1e-10)


class TestEvaluation:
    def test_baseline_on_its_own_data_scores_zero(self, baseline: LinearBaseline) -> None:
        u = np.sin(np.linspace(0.0, 20.0, 300))[:, None]
        _, y = simulate_baseline(baseline, baseline.theta, u)
        data = Dataset(u=u, y=y, ts=0.02, split="test")
        assert evaluate_baseline(baseline, data) == pytest.approx(0.0, abs=1e-12)
        assert evaluate_baseline(baseline, data, "nrms") == pytest.approx(0.0, abs=1e-9)

    def test_divergence_reports_the_partial_value(
        self, baseline: LinearBaseline, small_splits: tuple[Dataset, Dataset, Dataset]
    ) -> None:
        model = make_baseline_model(baseline, **OPTIONS)
        model.set_block("A", 10.0 * np.eye(4))
        model.set_block("B_w_b", np.zeros((4, 5)))
        with pytest.raises(EvaluationDivergedError) as exc_info:
            evaluate(model, small_splits[2])
        assert exc_info.value.step < small_splits[2].N


class TestPipeline:
    def test_stage_tags_failures(self) -> None:
        with pytest.raises(StageError) as exc_info:
            with pipeline_stage("normalize"):
                Dataset.from_csv(Path("/nonexistent/est.csv"))
        assert exc_info.value.stage == "normalize"
        assert isinstance(exc_info.value.cause, DataError)

    def test_zero_epochs_keep_the_initial_parameters(
        self, baseline: LinearBaseline, small_splits: tuple[Dataset, Dataset, Dataset]
    ) -> None:
        est, val, test = small_splits
        result = run_pipeline(
            baseline,
            lambda wrapped: build_structure("S-SP", wrapped, 0, (4,), **OPTIONS),
            est,
            val,
            _config(epochs=0),
        )
        assert result.run.history == []
        assert result.run.best_epoch == 0
        np.testing.assert_array_equal(result.model.params.data, result.run.best_params.data)
        assert evaluate(result.model, test, "rmse", "zero") == pytest.approx(
            evaluate_baseline(baseline, test), rel=1e-6
        )
        assert result.model.norm is result.norm

    def test_short_run_records_history(
        self,
        tmp_path: Path,
        baseline: LinearBaseline,
        small_splits: tuple[Dataset, Dataset, Dataset],
    ) -> None:
        est, val, _ = small_splits
        result = run_pipeline(
            baseline,
            lambda wrapped: build_structure("S-SP", wrapped, 0, (4,), **OPTIONS),
            est,
            val,
            _config(epochs=2),
        )
        run = result.run
        assert [record.epoch for record in run.history] == [1, 2]
        assert run.best_epoch in (1, 2)
        assert np.isfinite(run.best_val_rmse)
        assert all(record.reg_term >= 0 for record in run.history)

        target = tmp_path / "metrics.csv"
        run.write_metrics(target, ["experiment=unit"])
        lines = target.read_text().splitlines()
        assert lines[0] == "# experiment=unit"
        assert lines[1] == ",".join(METRIC_COLUMNS)
        assert len(lines) == 4

    def test_strong_regularization_keeps_the_data_loss_non_negative(
        self, baseline: LinearBaseline, small_splits: tuple[Dataset, Dataset, Dataset]
    ) -> None:
        est, val, _ = small_splits
        result = run_pipeline(
            baseline,
            lambda wrapped: build_structure("S-SP", wrapped, 0, (4,), **OPTIONS),
            est,
            val,
            _config(epochs=2, lam=1e6, batch_size=16),
        )
        for record in result.run.history:
            assert record.reg_term > 0
            assert record.train_loss >= 0

    def test_validation_split_must_hold_a_subsection(
        self, baseline: LinearBaseline, small_splits: tuple[Dataset, Dataset, Dataset]
    ) -> None:
        est, val, _ = small_splits
        with pytest.raises(StageError) as exc_info:
            run_pipeline(
                baseline,
                lambda wrapped: build_structure("S-SP", wrapped, 0, (4,), **OPTIONS),
                est,
                val.head(8),
                _config(),
            )
        assert exc_info.value.stage == "train"
