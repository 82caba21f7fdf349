"""The cmd_* functions behind the CLI subcommands.

Each command takes parsed configuration and returns its result; printing of the
user-facing summary happens here, exit codes are decided by app.cli.
"""

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from lfr_augment.benchmark import generate_dataset, make_baseline_2dof, measured_snr_db
from lfr_augment.checkpoint import load_checkpoint, save_checkpoint
from lfr_augment.data import Dataset
from lfr_augment.errors import DataError
from lfr_augment.graph import (
    BlockPatternSpec,
    WellPosednessReport,
    check_pattern,
    check_well_posed,
)
from lfr_augment.model_core import BaselineComponent, NormalizedBaseline
from lfr_augment.structures import model_from_config
from lfr_augment.training import (
    InitialState,
    Metric,
    TrainRun,
    evaluate,
    evaluate_baseline,
    pipeline_stage,
    run_pipeline,
)
from shared.config import ExperimentConfig, GenerateConfig
from shared.experiment_paths import SPLITS, ExperimentPaths

logger = logging.getLogger("global_logger")

RESULT_COLUMNS = ("checkpoint", "dataset", "metric", "value")


def load_experiment(path: Path) -> ExperimentConfig:
    return ExperimentConfig.model_validate_json(path.read_text())


def cmd_generate(
    config: ExperimentConfig, paths: ExperimentPaths, seed: Optional[int] = None
) -> list[Path]:
    """Write est/val/test CSVs with sidecars under <out>/data and print the measured SNR."""
    gen = config.generate or GenerateConfig()
    if seed is not None:
        gen = gen.model_copy(update={"seed": seed})
    logger.info(f"Generating variant {gen.variant} data with seed {gen.seed}")
    written = []
    for split, dataset in zip(SPLITS, generate_dataset(gen)):
        target = paths.dataset(split)
        dataset.to_csv(target)
        snr = measured_snr_db(dataset)
        print(f"{split}: {dataset.N} samples, measured SNR {snr:.2f} dB -> {target}")
        written.append(target)
    return written


def cmd_check(path: Path, sample_count: int = 16, seed: int = 0) -> WellPosednessReport:
    """Well-posedness report of a checkpoint or of a JSON block pattern."""
    payload = json.loads(path.read_text())
    if "format" in payload:
        model = load_checkpoint(path)
        report = check_well_posed(model, sample_count=sample_count, seed=seed)
    else:
        report = check_pattern(BlockPatternSpec.model_validate(payload))
    for line in report.summary_lines():
        print(line)
    return report


@dataclass
class TrainOutcome:
    run: TrainRun
    checkpoint: Path
    metrics: Path
    test_rmse: Optional[float] = None


def _metrics_header(config: ExperimentConfig) -> list[str]:
    lines = [f"experiment={config.name}", f"baseline={config.baseline}"]
    lines += [f"structure.{k}={v}" for k, v in config.structure.model_dump().items()]
    lines += [f"training.{k}={v}" for k, v in config.training.model_dump().items()]
    return lines


def cmd_train(
    config: ExperimentConfig, paths: ExperimentPaths, seed: Optional[int] = None
) -> TrainOutcome:
    """Run the identification pipeline and write checkpoint, metrics and a config echo."""
    if seed is not None:
        config = config.model_copy(
            update={"training": config.training.model_copy(update={"seed": seed})}
        )
    training = config.training
    paths.root.mkdir(parents=True, exist_ok=True)
    paths.config_echo.write_text(config.model_dump_json(indent=2))

    with pipeline_stage("normalize"):
        if config.data is None:
            raise DataError("experiment names no dataset paths")
        est = Dataset.from_csv(Path(config.data.est))
        val = Dataset.from_csv(Path(config.data.val))
        if config.data.max_est_samples is not None:
            est = est.head(config.data.max_est_samples)
        if est.n_u != 1 or est.n_y != 1:
            raise DataError("the mass-spring-damper baseline needs one input and one output")

    base = make_baseline_2dof(config.baseline, est.ts)
    result = run_pipeline(
        base,
        lambda wrapped: model_from_config(
            config.structure, wrapped, training.n_a, training.n_b, training.seed
        ),
        est,
        val,
        training,
    )
    run = result.run
    save_checkpoint(
        result.model,
        paths.checkpoint,
        config.structure,
        est.ts,
        seed=training.seed,
        metrics={
            "best_epoch": run.best_epoch,
            "best_val_rmse": run.best_val_rmse,
            "aborted_early": run.aborted_early,
            "encoder_mse": result.encoder_mse,
        },
    )
    run.write_metrics(paths.metrics, _metrics_header(config))
    outcome = TrainOutcome(run=run, checkpoint=paths.checkpoint, metrics=paths.metrics)

    if config.data.test is not None:
        with pipeline_stage("evaluate"):
            test = Dataset.from_csv(Path(config.data.test))
            outcome.test_rmse = evaluate(result.model, test, "rmse", "zero")
        logger.info(f"Test RMSE: {outcome.test_rmse:.6g}")
    print(
        f"best epoch {run.best_epoch}, validation RMSE {run.best_val_rmse:.6g}"
        + (" (stopped early)" if run.aborted_early else "")
    )
    return outcome


def _physical(base: BaselineComponent) -> BaselineComponent:
    return base.inner if isinstance(base, NormalizedBaseline) else base


def append_result(path: Path, checkpoint: Path, dataset: Path, metric: str, value: float) -> None:
    is_new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if is_new:
            writer.writerow(RESULT_COLUMNS)
        writer.writerow([str(checkpoint), str(dataset), metric, repr(value)])


def cmd_eval(
    checkpoint: Path,
    dataset: Path,
    paths: ExperimentPaths,
    metric: Metric = "rmse",
    initial_state: InitialState = "zero",
) -> dict[str, float]:
    """Score a checkpoint on a dataset: print RMSE and NRMS, append the chosen metric row.

    Baseline-only checkpoints are simulated as the physical baseline from a zero state.
    Other models start from `initial_state`; "zero" scores the same record as the baseline.
    """
    model = load_checkpoint(checkpoint)
    test = Dataset.from_csv(dataset)
    if (test.n_u, test.n_y) != (model.dims.n_u, model.dims.n_y):
        raise DataError(
            f"dataset has (n_u, n_y) = {(test.n_u, test.n_y)}, model expects "
            f"{(model.dims.n_u, model.dims.n_y)}"
        )
    values: dict[str, float] = {}
    for name in ("rmse", "nrms"):
        if model.structure == "baseline":
            values[name] = evaluate_baseline(
                _physical(model.base), test, name, theta=model.theta_base.copy()
            )
        else:
            values[name] = evaluate(model, test, name, initial_state)
    print(f"RMSE {values['rmse']:.6g}  NRMS {values['nrms']:.3f} %")
    append_result(paths.results, checkpoint, dataset, metric, values[metric])
    logger.info(f"{metric} of {checkpoint} on {dataset}: {values[metric]:.6g}")
    return values
