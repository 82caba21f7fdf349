"""
Identification pipeline: normalization, baseline state simulation, encoder pre-fit,
baseline-equivalent initialization and truncated multiple-shooting training with a
physics-guided regularizer.
"""

import csv
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterator, Literal, Optional, Sequence

import numpy as np

from lfr_augment.autodiff import NumpyOps, ParamVector, grad
from lfr_augment.data import Dataset, NormalizationTransforms, fit_normalization
from lfr_augment.errors import (
    DataError,
    DivisionError,
    EvaluationDivergedError,
    InitializationError,
    LfrAugmentException,
    NumericError,
    RangeError,
    SimulationDivergedError,
    StageError,
    TrainingAbortedError,
)
from lfr_augment.model_core import (
    DIVERGENCE_LIMIT,
    THETA_BASE,
    AugmentedModel,
    BaselineComponent,
    DzwMode,
    ModelEvaluation,
    NormalizedBaseline,
    encoder_estimate,
    simulate,
)
from shared.config import TrainingConfig
from shared.interfaces import ArrayOps

logger = logging.getLogger("global_logger")

__all__ = [
    "Adam",
    "Dataset",
    "EpochRecord",
    "InitialState",
    "NormalizationTransforms",
    "PipelineResult",
    "TrainRun",
    "TrainingConfig",
    "evaluate",
    "evaluate_baseline",
    "fit_normalization",
    "history_matrix",
    "init_baseline_equivalent",
    "pipeline_stage",
    "pretrain_encoder",
    "regularized_loss",
    "run_pipeline",
    "simulate_baseline_states",
    "train",
    "truncated_loss",
    "valid_starts",
    "wrap_baseline_normalized",
]

Metric = Literal["rmse", "nrms"]
InitialState = Literal["encoder", "zero"]

AUG_STATE_RADIUS = 0.5


# ---- normalization ----


def wrap_baseline_normalized(
    base: BaselineComponent, norm: NormalizationTransforms
) -> NormalizedBaseline:
    """Baseline acting on normalized signals; theta stays in physical units."""
    return NormalizedBaseline(base, norm)


def simulate_baseline(
    base: BaselineComponent, theta: Any, u: Any, x0: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Physical baseline run: states before each sample (N, n_x) and outputs (N, n_y)."""
    u_arr = np.asarray(u, dtype=np.float64).reshape(-1, base.n_u)
    ops = NumpyOps()
    prepared = base.prepare(ops, np.asarray(theta, dtype=np.float64))
    x = np.zeros(base.n_x) if x0 is None else np.asarray(x0, dtype=np.float64)
    xs = np.zeros((u_arr.shape[0], base.n_x))
    ys = np.zeros((u_arr.shape[0], base.n_y))
    for k in range(u_arr.shape[0]):
        xs[k] = x
        f, h = base.evaluate(ops, prepared, x, u_arr[k])
        ys[k] = h
        x = np.asarray(f)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > DIVERGENCE_LIMIT:
            raise SimulationDivergedError(
                step=k, message="baseline state left the admissible range", partial_outputs=ys[: k + 1]
            )
    return xs, ys


def simulate_baseline_states(
    base: BaselineComponent,
    est: Dataset,
    theta0: Optional[Any] = None,
    transient: int = 0,
) -> tuple[Dataset, np.ndarray]:
    """Extend the estimation split with normalized baseline states.

    The physical baseline runs from a zero state on the de-normalized input. The state
    scaling (inverse standard deviations) ignores the first `transient` samples.

    Returns:
        (extended dataset, x_scale)
    """
    theta = base.theta if theta0 is None else np.asarray(theta0, dtype=np.float64)
    u_phys = est.u if est.norm is None else est.norm.denormalize_u(est.u)
    xs, _ = simulate_baseline(base, theta, u_phys)
    if transient >= est.N:
        raise DataError(f"transient of {transient} samples leaves no baseline states")
    std = xs[transient:].std(axis=0)
    x_scale = np.ones(base.n_x)
    scaled = std > 0
    if not np.all(scaled):
        logger.warning(f"Baseline states {np.flatnonzero(~scaled).tolist()} are constant; unscaled")
    x_scale[scaled] = 1.0 / std[scaled]
    logger.info(f"Baseline state std: {std}")
    return replace(est, x_base=xs * x_scale), x_scale


# ---- data windows ----


def valid_starts(data: Dataset, lag: int, T: int) -> np.ndarray:
    """Subsection starts k with a full encoder history and T samples ahead."""
    return np.arange(lag, data.N - T + 1)


def _check_starts(data: Dataset, starts: np.ndarray, lag: int, T: int) -> np.ndarray:
    starts = np.asarray(starts, dtype=np.int64).ravel()
    if starts.size == 0:
        raise RangeError("no subsection starts given")
    if starts.min() < lag or starts.max() + T > data.N:
        raise RangeError(
            f"subsection starts must lie in [{lag}, {data.N - T}], "
            f"got [{int(starts.min())}, {int(starts.max())}]"
        )
    return starts


def history_matrix(data: Dataset, n_a: int, n_b: int, starts: Any) -> np.ndarray:
    """Encoder inputs for each start k: y[k-n_a:k] then u[k-n_b:k], oldest first."""
    starts = np.asarray(starts, dtype=np.int64).ravel()
    y_idx = starts[:, None] + np.arange(-n_a, 0)[None, :]
    u_idx = starts[:, None] + np.arange(-n_b, 0)[None, :]
    y_part = data.y[y_idx].reshape(starts.size, -1)
    u_part = data.u[u_idx].reshape(starts.size, -1)
    return np.concatenate([y_part, u_part], axis=1)


# ---- optimizer ----


class Adam:
    """Adam on the flat parameter vector, restricted to the trainable mask."""

    def __init__(
        self,
        mask: np.ndarray,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.mask = np.asarray(mask, dtype=bool)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(self.mask.size)
        self.v = np.zeros(self.mask.size)
        self.t = 0

    @classmethod
    def from_config(cls, mask: np.ndarray, config: TrainingConfig) -> "Adam":
        return cls(mask, config.learning_rate, config.beta1, config.beta2, config.eps)

    def step(self, data: np.ndarray, gradient: np.ndarray) -> None:
        self.t += 1
        g = np.where(self.mask, gradient, 0.0)
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        data[self.mask] -= self.learning_rate * m_hat[self.mask] / (
            np.sqrt(v_hat[self.mask]) + self.eps
        )


# ---- encoder pre-fit ----


def pretrain_encoder(model: AugmentedModel, est: Dataset, config: TrainingConfig) -> float:
    """Fit the baseline encoder head to the simulated baseline states.

    Only psi_b is trained; psi_a keeps its Xavier initialization.

    Returns:
        Mean squared state error over all valid samples after fitting
    """
    if est.x_base is None:
        raise DataError("estimation split has no baseline states; run simulate_baseline_states")
    encoder = model.encoder
    lag = encoder.lag
    if est.N <= lag:
        raise DataError(f"{est.N} samples cannot fill an encoder history of {lag}")
    starts = np.arange(lag, est.N)
    histories = history_matrix(est, encoder.n_a, encoder.n_b, starts)
    targets = est.x_base[starts]
    params = model.params
    head_names = set(encoder.psi_b.param_names())
    mask = np.zeros(len(params), dtype=bool)
    for name in head_names:
        slot = params.slot(name)
        mask[slot.offset : slot.stop] = True
    optimizer = Adam(mask, config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.Generator(np.random.Philox(config.seed))

    def mse_builder(rows: np.ndarray) -> Callable[[ArrayOps], Any]:
        def build(ops: ArrayOps) -> Any:
            estimate = encoder.psi_b.forward(ops, ops.constant(histories[rows]))
            error = ops.sub(estimate, ops.constant(targets[rows]))
            return ops.scale(ops.squared_norm(error), 1.0 / rows.size)

        return build

    for epoch in range(config.encoder_epochs):
        order = rng.permutation(starts.size)
        for first in range(0, order.size, config.encoder_batch_size):
            rows = order[first : first + config.encoder_batch_size]
            _, gradient = grad(mse_builder(rows), params)
            optimizer.step(params.data, gradient)
        if (epoch + 1) % 50 == 0:
            logger.debug(f"Encoder pre-fit epoch {epoch + 1}")
    final = float(mse_builder(np.arange(starts.size))(NumpyOps(params)))
    logger.info(f"Encoder pre-fit MSE: {final:.6g}")
    return final


# ---- initialization ----


def _aug_state_map(model: AugmentedModel) -> np.ndarray:
    """Linear self-map of x_a at initialization, when phi_aug is its bypass."""
    dims = model.dims
    a_rows = slice(dims.n_x_b, dims.n_x)
    phi = model.aug.jacobian(np.zeros(dims.n_z_a))
    return model.block("A")[a_rows, a_rows] + (
        model.block("B_w_a")[a_rows] @ phi @ model.block("C_z_a")[:, a_rows]
    )


def _stabilize_aug_states(model: AugmentedModel) -> None:
    if model.dims.n_x_a == 0:
        return
    radius = float(np.max(np.abs(np.linalg.eigvals(_aug_state_map(model)))))
    if radius <= AUG_STATE_RADIUS:
        return
    factor = AUG_STATE_RADIUS / radius
    nb = model.dims.n_x_b
    if model.init_plan is not None:
        for head in model.aug.heads:
            rows = model.init_plan[head.prefix].free_rows
            w_a = model.params.view(head.bypass_name)
            w_a[rows] *= factor
    else:
        for name in ("A", "B_u", "B_w_a"):
            model.block(name)[nb:] *= factor
    logger.debug(f"Rescaled augmented-state rows, spectral radius {radius:.3g} -> {AUG_STATE_RADIUS}")


def init_baseline_equivalent(model: AugmentedModel, seed: int = 0) -> AugmentedModel:
    """Make the model reproduce its baseline while keeping augmented paths alive.

    The ResNet output layers start at zero, so every head acts through its bypass W_a.
    Factory structures take W_a from their bypass plan with random augmented-state rows;
    a flexible LFR gets selector baseline paths and U(-1, 1) values in all free entries.
    The x_a self-map is finally scaled to a spectral radius of at most 0.5.

    Raises:
        InitializationError: the mode has no baseline-equivalent initialization
    """
    if model.mode == DzwMode.UNRESTRICTED:
        raise InitializationError("Unrestricted D_zw admits no baseline-equivalent initialization")
    rng = np.random.Generator(np.random.Philox(seed))
    model.aug.zero_nonlinear_output()
    if model.init_plan is not None:
        for head in model.aug.heads:
            if head.prefix not in model.init_plan:
                raise InitializationError(f"no bypass plan for head {head.prefix}")
            plan = model.init_plan[head.prefix]
            w_a = plan.bypass.copy()
            n_free = int(plan.free_rows.sum())
            w_a[plan.free_rows] = rng.uniform(-1.0, 1.0, size=(n_free, head.n_in))
            model.params.set(head.bypass_name, w_a)
    else:
        _init_flexible(model, rng)
    _stabilize_aug_states(model)
    logger.info(f"Initialized {model.structure} as its baseline")
    return model


def _init_flexible(model: AugmentedModel, rng: np.random.Generator) -> None:
    dims = model.dims
    nb, nu, ny = dims.n_x_b, dims.n_u, dims.n_y

    def uniform(shape: tuple[int, ...]) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=shape)

    for head in model.aug.heads:
        model.params.set(head.bypass_name, uniform((head.n_out, head.n_in)))

    def with_aug_rows(block: str) -> np.ndarray:
        value = np.zeros(dims.block_shape(block))
        value[nb:] = uniform(value[nb:].shape)
        return value

    blocks: dict[str, np.ndarray] = {
        "A": with_aug_rows("A"),
        "B_u": with_aug_rows("B_u"),
        "B_w_a": with_aug_rows("B_w_a"),
        "C_y": np.zeros((ny, dims.n_x)),
        "D_yu": np.zeros((ny, nu)),
        "D_yw_a": np.zeros((ny, dims.n_w_a)),
        "C_z_a": uniform((dims.n_z_a, dims.n_x)),
        "D_zu_a": uniform((dims.n_z_a, nu)),
    }
    b_w_b = np.zeros((dims.n_x, dims.n_w_b))
    b_w_b[:nb, :nb] = np.eye(nb)
    d_yw_b = np.zeros((ny, dims.n_w_b))
    d_yw_b[:, nb:] = np.eye(ny)
    blocks["B_w_b"] = b_w_b
    blocks["D_yw_b"] = d_yw_b

    select_x = np.zeros((dims.n_z_b, dims.n_x))
    select_x[:nb, :nb] = np.eye(nb)
    select_u = np.zeros((dims.n_z_b, nu))
    select_u[nb:] = np.eye(nu)
    if model.mode == DzwMode.BA_ONLY:
        # z_b = C_z_b x + D_zu_b u + D_zw_ba W_a z_a must still equal (x_b, u)
        d_zw_ba = uniform((dims.n_z_b, dims.n_w_a))
        phi = model.aug.jacobian(np.zeros(dims.n_z_a))
        blocks["D_zw_ba"] = d_zw_ba
        blocks["C_z_b"] = select_x - d_zw_ba @ phi @ blocks["C_z_a"]
        blocks["D_zu_b"] = select_u - d_zw_ba @ phi @ blocks["D_zu_a"]
    else:
        blocks["C_z_b"] = select_x
        blocks["D_zu_b"] = select_u
        if model.mode == DzwMode.AB_ONLY:
            blocks["D_zw_ab"] = uniform((dims.n_z_a, dims.n_w_b))
    for name, value in blocks.items():
        model.set_block(name, value)


# ---- losses ----


def _truncated_builder(
    model: AugmentedModel, data: Dataset, starts: np.ndarray, T: int
) -> Callable[[ArrayOps], Any]:
    encoder = model.encoder
    histories = history_matrix(data, encoder.n_a, encoder.n_b, starts)
    steps = starts[:, None] + np.arange(T)[None, :]
    u_win = data.u[steps]
    y_win = data.y[steps]

    def build(ops: ArrayOps) -> Any:
        evaluation = ModelEvaluation(model, ops)
        x = evaluation.encode(ops.constant(histories))
        total = None
        for t in range(T):
            x, y = evaluation.step(x, ops.constant(u_win[:, t]))
            term = ops.squared_norm(ops.sub(y, ops.constant(y_win[:, t])))
            total = term if total is None else ops.add(total, term)
        return ops.scale(total, 1.0 / (starts.size * T))

    return build


def _penalty_builder(
    model: AugmentedModel, lam: float, theta0: Any
) -> Callable[[ArrayOps], Any]:
    theta0 = np.asarray(theta0, dtype=np.float64).ravel()
    zero = np.flatnonzero(theta0 == 0)
    if zero.size:
        raise DivisionError(model.base.param_names[int(zero[0])])
    weights = lam / theta0

    def build(ops: ArrayOps) -> Any:
        deviation = ops.sub(ops.param(THETA_BASE), ops.constant(theta0))
        return ops.squared_norm(ops.mul(deviation, ops.constant(weights)))

    return build


def _regularized_builder(
    model: AugmentedModel, data: Dataset, starts: np.ndarray, T: int, lam: float, theta0: Any
) -> Callable[[ArrayOps], Any]:
    fit = _truncated_builder(model, data, starts, T)
    penalty = _penalty_builder(model, lam, theta0)

    def build(ops: ArrayOps) -> Any:
        return ops.add(fit(ops), penalty(ops))

    return build


def truncated_loss(model: AugmentedModel, data: Dataset, starts: Any, T: int) -> float:
    """Mean over subsections of the mean squared T-step simulation error."""
    starts = _check_starts(data, np.asarray(starts), model.encoder.lag, T)
    return float(_truncated_builder(model, data, starts, T)(NumpyOps(model.params)))


def regularization_term(model: AugmentedModel, lam: float, theta0: Any) -> float:
    return float(_penalty_builder(model, lam, theta0)(NumpyOps(model.params)))


def regularized_loss(
    model: AugmentedModel, data: Dataset, starts: Any, T: int, lam: float, theta0: Any
) -> float:
    """Truncated loss plus ||lam * diag(theta0)^-1 (theta_base - theta0)||^2."""
    starts = _check_starts(data, np.asarray(starts), model.encoder.lag, T)
    builder = _regularized_builder(model, data, starts, T, lam, theta0)
    return float(builder(NumpyOps(model.params)))


def regularized_loss_grad(
    model: AugmentedModel, data: Dataset, starts: Any, T: int, lam: float, theta0: Any
) -> tuple[float, np.ndarray]:
    starts = _check_starts(data, np.asarray(starts), model.encoder.lag, T)
    return grad(_regularized_builder(model, data, starts, T, lam, theta0), model.params)


# ---- evaluation ----


def _score(y_true: np.ndarray, y_hat: np.ndarray, metric: Metric) -> float:
    error = y_true - y_hat
    if metric == "rmse":
        return float(np.sqrt(np.mean(error**2)))
    if metric == "nrms":
        rmse = np.sqrt(np.mean(error**2, axis=0))
        return float(np.mean(rmse / y_true.std(axis=0)) * 100.0)
    raise DataError(f"unknown metric {metric!r}")


def _normalized(model: AugmentedModel, data: Dataset) -> Dataset:
    if data.norm is None and model.norm is not None:
        return model.norm.apply(data)
    return data


def evaluate(
    model: AugmentedModel,
    test: Dataset,
    metric: Metric = "rmse",
    initial_state: InitialState = "encoder",
) -> float:
    """Simulation error in output units.

    With `initial_state="encoder"` the run starts at k = max(n_a, n_b) from the encoder
    estimate; with "zero" it covers the whole record from rest, like evaluate_baseline.
    NRMS is reported in percent of the per-channel output standard deviation.

    Raises:
        EvaluationDivergedError: the simulation diverged; carries the partial-horizon value
    """
    data = _normalized(model, test)
    encoder = model.encoder
    if initial_state == "zero":
        k0 = 0
        x0 = np.zeros(model.dims.n_x)
    else:
        k0 = encoder.lag
        if data.N <= k0:
            raise DataError(f"{data.split} split is shorter than the encoder history")
        x0 = encoder_estimate(
            encoder, data.y[k0 - encoder.n_a : k0], data.u[k0 - encoder.n_b : k0]
        )
    y_true = data.raw_y()[k0:]
    try:
        y_hat, _ = simulate(model, x0, data.u[k0:])
    except SimulationDivergedError as e:
        partial = np.asarray(e.partial_outputs)
        if data.norm is not None:
            partial = data.norm.denormalize_y(partial)
        value = _score(y_true[: partial.shape[0]], partial, metric) if partial.size else float("inf")
        logger.warning(f"Evaluation diverged at step {e.step}; partial {metric} {value:.4g}")
        raise EvaluationDivergedError(e.step, value) from e
    if data.norm is not None:
        y_hat = data.norm.denormalize_y(y_hat)
    return _score(y_true, y_hat, metric)


def evaluate_baseline(
    base: BaselineComponent,
    test: Dataset,
    metric: Metric = "rmse",
    skip: int = 0,
    theta: Optional[Any] = None,
) -> float:
    """Physical baseline simulated from a zero state over the whole record.

    `theta` defaults to the nominal parameters; pass calibrated ones to score a trained
    baseline-only model.
    """
    u_phys = test.u if test.norm is None else test.norm.denormalize_u(test.u)
    _, y_hat = simulate_baseline(base, base.theta if theta is None else theta, u_phys)
    return _score(test.raw_y()[skip:], y_hat[skip:], metric)


# ---- training loop ----


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    reg_term: float
    val_rmse: float
    val_trunc_loss: float


METRIC_COLUMNS = ("epoch", "train_loss", "reg_term", "val_rmse", "val_trunc_loss")


@dataclass
class TrainRun:
    best_params: ParamVector
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_rmse: float = float("inf")
    aborted_early: bool = False

    def write_metrics(self, path: Path, header_lines: Sequence[str] = ()) -> None:
        """CSV of the epoch history, preceded by `#`-prefixed provenance lines."""
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            for line in header_lines:
                f.write(f"# {line}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(METRIC_COLUMNS)
            for record in self.history:
                writer.writerow(
                    [
                        record.epoch,
                        repr(record.train_loss),
                        repr(record.reg_term),
                        repr(record.val_rmse),
                        repr(record.val_trunc_loss),
                    ]
                )


def _validation_starts(val: Dataset, lag: int, T: int) -> np.ndarray:
    starts = np.arange(lag, val.N - T + 1, T)
    if starts.size == 0:
        raise DataError(f"validation split of {val.N} samples cannot hold one subsection")
    return starts


def train(
    model: AugmentedModel,
    est: Dataset,
    val: Dataset,
    config: TrainingConfig,
    theta0: Optional[Any] = None,
) -> TrainRun:
    """Adam over randomly started subsections, selecting the best validation RMSE.

    Starts are drawn without replacement within an epoch. The model ends up holding the
    best parameters seen; with zero epochs those are the initial ones.

    Raises:
        TrainingAbortedError: the batch loss became non-finite
    """
    theta0 = model.base.theta if theta0 is None else np.asarray(theta0, dtype=np.float64)
    lag = model.encoder.lag
    starts = valid_starts(est, lag, config.T)
    if starts.size == 0:
        raise DataError(f"estimation split of {est.N} samples holds no subsection of {config.T}")
    val_starts = _validation_starts(val, lag, config.T)
    rng = np.random.Generator(np.random.Philox(config.seed))
    optimizer = Adam.from_config(model.params.trainable_mask(), config)
    run = TrainRun(best_params=model.copy_params())
    diverged = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(starts)
        losses = []
        penalties = []
        for batch, first in enumerate(range(0, order.size, config.batch_size)):
            subset = order[first : first + config.batch_size]
            builder = _regularized_builder(model, est, subset, config.T, config.lam, theta0)
            try:
                loss, gradient = grad(builder, model.params)
            except NumericError as e:
                raise TrainingAbortedError(epoch, batch) from e
            if not np.isfinite(loss) or not np.all(np.isfinite(gradient)):
                raise TrainingAbortedError(epoch, batch)
            penalties.append(regularization_term(model, config.lam, theta0))
            optimizer.step(model.params.data, gradient)
            losses.append(loss)
            logger.debug(f"epoch {epoch} batch {batch}: loss {loss:.6g}")

        if epoch % config.val_every != 0 and epoch != config.epochs:
            continue
        # penalty before each Adam step, matching the batch losses
        reg = float(np.mean(penalties))
        try:
            val_rmse = evaluate(model, val, "rmse")
            diverged = 0
        except EvaluationDivergedError:
            val_rmse = float("nan")
            diverged += 1
        try:
            val_trunc = truncated_loss(model, val, val_starts, config.T)
        except LfrAugmentException:
            val_trunc = float("nan")
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)) - reg,
            reg_term=reg,
            val_rmse=val_rmse,
            val_trunc_loss=val_trunc,
        )
        run.history.append(record)
        logger.info(
            f"Epoch {epoch}: train {record.train_loss:.6g}, reg {reg:.3g}, "
            f"val rmse {val_rmse:.6g}, val trunc {val_trunc:.6g}"
        )
        if np.isfinite(val_rmse) and val_rmse < run.best_val_rmse:
            run.best_val_rmse = val_rmse
            run.best_epoch = epoch
            run.best_params = model.copy_params()
        if diverged >= config.divergence_patience:
            logger.warning(f"Validation diverged {diverged} times in a row; stopping at epoch {epoch}")
            run.aborted_early = True
            break

    model.load_params(run.best_params)
    return run


# ---- pipeline ----


STAGES = (
    "normalize",
    "simulate_baseline",
    "wrap",
    "build",
    "pretrain_encoder",
    "init",
    "train",
    "evaluate",
)


@contextmanager
def pipeline_stage(stage: str) -> Iterator[None]:
    """Tag any failure inside the block with the pipeline stage."""
    logger.info(f"Stage: {stage}")
    try:
        yield
    except StageError:
        raise
    except (LfrAugmentException, OSError, ValueError, KeyError) as e:
        logger.error(f"Stage {stage} failed: {e}")
        raise StageError(stage, e) from e


@dataclass
class PipelineResult:
    model: AugmentedModel
    run: TrainRun
    norm: NormalizationTransforms
    est: Dataset
    val: Dataset
    encoder_mse: float


def run_pipeline(
    base: BaselineComponent,
    model_factory: Callable[[BaselineComponent], AugmentedModel],
    est: Dataset,
    val: Dataset,
    config: TrainingConfig,
) -> PipelineResult:
    """Normalize, simulate the baseline, wrap it, build, pre-fit the encoder,
    initialize and train. Failures surface as StageError tagged with the stage."""
    lag = max(config.n_a, config.n_b)
    with pipeline_stage("normalize"):
        norm = fit_normalization(est)
        est_n = norm.apply(est)
        val_n = norm.apply(val)
    with pipeline_stage("simulate_baseline"):
        est_ext, x_scale = simulate_baseline_states(base, est_n, base.theta, transient=lag)
        norm = norm.with_state_scale(x_scale)
        est_ext = replace(est_ext, norm=norm)
        val_n = replace(val_n, norm=norm)
    with pipeline_stage("wrap"):
        wrapped = wrap_baseline_normalized(base, norm)
    with pipeline_stage("build"):
        model = model_factory(wrapped)
        model.norm = norm
    with pipeline_stage("pretrain_encoder"):
        if model.encoder.lag != lag:
            raise DataError("model encoder lags differ from the training configuration")
        encoder_mse = pretrain_encoder(model, est_ext, config)
    with pipeline_stage("init"):
        init_baseline_equivalent(model, config.seed)
    with pipeline_stage("train"):
        run = train(model, est_ext, val_n, config)
    return PipelineResult(
        model=model, run=run, norm=norm, est=est_ext, val=val_n, encoder_mse=encoder_mse
    )
