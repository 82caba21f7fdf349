"""
Mass-spring-damper benchmark: the 3-DOF data-generating chain with a hardening spring,
its input saturation and output filter variants, multisine excitation and the linear
2-DOF baseline.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Literal, Optional

import numpy as np

from lfr_augment.data import Dataset
from lfr_augment.errors import SimulationDivergedError, SpecError
from lfr_augment.model_core import LinearBaseline
from shared import defaults as DEFAULTS
from shared.config import GenerateConfig

logger = logging.getLogger("global_logger")

Variant = Literal["a", "b", "c"]
ParamSet = Literal["ideal", "approx"]

BASELINE_PARAM_NAMES = ("m1", "m2", "k1", "k2", "c1", "c2")
STATE_LIMIT = 1e6


@dataclass(frozen=True)
class MsdParams:
    masses: tuple[float, float, float] = DEFAULTS.MSD_MASSES
    springs: tuple[float, float, float] = DEFAULTS.MSD_SPRINGS
    dampers: tuple[float, float, float] = DEFAULTS.MSD_DAMPERS
    hardening: float = DEFAULTS.MSD_HARDENING

    def __post_init__(self) -> None:
        if min(self.masses) <= 0:
            raise SpecError("masses must be positive")
        if min(self.springs) < 0 or min(self.dampers) < 0 or self.hardening < 0:
            raise SpecError("springs, dampers and hardening must be non-negative")

    @classmethod
    def from_config(cls, config: GenerateConfig) -> "MsdParams":
        return cls(
            masses=tuple(config.masses),
            springs=tuple(config.springs),
            dampers=tuple(config.dampers),
            hardening=config.hardening,
        )


@dataclass(frozen=True)
class SystemConfig:
    variant: Variant = "a"
    ts: float = DEFAULTS.SAMPLING_TIME_SEC
    saturation_level: float = DEFAULTS.SATURATION_LEVEL
    lpf_cutoff_hz: float = DEFAULTS.LPF_CUTOFF_HZ

    def __post_init__(self) -> None:
        if self.variant not in ("a", "b", "c"):
            raise SpecError(f"unknown variant {self.variant!r}")
        if self.ts <= 0:
            raise SpecError("sampling time must be positive")

    def saturate(self, u: np.ndarray) -> np.ndarray:
        if self.variant != "b":
            return u
        return self.saturation_level * np.tanh(u / self.saturation_level)

    @property
    def saturation_descriptor(self) -> str:
        level = f"{self.saturation_level:g}"
        return f"{level}tanh(u/{level})"

    @property
    def lpf_alpha(self) -> float:
        return float(np.exp(-2.0 * np.pi * self.lpf_cutoff_hz * self.ts))

    def filter_output(self, y: np.ndarray) -> np.ndarray:
        """First-order low-pass filter of variant c, started at rest."""
        if self.variant != "c":
            return y
        alpha = self.lpf_alpha
        out = np.zeros_like(y)
        state = 0.0
        for k, value in enumerate(y):
            state = alpha * state + (1.0 - alpha) * value
            out[k] = state
        return out


@dataclass(frozen=True)
class MultisineSpec:
    period: int
    bins: np.ndarray
    rms: float
    seed: int
    ts: float = DEFAULTS.SAMPLING_TIME_SEC

    def __post_init__(self) -> None:
        bins = np.asarray(self.bins, dtype=np.int64).ravel()
        if bins.size == 0:
            raise SpecError("multisine needs at least one frequency bin")
        if np.any(bins <= 0) or np.any(2 * bins >= self.period):
            raise SpecError("multisine bins must lie strictly between 0 and Nyquist")
        if len(np.unique(bins)) != bins.size:
            raise SpecError("multisine bins must be distinct")
        if self.rms <= 0:
            raise SpecError("target RMS must be positive")
        object.__setattr__(self, "bins", bins)

    @property
    def frequencies(self) -> np.ndarray:
        return self.bins / (self.period * self.ts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "period": self.period,
            "n_bins": int(self.bins.size),
            "max_frequency_hz": float(self.frequencies.max()),
            "rms": self.rms,
            "seed": self.seed,
        }


def default_bins(
    period: int = DEFAULTS.MULTISINE_PERIOD, step: int = DEFAULTS.MULTISINE_BIN_STEP
) -> np.ndarray:
    """Every `step`-th DFT bin strictly below Nyquist."""
    return np.arange(step, (period + 1) // 2, step, dtype=np.int64)


def generate_multisine(spec: MultisineSpec) -> np.ndarray:
    """One period of a random-phase multisine scaled to the target RMS."""
    rng = np.random.Generator(np.random.Philox(spec.seed))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.bins.size)
    spectrum = np.zeros(spec.period // 2 + 1, dtype=np.complex128)
    spectrum[spec.bins] = np.exp(1j * phases)
    signal = np.fft.irfft(spectrum, n=spec.period)
    return signal * (spec.rms / np.sqrt(np.mean(signal**2)))


def msd_derivatives(state: np.ndarray, force: float, params: MsdParams) -> np.ndarray:
    """Wall-m1-m2-m3 chain; the force acts on m1, spring 1 carries the cubic term."""
    p1, v1, p2, v2, p3, v3 = state
    m1, m2, m3 = params.masses
    k1, k2, k3 = params.springs
    c1, c2, c3 = params.dampers
    f1 = k1 * p1 + params.hardening * p1**3 + c1 * v1
    f2 = k2 * (p2 - p1) + c2 * (v2 - v1)
    f3 = k3 * (p3 - p2) + c3 * (v3 - v2)
    return np.array(
        [v1, (force - f1 + f2) / m1, v2, (f3 - f2) / m2, v3, -f3 / m3], dtype=np.float64
    )


def rk4_step(
    f: Callable[[np.ndarray, float], np.ndarray], state: np.ndarray, u_held: float, ts: float
) -> np.ndarray:
    """Classical RK4 with the input held over the step."""
    if ts <= 0:
        raise SpecError("step size must be positive")
    k1 = f(state, u_held)
    k2 = f(state + 0.5 * ts * k1, u_held)
    k3 = f(state + 0.5 * ts * k2, u_held)
    k4 = f(state + ts * k3, u_held)
    return state + ts / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_msd(
    params: MsdParams, u: Any, ts: float, x0: Optional[np.ndarray] = None
) -> np.ndarray:
    """States before each input sample, shape (N, 6)."""
    u_arr = np.asarray(u, dtype=np.float64).ravel()
    state = np.zeros(6) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    states = np.zeros((u_arr.size, 6))

    def f(x: np.ndarray, force: float) -> np.ndarray:
        return msd_derivatives(x, force, params)

    for k, force in enumerate(u_arr):
        states[k] = state
        state = rk4_step(f, state, float(force), ts)
        if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > STATE_LIMIT:
            raise SimulationDivergedError(step=k, message="MSD state left the admissible range")
    return states


def _split_dataset(
    split: Literal["est", "val", "test"],
    periods: int,
    params: MsdParams,
    system: SystemConfig,
    spec: MultisineSpec,
    noise_seed: int,
    snr_db: float,
    metadata: dict[str, Any],
) -> Dataset:
    warmup = DEFAULTS.WARMUP_PERIODS * spec.period
    u = np.tile(generate_multisine(spec), periods + DEFAULTS.WARMUP_PERIODS)
    states = simulate_msd(params, system.saturate(u), system.ts)
    y_clean = system.filter_output(states[:, 2])[warmup:]
    u = u[warmup:]
    sigma = np.sqrt(np.mean(y_clean**2)) / 10.0 ** (snr_db / 20.0)
    rng = np.random.Generator(np.random.Philox(noise_seed))
    noise = rng.normal(0.0, sigma, size=y_clean.shape)
    meta = {
        **metadata,
        "multisine": spec.to_dict(),
        "noise_seed": noise_seed,
        "noise_std": float(sigma),
    }
    logger.info(f"Generated {split} split: {u.size} samples, noise std {sigma:.4g}")
    return Dataset(u=u, y=y_clean + noise, ts=system.ts, split=split, y_clean=y_clean, metadata=meta)


def generate_dataset(config: GenerateConfig) -> tuple[Dataset, Dataset, Dataset]:
    """Estimation, validation and test splits, each driven by its own multisine phases.

    Seeds for the phases and the noise of every split are spawned from `config.seed`.
    """
    params = MsdParams.from_config(config)
    system = SystemConfig(
        variant=config.variant, ts=config.sampling_time, lpf_cutoff_hz=config.lpf_cutoff_hz
    )
    bins = default_bins(config.multisine.period, config.multisine.bin_step)
    children = np.random.SeedSequence(config.seed).spawn(6)
    seeds = [int(child.generate_state(1)[0]) for child in children]
    metadata: dict[str, Any] = {
        "variant": config.variant,
        "seed": config.seed,
        "snr_db": config.snr_db,
    }
    if config.variant == "b":
        metadata["saturation"] = system.saturation_descriptor
    if config.variant == "c":
        metadata["lpf_cutoff_hz"] = config.lpf_cutoff_hz
    splits = []
    for i, (split, periods) in enumerate(
        (("est", config.est_periods), ("val", config.val_periods), ("test", config.test_periods))
    ):
        spec = MultisineSpec(
            period=config.multisine.period,
            bins=bins,
            rms=config.multisine.rms,
            seed=seeds[2 * i],
            ts=config.sampling_time,
        )
        splits.append(
            _split_dataset(
                split, periods, params, system, spec, seeds[2 * i + 1], config.snr_db, metadata
            )
        )
    return splits[0], splits[1], splits[2]


def measured_snr_db(data: Dataset) -> float:
    if data.y_clean is None:
        raise SpecError(f"{data.split} split carries no clean output")
    clean = data.y_clean if data.norm is None else data.norm.denormalize_y(data.y_clean)
    noise = data.raw_y() - clean
    return float(10.0 * np.log10(np.mean(clean**2) / np.mean(noise**2)))


# ---- 2-DOF linear baseline ----


def baseline_params(param_set: ParamSet) -> np.ndarray:
    if param_set == "ideal":
        return np.asarray(DEFAULTS.BASELINE_IDEAL, dtype=np.float64)
    if param_set == "approx":
        return np.asarray(DEFAULTS.BASELINE_APPROX, dtype=np.float64)
    raise SpecError(f"unknown baseline parameter set {param_set!r}")


def _unit(shape: tuple[int, int], *entries: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape)
    for r, c in entries:
        out[r, c] = 1.0
    return out


def msd_2dof_matrices(ts: float) -> Callable[[Any, Any], tuple[Any, Any, Any, Any]]:
    """RK4 discretization of the linear wall-m1-m2 chain, states (p1, v1, p2, v2).

    The returned function builds (A_d, B_d, C, D) from theta = (m1, m2, k1, k2, c1, c2)
    with primitive calls only, so parameter gradients flow through the matrices.
    """
    eye = np.eye(4)

    def matrices(ops: Any, theta: Any) -> tuple[Any, Any, Any, Any]:
        m1, m2, k1, k2, c1, c2 = (ops.slice(theta, i, i + 1) for i in range(6))
        inv_m1 = ops.reciprocal(m1)
        inv_m2 = ops.reciprocal(m2)
        terms = [
            (ops.neg(ops.mul(ops.add(k1, k2), inv_m1)), (1, 0)),
            (ops.neg(ops.mul(ops.add(c1, c2), inv_m1)), (1, 1)),
            (ops.mul(k2, inv_m1), (1, 2)),
            (ops.mul(c2, inv_m1), (1, 3)),
            (ops.mul(k2, inv_m2), (3, 0)),
            (ops.mul(c2, inv_m2), (3, 1)),
            (ops.neg(ops.mul(k2, inv_m2)), (3, 2)),
            (ops.neg(ops.mul(c2, inv_m2)), (3, 3)),
        ]
        a_c = ops.constant(_unit((4, 4), (0, 1), (2, 3)))
        for value, entry in terms:
            a_c = ops.add(a_c, ops.mul(value, ops.constant(_unit((4, 4), entry))))
        b_c = ops.mul(inv_m1, ops.constant(_unit((4, 1), (1, 0))))
        ha = ops.scale(a_c, ts)
        identity = ops.constant(eye)
        # Horner form of the RK4 polynomial
        series = ops.add(identity, ops.scale(ha, 1.0 / 4.0))
        series = ops.add(identity, ops.scale(ops.matmul(ha, series), 1.0 / 3.0))
        series = ops.add(identity, ops.scale(ops.matmul(ha, series), 1.0 / 2.0))
        a_d = ops.add(identity, ops.matmul(ha, series))
        b_d = ops.scale(ops.matmul(series, b_c), ts)
        c = ops.constant(_unit((1, 4), (0, 2)))
        d = ops.constant(np.zeros((1, 1)))
        return a_d, b_d, c, d

    return matrices


def make_baseline_2dof(
    param_set: ParamSet = "ideal", ts: float = DEFAULTS.SAMPLING_TIME_SEC
) -> LinearBaseline:
    """Linear 2-DOF chain with the force on m1 and p2 as output."""
    pattern = np.zeros((5, 5), dtype=bool)
    pattern[:4, :] = True
    pattern[4, 2] = True
    return LinearBaseline(
        identifier=f"msd-2dof-{param_set}",
        theta=baseline_params(param_set),
        param_names=BASELINE_PARAM_NAMES,
        n_x=4,
        n_u=1,
        n_y=1,
        matrices=msd_2dof_matrices(ts),
        jacobian_pattern=pattern,
    )
