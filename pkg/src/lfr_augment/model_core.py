"""
LFR-based augmented state-space model.

The model couples a first-principles baseline and learned ResNet components through a
constant interconnection matrix W:

    [x+; y; z_b; z_a] = W [x; u; w_b; w_a],   w_b = phi_base(z_b),   w_a = phi_aug(z_a)

Parameters of all parts live in one ParamVector so the same evaluation code serves
eager simulation (NumpyOps) and gradient recording (Tape).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from lfr_augment.autodiff import NumpyOps, ParamVector, Tape, jacobian
from lfr_augment.data import NormalizationTransforms
from lfr_augment.errors import (
    ArityError,
    ConstructionError,
    DimensionError,
    ModeViolationError,
    NumericOverflowError,
    SimulationDivergedError,
    UnsupportedModeError,
)

logger = logging.getLogger("global_logger")

THETA_BASE = "theta_base"
DIVERGENCE_LIMIT = 1e12


class DzwMode(str, Enum):
    ZERO = "Zero"
    AB_ONLY = "AbOnly"
    BA_ONLY = "BaOnly"
    UNRESTRICTED = "Unrestricted"


DZW_BLOCKS = ("D_zw_bb", "D_zw_ba", "D_zw_ab", "D_zw_aa")

PERMITTED_DZW: dict[DzwMode, tuple[str, ...]] = {
    DzwMode.ZERO: (),
    DzwMode.AB_ONLY: ("D_zw_ab",),
    DzwMode.BA_ONLY: ("D_zw_ba",),
    DzwMode.UNRESTRICTED: DZW_BLOCKS,
}

# (block, row group, column group)
BLOCK_LAYOUT: tuple[tuple[str, str, str], ...] = (
    ("A", "x", "x"),
    ("B_u", "x", "u"),
    ("B_w_b", "x", "w_b"),
    ("B_w_a", "x", "w_a"),
    ("C_y", "y", "x"),
    ("D_yu", "y", "u"),
    ("D_yw_b", "y", "w_b"),
    ("D_yw_a", "y", "w_a"),
    ("C_z_b", "z_b", "x"),
    ("D_zu_b", "z_b", "u"),
    ("D_zw_bb", "z_b", "w_b"),
    ("D_zw_ba", "z_b", "w_a"),
    ("C_z_a", "z_a", "x"),
    ("D_zu_a", "z_a", "u"),
    ("D_zw_ab", "z_a", "w_b"),
    ("D_zw_aa", "z_a", "w_a"),
)
BLOCK_NAMES = tuple(name for name, _, _ in BLOCK_LAYOUT)


@dataclass(frozen=True)
class Dimensions:
    n_x_b: int
    n_x_a: int
    n_u: int
    n_y: int
    n_z_a: int
    n_w_a: int

    def __post_init__(self) -> None:
        for name in ("n_x_b", "n_x_a", "n_u", "n_y", "n_z_a", "n_w_a"):
            if getattr(self, name) < 0:
                raise ConstructionError(f"{name} must be non-negative")
        for name in ("n_x_b", "n_u", "n_y"):
            if getattr(self, name) < 1:
                raise ConstructionError(f"{name} must be at least 1")

    @property
    def n_x(self) -> int:
        return self.n_x_b + self.n_x_a

    @property
    def n_z_b(self) -> int:
        return self.n_x_b + self.n_u

    @property
    def n_w_b(self) -> int:
        return self.n_x_b + self.n_y

    @property
    def n_z(self) -> int:
        return self.n_z_b + self.n_z_a

    @property
    def n_w(self) -> int:
        return self.n_w_b + self.n_w_a

    def group_size(self, group: str) -> int:
        return {
            "x": self.n_x,
            "u": self.n_u,
            "y": self.n_y,
            "z_b": self.n_z_b,
            "z_a": self.n_z_a,
            "w_b": self.n_w_b,
            "w_a": self.n_w_a,
        }[group]

    def block_shape(self, block: str) -> tuple[int, int]:
        for name, rows, cols in BLOCK_LAYOUT:
            if name == block:
                return self.group_size(rows), self.group_size(cols)
        raise ConstructionError(f"unknown LFR block {block}")

    def to_dict(self) -> dict[str, int]:
        return {
            "n_x_b": self.n_x_b,
            "n_x_a": self.n_x_a,
            "n_u": self.n_u,
            "n_y": self.n_y,
            "n_z_a": self.n_z_a,
            "n_w_a": self.n_w_a,
        }


@dataclass(frozen=True)
class LfrMatrix:
    """The 16 named blocks of W."""

    blocks: Mapping[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def dense(self, dims: Dimensions) -> np.ndarray:
        rows = ("x", "y", "z_b", "z_a")
        cols = ("x", "u", "w_b", "w_a")
        grid = [
            [
                self.blocks[_block_at(r, c)]
                if dims.group_size(r) and dims.group_size(c)
                else np.zeros((dims.group_size(r), dims.group_size(c)))
                for c in cols
            ]
            for r in rows
        ]
        return np.block(grid)


def _block_at(row: str, col: str) -> str:
    for name, r, c in BLOCK_LAYOUT:
        if r == row and c == col:
            return name
    raise ConstructionError(f"no block at ({row}, {col})")


def lfr_assemble(
    dims: Dimensions, blocks: Mapping[str, Any], mode: DzwMode
) -> LfrMatrix:
    """Validate block shapes and the D_zw mode; missing blocks default to zero.

    Raises:
        DimensionError: a block has the wrong shape
        ModeViolationError: a D_zw block forbidden by `mode` is nonzero
    """
    unknown = set(blocks) - set(BLOCK_NAMES)
    if unknown:
        raise ConstructionError(f"unknown LFR blocks: {sorted(unknown)}")
    assembled: dict[str, np.ndarray] = {}
    for name in BLOCK_NAMES:
        shape = dims.block_shape(name)
        if name in blocks and blocks[name] is not None:
            value = np.asarray(blocks[name], dtype=np.float64)
            if value.shape != shape:
                raise DimensionError(name, shape, tuple(value.shape))
        else:
            value = np.zeros(shape)
        if not np.all(np.isfinite(value)):
            raise NumericOverflowError(f"block {name} has non-finite entries")
        assembled[name] = value
    for name in DZW_BLOCKS:
        if name not in PERMITTED_DZW[mode] and np.any(assembled[name] != 0):
            raise ModeViolationError(f"{name} must be zero under mode {mode.value}")
    return LfrMatrix(blocks=assembled)


@dataclass(frozen=True)
class LatentSignals:
    z_b: np.ndarray
    z_a: np.ndarray
    w_b: np.ndarray
    w_a: np.ndarray


# ---- components ----


class BaselineComponent:
    """First-principles model phi_base(theta, z_b) = [f_base(x_b, u); h_base(x_b, u)].

    `dynamics(ops, prepared, x_b, u)` returns (f_base, h_base) and must be written with
    the primitive calls of `ops`; `prepare(ops, theta)` precomputes anything that depends
    on the parameters only. Both default to using theta directly.
    """

    def __init__(
        self,
        identifier: str,
        theta: Any,
        param_names: Sequence[str],
        n_x: int,
        n_u: int,
        n_y: int,
        dynamics: Callable[[Any, Any, Any, Any], tuple[Any, Any]],
        jacobian_pattern: Optional[np.ndarray] = None,
        c2: bool = True,
        prepare: Optional[Callable[[Any, Any], Any]] = None,
    ):
        self.identifier = identifier
        self.theta = np.asarray(theta, dtype=np.float64).ravel()
        self.param_names = list(param_names)
        if len(self.param_names) != self.theta.size:
            raise ConstructionError("one name per baseline parameter is required")
        self.n_x = n_x
        self.n_u = n_u
        self.n_y = n_y
        self._dynamics = dynamics
        self._prepare = prepare
        self.c2 = c2
        if jacobian_pattern is None:
            jacobian_pattern = np.ones((self.n_w, self.n_z), dtype=bool)
        self.jacobian_pattern = np.asarray(jacobian_pattern, dtype=bool)
        if self.jacobian_pattern.shape != (self.n_w, self.n_z):
            raise DimensionError(
                "P_b", (self.n_w, self.n_z), tuple(self.jacobian_pattern.shape)
            )

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_u

    @property
    def n_w(self) -> int:
        return self.n_x + self.n_y

    def prepare(self, ops: Any, theta: Any) -> Any:
        return theta if self._prepare is None else self._prepare(ops, theta)

    def evaluate(self, ops: Any, prepared: Any, x: Any, u: Any) -> tuple[Any, Any]:
        return self._dynamics(ops, prepared, x, u)

    def phi(self, ops: Any, prepared: Any, z: Any) -> Any:
        x = ops.slice(z, 0, self.n_x)
        u = ops.slice(z, self.n_x, self.n_z)
        f, h = self.evaluate(ops, prepared, x, u)
        return ops.concat([f, h])

    def eval(self, theta: Any, z: Any) -> np.ndarray:
        ops = NumpyOps()
        prepared = self.prepare(ops, np.asarray(theta, dtype=np.float64))
        return np.asarray(self.phi(ops, prepared, np.asarray(z, dtype=np.float64)))

    def jacobian(self, theta: Any, z: Any) -> np.ndarray:
        """d w_b / d z_b at one point."""
        theta_arr = np.asarray(theta, dtype=np.float64)

        def fn(tape: Tape, zn: Any) -> Any:
            return self.phi(tape, self.prepare(tape, tape.constant(theta_arr)), zn)

        return jacobian(fn, z)

    def param_jacobian(self, theta: Any, z: Any) -> np.ndarray:
        """d w_b / d theta_base at one point."""
        z_arr = np.asarray(z, dtype=np.float64)

        def fn(tape: Tape, th: Any) -> Any:
            return self.phi(tape, self.prepare(tape, th), tape.constant(z_arr))

        return jacobian(fn, theta)


class LinearBaseline(BaselineComponent):
    """Baseline whose discrete-time map is linear in (x, u) for fixed theta.

    `matrices(ops, theta)` returns (A_d, B_d, C, D) built from primitive calls, so the
    parameter dependence stays differentiable while state and input Jacobians are the
    matrices themselves.
    """

    def __init__(
        self,
        identifier: str,
        theta: Any,
        param_names: Sequence[str],
        n_x: int,
        n_u: int,
        n_y: int,
        matrices: Callable[[Any, Any], tuple[Any, Any, Any, Any]],
        jacobian_pattern: Optional[np.ndarray] = None,
    ):
        self._matrices = matrices
        super().__init__(
            identifier=identifier,
            theta=theta,
            param_names=param_names,
            n_x=n_x,
            n_u=n_u,
            n_y=n_y,
            dynamics=self._linear_dynamics,
            jacobian_pattern=jacobian_pattern,
            c2=True,
            prepare=matrices,
        )

    @staticmethod
    def _linear_dynamics(ops: Any, prepared: Any, x: Any, u: Any) -> tuple[Any, Any]:
        a_d, b_d, c, d = prepared
        f = ops.add(ops.matvec(a_d, x), ops.matvec(b_d, u))
        h = ops.add(ops.matvec(c, x), ops.matvec(d, u))
        return f, h

    def discrete_matrices(self, theta: Any) -> tuple[np.ndarray, ...]:
        a_d, b_d, c, d = self._matrices(NumpyOps(), np.asarray(theta, dtype=np.float64))
        return tuple(np.asarray(m) for m in (a_d, b_d, c, d))

    def jacobian(self, theta: Any, z: Any) -> np.ndarray:
        a_d, b_d, c, d = self.discrete_matrices(theta)
        return np.block([[a_d, b_d], [c, d]])


class NormalizedBaseline(BaselineComponent):
    """Baseline expressed in normalized coordinates; theta stays in physical units."""

    def __init__(self, inner: BaselineComponent, norm: NormalizationTransforms):
        if norm.x_scale is None or norm.x_scale.size != inner.n_x:
            raise ConstructionError("state scaling of the normalization must match n_x_b")
        self.inner = inner
        self.norm = norm
        super().__init__(
            identifier=inner.identifier,
            theta=inner.theta,
            param_names=inner.param_names,
            n_x=inner.n_x,
            n_u=inner.n_u,
            n_y=inner.n_y,
            dynamics=self._wrapped_dynamics,
            jacobian_pattern=inner.jacobian_pattern,
            c2=inner.c2,
            prepare=inner.prepare,
        )

    def _wrapped_dynamics(
        self, ops: Any, prepared: Any, x: Any, u: Any
    ) -> tuple[Any, Any]:
        norm = self.norm
        assert norm.x_scale is not None
        x_phys = ops.mul(x, ops.constant(1.0 / norm.x_scale))
        u_phys = ops.add(
            ops.mul(u, ops.constant(1.0 / norm.u_scale)), ops.constant(norm.u_mean)
        )
        f, h = self.inner.evaluate(ops, prepared, x_phys, u_phys)
        f_n = ops.mul(f, ops.constant(norm.x_scale))
        h_n = ops.mul(
            ops.sub(h, ops.constant(norm.y_mean)), ops.constant(norm.y_scale)
        )
        return f_n, h_n

    def jacobian(self, theta: Any, z: Any) -> np.ndarray:
        norm = self.norm
        assert norm.x_scale is not None
        z_arr = np.asarray(z, dtype=np.float64)
        in_scale = np.concatenate([norm.x_scale, norm.u_scale])
        z_phys = z_arr / in_scale
        z_phys[self.n_x :] += norm.u_mean
        out_scale = np.concatenate([norm.x_scale, norm.y_scale])
        return out_scale[:, None] * self.inner.jacobian(theta, z_phys) / in_scale[None, :]


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class ResNetComponent:
    """Feedforward tanh network with a linear bypass:

    phi(z) = W_{q+1} xi_q + b_{q+1} + W_a z,  xi_i = tanh(W_i xi_{i-1} + b_i),  xi_0 = z
    """

    def __init__(self, layer_widths: Sequence[int], prefix: str):
        if len(layer_widths) < 2:
            raise ConstructionError("a ResNet needs at least input and output widths")
        self.layer_widths = [int(w) for w in layer_widths]
        self.prefix = prefix
        self.params: Optional[ParamVector] = None

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    @property
    def depth(self) -> int:
        """Number of affine layers, q + 1."""
        return len(self.layer_widths) - 1

    def weight_name(self, i: int) -> str:
        return f"{self.prefix}.w{i}"

    def bias_name(self, i: int) -> str:
        return f"{self.prefix}.b{i}"

    @property
    def bypass_name(self) -> str:
        return f"{self.prefix}.W_a"

    def param_names(self) -> list[str]:
        names = []
        for i in range(1, self.depth + 1):
            names += [self.weight_name(i), self.bias_name(i)]
        return names + [self.bypass_name]

    def register(
        self, params: ParamVector, rng: np.random.Generator, trainable: bool = True
    ) -> None:
        """Add Xavier-initialized weights, zero biases and a zero bypass to `params`."""
        for i in range(1, self.depth + 1):
            fan_in, fan_out = self.layer_widths[i - 1], self.layer_widths[i]
            params.add(self.weight_name(i), xavier_uniform(rng, fan_out, fan_in), trainable)
            params.add(self.bias_name(i), np.zeros(fan_out), trainable)
        params.add(self.bypass_name, np.zeros((self.n_out, self.n_in)), trainable)
        self.params = params

    def forward(self, ops: Any, z: Any) -> Any:
        xi = z
        for i in range(1, self.depth):
            xi = ops.tanh(
                ops.add(ops.matvec(ops.param(self.weight_name(i)), xi), ops.param(self.bias_name(i)))
            )
        out = ops.add(
            ops.matvec(ops.param(self.weight_name(self.depth)), xi),
            ops.param(self.bias_name(self.depth)),
        )
        return ops.add(out, ops.matvec(ops.param(self.bypass_name), z))

    def _bound(self) -> ParamVector:
        if self.params is None:
            raise ConstructionError(f"ResNet {self.prefix} has no registered parameters")
        return self.params

    def eval(self, z: Any) -> np.ndarray:
        return np.asarray(self.forward(NumpyOps(self._bound()), np.asarray(z, dtype=np.float64)))

    def jacobian(self, z: Any) -> np.ndarray:
        params = self._bound()
        xi = np.asarray(z, dtype=np.float64)
        chain = np.eye(self.n_in)
        for i in range(1, self.depth):
            w = params.view(self.weight_name(i))
            xi = np.tanh(w @ xi + params.view(self.bias_name(i)))
            chain = (1.0 - xi**2)[:, None] * (w @ chain)
        return params.view(self.weight_name(self.depth)) @ chain + params.view(self.bypass_name)

    def zero_nonlinear_output(self) -> None:
        params = self._bound()
        params.set(self.weight_name(self.depth), np.zeros((self.n_out, self.layer_widths[-2])))
        params.set(self.bias_name(self.depth), np.zeros(self.n_out))


class AugmentationComponent:
    """phi_aug as a stack of independent ResNet heads.

    Head i reads the z_a slice `input_slices[i]` and writes the next block of w_a;
    a single-head component is the plain fully connected case.
    """

    def __init__(
        self, heads: Sequence[ResNetComponent], input_slices: Sequence[tuple[int, int]]
    ):
        if len(heads) != len(input_slices):
            raise ConstructionError("one input slice per head is required")
        for head, (start, stop) in zip(heads, input_slices):
            if stop - start != head.n_in:
                raise DimensionError(head.prefix, (head.n_in,), (stop - start,))
        self.heads = list(heads)
        self.input_slices = [tuple(s) for s in input_slices]

    @classmethod
    def single(cls, layer_widths: Sequence[int], prefix: str = "aug") -> "AugmentationComponent":
        head = ResNetComponent(layer_widths, prefix)
        return cls([head], [(0, head.n_in)])

    @property
    def n_in(self) -> int:
        return max((stop for _, stop in self.input_slices), default=0)

    @property
    def n_out(self) -> int:
        return sum(head.n_out for head in self.heads)

    def output_slices(self) -> list[tuple[int, int]]:
        slices = []
        offset = 0
        for head in self.heads:
            slices.append((offset, offset + head.n_out))
            offset += head.n_out
        return slices

    def register(self, params: ParamVector, rng: np.random.Generator) -> None:
        for head in self.heads:
            head.register(params, rng)

    def forward(self, ops: Any, z: Any, batch_shape: tuple[int, ...]) -> Any:
        if not self.heads:
            return ops.constant(np.zeros(batch_shape + (0,)))
        outputs = [
            head.forward(ops, ops.slice(z, start, stop))
            for head, (start, stop) in zip(self.heads, self.input_slices)
        ]
        return outputs[0] if len(outputs) == 1 else ops.concat(outputs)

    def jacobian(self, z: Any) -> np.ndarray:
        z_arr = np.asarray(z, dtype=np.float64)
        jac = np.zeros((self.n_out, z_arr.size))
        for head, (start, stop), (o_start, o_stop) in zip(
            self.heads, self.input_slices, self.output_slices()
        ):
            jac[o_start:o_stop, start:stop] = head.jacobian(z_arr[start:stop])
        return jac

    def pattern(self, n_z_a: int) -> np.ndarray:
        """P_a: each head is fully connected to its own input slice."""
        pattern = np.zeros((self.n_out, n_z_a), dtype=bool)
        for (start, stop), (o_start, o_stop) in zip(self.input_slices, self.output_slices()):
            pattern[o_start:o_stop, start:stop] = True
        return pattern

    def zero_nonlinear_output(self) -> None:
        for head in self.heads:
            head.zero_nonlinear_output()


class EncoderNet:
    """psi(y_{k-n_a..k-1}, u_{k-n_b..k-1}) -> [x_b; x_a], with separate baseline and
    augmentation heads so the baseline head can be pre-fitted on its own."""

    def __init__(
        self,
        n_a: int,
        n_b: int,
        n_y: int,
        n_u: int,
        n_x_b: int,
        n_x_a: int,
        hidden: Sequence[int] = (16, 16),
    ):
        if n_a < 0 or n_b < 0 or n_a + n_b == 0:
            raise ConstructionError("encoder lags must be non-negative and not both zero")
        self.n_a = n_a
        self.n_b = n_b
        self.n_y = n_y
        self.n_u = n_u
        self.n_x_b = n_x_b
        self.n_x_a = n_x_a
        self.hidden = [int(h) for h in hidden]
        self.psi_b = ResNetComponent([self.n_in, *self.hidden, n_x_b], "enc.b")
        self.psi_a = (
            ResNetComponent([self.n_in, *self.hidden, n_x_a], "enc.a") if n_x_a > 0 else None
        )
        self.params: Optional[ParamVector] = None

    @property
    def n_in(self) -> int:
        return self.n_a * self.n_y + self.n_b * self.n_u

    @property
    def n_out(self) -> int:
        return self.n_x_b + self.n_x_a

    @property
    def lag(self) -> int:
        return max(self.n_a, self.n_b)

    def heads(self) -> list[ResNetComponent]:
        return [self.psi_b] + ([self.psi_a] if self.psi_a is not None else [])

    def register(self, params: ParamVector, rng: np.random.Generator) -> None:
        for head in self.heads():
            head.register(params, rng)
        self.params = params

    def forward(self, ops: Any, history: Any) -> Any:
        parts = [head.forward(ops, history) for head in self.heads()]
        return parts[0] if len(parts) == 1 else ops.concat(parts)

    def history_vector(self, y_hist: Any, u_hist: Any) -> np.ndarray:
        y_arr = np.asarray(y_hist, dtype=np.float64).reshape(-1, self.n_y)
        u_arr = np.asarray(u_hist, dtype=np.float64).reshape(-1, self.n_u)
        if y_arr.shape[0] != self.n_a:
            raise ArityError(f"expected {self.n_a} past outputs, got {y_arr.shape[0]}")
        if u_arr.shape[0] != self.n_b:
            raise ArityError(f"expected {self.n_b} past inputs, got {u_arr.shape[0]}")
        return np.concatenate([y_arr.ravel(), u_arr.ravel()])


def encoder_estimate(encoder: EncoderNet, y_hist: Any, u_hist: Any) -> np.ndarray:
    """Initial state from oldest-first output and input histories."""
    if encoder.params is None:
        raise ConstructionError("encoder has no registered parameters")
    history = encoder.history_vector(y_hist, u_hist)
    return np.asarray(encoder.forward(NumpyOps(encoder.params), history))


# ---- the model ----


@dataclass(frozen=True)
class BypassPlan:
    """Baseline-equivalent initialization of one ResNet head.

    `bypass` is the W_a value that reproduces the baseline signals the head replaces;
    rows flagged in `free_rows` drive augmented states and are drawn at random instead.
    """

    bypass: np.ndarray
    free_rows: np.ndarray


class AugmentedModel:
    """W, baseline, learned component, encoder and their shared parameter vector."""

    def __init__(
        self,
        dims: Dimensions,
        mode: DzwMode,
        base: BaselineComponent,
        aug: AugmentationComponent,
        encoder: EncoderNet,
        params: ParamVector,
        structure: str = "flexible",
        norm: Optional[NormalizationTransforms] = None,
        init_plan: Optional[dict[str, BypassPlan]] = None,
    ):
        self.dims = dims
        self.mode = mode
        self.base = base
        self.aug = aug
        self.encoder = encoder
        self.params = params
        self.structure = structure
        self.norm = norm
        # None marks a flexible LFR, initialized through its free W blocks
        self.init_plan = init_plan

    @property
    def W(self) -> LfrMatrix:
        return LfrMatrix(
            blocks={name: self.params.view(f"W.{name}").copy() for name in BLOCK_NAMES}
        )

    def block(self, name: str) -> np.ndarray:
        return self.params.view(f"W.{name}")

    def set_block(self, name: str, value: Any) -> None:
        self.params.set(f"W.{name}", value)

    def block_trainable(self, name: str) -> bool:
        return self.params.is_trainable(f"W.{name}")

    def active_blocks(self) -> list[str]:
        """Blocks that are declared trainable or currently nonzero."""
        return [
            name
            for name in BLOCK_NAMES
            if self.block(name).size
            and (self.block_trainable(name) or np.any(self.block(name) != 0))
        ]

    @property
    def theta_base(self) -> np.ndarray:
        return self.params.view(THETA_BASE)

    def copy_params(self) -> ParamVector:
        return self.params.copy()

    def load_params(self, params: ParamVector) -> None:
        if params.index != self.params.index:
            raise ConstructionError("parameter layout does not match the model")
        self.params.data[:] = params.data

    def __repr__(self) -> str:
        return (
            f"AugmentedModel(structure={self.structure!r}, mode={self.mode.value}, "
            f"dims={self.dims}, n_params={len(self.params)})"
        )


def build_model(
    dims: Dimensions,
    W: LfrMatrix,
    mode: DzwMode,
    base: BaselineComponent,
    aug: AugmentationComponent,
    encoder: EncoderNet,
    rng: np.random.Generator,
    trainable_blocks: Sequence[str] = (),
    structure: str = "flexible",
    init_plan: Optional[dict[str, BypassPlan]] = None,
) -> AugmentedModel:
    """Register every part in a fresh ParamVector and return the model.

    Parameter order: W blocks, theta_base, phi_aug heads, encoder heads.
    """
    if base.n_x != dims.n_x_b or base.n_u != dims.n_u or base.n_y != dims.n_y:
        raise ConstructionError("baseline dimensions do not match the model dimensions")
    if aug.n_in != dims.n_z_a or aug.n_out != dims.n_w_a:
        raise DimensionError(
            "phi_aug", (dims.n_w_a, dims.n_z_a), (aug.n_out, aug.n_in)
        )
    if encoder.n_x_b != dims.n_x_b or encoder.n_x_a != dims.n_x_a:
        raise ConstructionError("encoder output size must equal the state dimension")
    for name in trainable_blocks:
        if name in DZW_BLOCKS and name not in PERMITTED_DZW[mode]:
            raise ModeViolationError(f"{name} cannot be trainable under mode {mode.value}")
    params = ParamVector()
    for name in BLOCK_NAMES:
        params.add(f"W.{name}", W[name], trainable=name in trainable_blocks)
    params.add(THETA_BASE, base.theta.copy(), trainable=True)
    aug.register(params, rng)
    encoder.register(params, rng)
    return AugmentedModel(
        dims=dims,
        mode=mode,
        base=base,
        aug=aug,
        encoder=encoder,
        params=params,
        structure=structure,
        init_plan=init_plan,
    )


class ModelEvaluation:
    """One evaluation pass of a model with a given backend.

    Block values and the prepared baseline are read once, so a simulation or an
    unrolled loss reuses them at every step.
    """

    def __init__(self, model: AugmentedModel, ops: Any):
        if model.mode == DzwMode.UNRESTRICTED:
            raise UnsupportedModeError(
                "Unrestricted D_zw has no substitution order; no implicit solver is provided"
            )
        self.model = model
        self.ops = ops
        self.blocks = {name: ops.param(f"W.{name}") for name in model.active_blocks()}
        self.prepared = model.base.prepare(ops, ops.param(THETA_BASE))

    def _affine(self, size: int, terms: Sequence[tuple[str, Any]], batch: tuple[int, ...]) -> Any:
        ops = self.ops
        total = None
        for name, signal in terms:
            if name not in self.blocks:
                continue
            term = ops.matvec(self.blocks[name], signal)
            total = term if total is None else ops.add(total, term)
        if total is None:
            total = ops.constant(np.zeros(batch + (size,)))
        return total

    def latents(self, x: Any, u: Any) -> tuple[Any, Any, Any, Any]:
        ops = self.ops
        dims = self.model.dims
        batch = ops.shape(x)[:-1]
        base = self.model.base
        if self.model.mode == DzwMode.BA_ONLY:
            z_a = self._affine(dims.n_z_a, [("C_z_a", x), ("D_zu_a", u)], batch)
            w_a = self.model.aug.forward(ops, z_a, batch)
            z_b = self._affine(
                dims.n_z_b, [("C_z_b", x), ("D_zu_b", u), ("D_zw_ba", w_a)], batch
            )
            w_b = base.phi(ops, self.prepared, z_b)
        else:
            z_b = self._affine(dims.n_z_b, [("C_z_b", x), ("D_zu_b", u)], batch)
            w_b = base.phi(ops, self.prepared, z_b)
            z_a = self._affine(
                dims.n_z_a, [("C_z_a", x), ("D_zu_a", u), ("D_zw_ab", w_b)], batch
            )
            w_a = self.model.aug.forward(ops, z_a, batch)
        return z_b, z_a, w_b, w_a

    def step(self, x: Any, u: Any) -> tuple[Any, Any]:
        dims = self.model.dims
        batch = self.ops.shape(x)[:-1]
        _, _, w_b, w_a = self.latents(x, u)
        x_next = self._affine(
            dims.n_x, [("A", x), ("B_u", u), ("B_w_b", w_b), ("B_w_a", w_a)], batch
        )
        y = self._affine(
            dims.n_y, [("C_y", x), ("D_yu", u), ("D_yw_b", w_b), ("D_yw_a", w_a)], batch
        )
        return x_next, y

    def encode(self, history: Any) -> Any:
        return self.model.encoder.forward(self.ops, history)


def _vector(value: Any, size: int, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64).ravel()
    if array.size != size:
        raise DimensionError(name, (size,), tuple(array.shape))
    return array


def solve_latent(model: AugmentedModel, x: Any, u: Any) -> LatentSignals:
    """Resolve z_b, z_a, w_b, w_a by block forward substitution."""
    x_arr = _vector(x, model.dims.n_x, "x")
    u_arr = _vector(u, model.dims.n_u, "u")
    evaluation = ModelEvaluation(model, NumpyOps(model.params))
    z_b, z_a, w_b, w_a = evaluation.latents(x_arr, u_arr)
    return LatentSignals(
        z_b=np.asarray(z_b), z_a=np.asarray(z_a), w_b=np.asarray(w_b), w_a=np.asarray(w_a)
    )


def step(model: AugmentedModel, x: Any, u: Any) -> tuple[np.ndarray, np.ndarray]:
    """One step of the model: (x_next, y)."""
    x_arr = _vector(x, model.dims.n_x, "x")
    u_arr = _vector(u, model.dims.n_u, "u")
    evaluation = ModelEvaluation(model, NumpyOps(model.params))
    x_next, y = evaluation.step(x_arr, u_arr)
    x_next, y = np.asarray(x_next), np.asarray(y)
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(y))):
        raise NumericOverflowError("step produced non-finite values")
    return x_next, y


def simulate(
    model: AugmentedModel, x0: Any, u_seq: Any
) -> tuple[np.ndarray, np.ndarray]:
    """Iterate the model over an input sequence.

    Returns:
        (y_seq of shape (L, n_y), x_seq of shape (L + 1, n_x) including x0)
    """
    dims = model.dims
    u_arr = np.asarray(u_seq, dtype=np.float64).reshape(-1, dims.n_u)
    length = u_arr.shape[0]
    if length < 1:
        raise ConstructionError("simulation needs at least one input sample")
    x = _vector(x0, dims.n_x, "x0")
    evaluation = ModelEvaluation(model, NumpyOps(model.params))
    xs = np.zeros((length + 1, dims.n_x))
    ys = np.zeros((length, dims.n_y))
    xs[0] = x
    for k in range(length):
        x_next, y = evaluation.step(x, u_arr[k])
        ys[k] = y
        x = np.asarray(x_next)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > DIVERGENCE_LIMIT:
            raise SimulationDivergedError(
                step=k, message="state magnitude exceeded 1e12", partial_outputs=ys[: k + 1]
            )
        xs[k + 1] = x
    return ys, xs
