"""
Factories for the named augmentation structures.

Every structure is an AugmentedModel whose W is built from selector matrices, so the
model step reproduces the corresponding composition of baseline and learned functions.
Head layout of phi_aug per structure (rows of w_a, top to bottom):

    S-SP / S-DP      f_aug (n_x_b), g_aug (n_x_a)         z_a = (x_b, x_a, u)
    S-SSO / S-DSO    f (n_x_b), g_aug (n_x_a)             z_a = (x_b, x_a, u, f_base)
    S-SSI / S-DSI    shaped z_b (n_x_b + n_u), g_aug      z_a = (x_b, x_a, u)
    O-SP / O-DP      h_aug (n_y), g_aug (n_x_a)           z_a = (x_b, x_a, u)
    O-SSO / O-DSO    h (n_y), g_aug (n_x_a)               z_a = (x_b, x_a, u, h_base)
    O-SSI / O-DSI    shaped x_b (n_x_b), g_aug (n_x_a)    z_a = (x_b, x_a, u)

Compositions append extra heads ("aug.in" for input series shaping, "aug.out" for the
dynamic series-output head), so phi_aug becomes block diagonal.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from lfr_augment.autodiff import ParamVector
from lfr_augment.errors import ConstructionError, WellPosednessError
from lfr_augment.model_core import (
    BLOCK_NAMES,
    DZW_BLOCKS,
    PERMITTED_DZW,
    AugmentationComponent,
    AugmentedModel,
    BaselineComponent,
    BypassPlan,
    Dimensions,
    DzwMode,
    EncoderNet,
    ResNetComponent,
    build_model,
    lfr_assemble,
)
from shared import defaults as DEFAULTS
from shared.config import StructureConfig

logger = logging.getLogger("global_logger")

StructureKind = Literal["SP", "SSO", "SSI"]
Level = Literal["S", "O"]
CompositionKind = Literal["input_series", "output_series_dynamic"]

STATE_LABELS = ("S-SP", "S-SSO", "S-SSI", "S-DP", "S-DSO", "S-DSI")
OUTPUT_LABELS = ("O-SP", "O-SSO", "O-SSI", "O-DP", "O-DSO", "O-DSI")
CATALOG = STATE_LABELS + OUTPUT_LABELS
COMPOSITE_LABELS = ("S-SP-I", "S-DP-I", "S-SP+O-DSO", "S-DP+O-DSO")
LABEL_ALIASES = {"O-SSP": "O-SSO"}

_DYNAMIC_KIND = {"SP": "DP", "SSO": "DSO", "SSI": "DSI"}
_STATIC_KIND = {v: k for k, v in _DYNAMIC_KIND.items()}


def canonical_label(label: str) -> str:
    return LABEL_ALIASES.get(label, label)


def structure_label(level: Level, kind: StructureKind, dynamic: bool) -> str:
    return f"{level}-{_DYNAMIC_KIND[kind] if dynamic else kind}"


def parse_label(label: str) -> tuple[Level, StructureKind, bool]:
    """Split a catalog label into (level, kind, dynamic)."""
    label = canonical_label(label)
    if label not in CATALOG:
        raise ConstructionError(f"unknown structure label {label!r}")
    level, body = label.split("-", 1)
    if body in _STATIC_KIND:
        return level, _STATIC_KIND[body], True  # type: ignore[return-value]
    return level, body, False  # type: ignore[return-value]


def _sel(rows: int, cols: int, row0: int, col0: int, n: int) -> np.ndarray:
    """Zero matrix with an n x n identity placed at (row0, col0)."""
    out = np.zeros((rows, cols))
    out[row0 : row0 + n, col0 : col0 + n] = np.eye(n)
    return out


@dataclass(frozen=True)
class CanonicalStructure:
    """Block values and head layout of one catalog structure."""

    label: str
    dims: Dimensions
    mode: DzwMode
    blocks: dict[str, np.ndarray]
    plan: BypassPlan

    def pattern(self, block: str) -> np.ndarray:
        if block in self.blocks:
            return self.blocks[block] != 0
        return np.zeros(self.dims.block_shape(block), dtype=bool)


def canonical_structure(
    level: Level, kind: StructureKind, n_x_b: int, n_x_a: int, n_u: int, n_y: int
) -> CanonicalStructure:
    """Selector blocks of a catalog structure at the given signal sizes.

    A dynamic structure with n_x_a = 0 has exactly the blocks of its static counterpart.

    In the output-level series-input structures the shaped x_b feeds the whole baseline,
    so f_base also sees the learned shaping and the state transition is not
    baseline-only. The direct-composition reference in the structure tests follows
    the same wiring.
    """
    if kind not in _DYNAMIC_KIND:
        raise ConstructionError(f"unknown structure kind {kind!r}")
    nb, na, nu, ny = n_x_b, n_x_a, n_u, n_y
    nx, nzb, nwb = nb + na, nb + nu, nb + ny
    prefix = nx + nu

    f_sel = _sel(nx, nwb, 0, 0, nb)
    h_sel = _sel(ny, nwb, 0, nb, ny)
    zb_x = _sel(nzb, nx, 0, 0, nb)
    zb_u = _sel(nzb, nu, nb, 0, nu)

    if level == "S" and kind == "SP":
        n_z_a, n_w_a, mode = prefix, nx, DzwMode.ZERO
        blocks = {"C_z_b": zb_x, "D_zu_b": zb_u, "B_w_b": f_sel, "D_yw_b": h_sel}
        blocks["B_w_a"] = np.eye(nx)
        bypass = np.zeros((n_w_a, n_z_a))
        lead = nb
    elif level == "S" and kind == "SSO":
        n_z_a, n_w_a, mode = prefix + nb, nx, DzwMode.AB_ONLY
        blocks = {"C_z_b": zb_x, "D_zu_b": zb_u, "D_yw_b": h_sel}
        blocks["D_zw_ab"] = _sel(n_z_a, nwb, prefix, 0, nb)
        blocks["B_w_a"] = np.eye(nx)
        bypass = _sel(n_w_a, n_z_a, 0, prefix, nb)
        lead = nb
    elif level == "S":
        n_z_a, n_w_a, mode = prefix, nzb + na, DzwMode.BA_ONLY
        blocks = {"B_w_b": f_sel, "D_yw_b": h_sel}
        blocks["D_zw_ba"] = _sel(nzb, n_w_a, 0, 0, nzb)
        blocks["B_w_a"] = _sel(nx, n_w_a, nb, nzb, na)
        bypass = _sel(n_w_a, n_z_a, 0, 0, nb) + _sel(n_w_a, n_z_a, nb, nx, nu)
        lead = nzb
    elif kind == "SP":
        n_z_a, n_w_a, mode = prefix, ny + na, DzwMode.ZERO
        blocks = {"C_z_b": zb_x, "D_zu_b": zb_u, "B_w_b": f_sel, "D_yw_b": h_sel}
        blocks["B_w_a"] = _sel(nx, n_w_a, nb, ny, na)
        blocks["D_yw_a"] = _sel(ny, n_w_a, 0, 0, ny)
        bypass = np.zeros((n_w_a, n_z_a))
        lead = ny
    elif kind == "SSO":
        n_z_a, n_w_a, mode = prefix + ny, ny + na, DzwMode.AB_ONLY
        blocks = {"C_z_b": zb_x, "D_zu_b": zb_u, "B_w_b": f_sel}
        blocks["D_zw_ab"] = _sel(n_z_a, nwb, prefix, nb, ny)
        blocks["B_w_a"] = _sel(nx, n_w_a, nb, ny, na)
        blocks["D_yw_a"] = _sel(ny, n_w_a, 0, 0, ny)
        bypass = _sel(n_w_a, n_z_a, 0, prefix, ny)
        lead = ny
    else:
        # only x_b is shaped; u reaches the baseline directly
        n_z_a, n_w_a, mode = prefix, nb + na, DzwMode.BA_ONLY
        blocks = {"D_zu_b": zb_u, "B_w_b": f_sel, "D_yw_b": h_sel}
        blocks["D_zw_ba"] = _sel(nzb, n_w_a, 0, 0, nb)
        blocks["B_w_a"] = _sel(nx, n_w_a, nb, nb, na)
        bypass = _sel(n_w_a, n_z_a, 0, 0, nb)
        lead = nb

    blocks["C_z_a"] = _sel(n_z_a, nx, 0, 0, nx)
    blocks["D_zu_a"] = _sel(n_z_a, nu, nx, 0, nu)
    free_rows = np.zeros(n_w_a, dtype=bool)
    free_rows[lead:] = True
    dims = Dimensions(n_x_b=nb, n_x_a=na, n_u=nu, n_y=ny, n_z_a=n_z_a, n_w_a=n_w_a)
    return CanonicalStructure(
        label=structure_label(level, kind, na > 0),
        dims=dims,
        mode=mode,
        blocks=blocks,
        plan=BypassPlan(bypass=bypass, free_rows=free_rows),
    )


def _encoder(
    base: BaselineComponent, n_x_a: int, n_a: int, n_b: int, hidden: Sequence[int]
) -> EncoderNet:
    return EncoderNet(
        n_a=n_a, n_b=n_b, n_y=base.n_y, n_u=base.n_u, n_x_b=base.n_x, n_x_a=n_x_a, hidden=hidden
    )


def _from_canonical(
    canon: CanonicalStructure,
    label: str,
    base: BaselineComponent,
    hidden: Sequence[int],
    n_a: int,
    n_b: int,
    encoder_hidden: Sequence[int],
    seed: int,
) -> AugmentedModel:
    dims = canon.dims
    W = lfr_assemble(dims, canon.blocks, canon.mode)
    aug = AugmentationComponent.single([dims.n_z_a, *hidden, dims.n_w_a], "aug")
    rng = np.random.Generator(np.random.Philox(seed))
    model = build_model(
        dims,
        W,
        canon.mode,
        base,
        aug,
        _encoder(base, dims.n_x_a, n_a, n_b, encoder_hidden),
        rng,
        structure=label,
        init_plan={"aug": canon.plan},
    )
    logger.debug(f"Built structure {label}: {dims}, mode {canon.mode.value}")
    return model


def _make_structure(
    level: Level,
    kind: StructureKind,
    dynamic: bool,
    base: BaselineComponent,
    n_x_a: int,
    hidden: Sequence[int],
    n_a: int,
    n_b: int,
    encoder_hidden: Sequence[int],
    seed: int,
) -> AugmentedModel:
    if kind not in _DYNAMIC_KIND:
        raise ConstructionError(f"unknown structure kind {kind!r}")
    if n_x_a < 0:
        raise ConstructionError("n_x_a must be non-negative")
    if not dynamic and n_x_a != 0:
        raise ConstructionError(
            f"static structure {structure_label(level, kind, False)} cannot carry "
            f"{n_x_a} augmented states"
        )
    canon = canonical_structure(level, kind, base.n_x, n_x_a, base.n_u, base.n_y)
    label = structure_label(level, kind, dynamic)
    return _from_canonical(canon, label, base, hidden, n_a, n_b, encoder_hidden, seed)


def make_state_structure(
    kind: StructureKind,
    dynamic: bool,
    base: BaselineComponent,
    n_x_a: int = 0,
    hidden: Sequence[int] = DEFAULTS.AUG_HIDDEN,
    *,
    n_a: int = DEFAULTS.ENCODER_LAG,
    n_b: int = DEFAULTS.ENCODER_LAG,
    encoder_hidden: Sequence[int] = DEFAULTS.ENCODER_HIDDEN,
    seed: int = 0,
) -> AugmentedModel:
    """State-level augmentation: SP adds f_aug to f_base, SSO feeds f_base through
    phi_aug, SSI shapes the baseline arguments. Dynamic variants add n_x_a states
    driven by g_aug.

    Raises:
        ConstructionError: unknown kind or augmented states on a static structure
    """
    return _make_structure(
        "S", kind, dynamic, base, n_x_a, hidden, n_a, n_b, encoder_hidden, seed
    )


def make_output_structure(
    kind: StructureKind,
    dynamic: bool,
    base: BaselineComponent,
    n_x_a: int = 0,
    hidden: Sequence[int] = DEFAULTS.AUG_HIDDEN,
    *,
    n_a: int = DEFAULTS.ENCODER_LAG,
    n_b: int = DEFAULTS.ENCODER_LAG,
    encoder_hidden: Sequence[int] = DEFAULTS.ENCODER_HIDDEN,
    seed: int = 0,
) -> AugmentedModel:
    """Output-level counterpart of make_state_structure; x_b follows f_base."""
    return _make_structure(
        "O", kind, dynamic, base, n_x_a, hidden, n_a, n_b, encoder_hidden, seed
    )


def make_flexible(
    base: BaselineComponent,
    mode: DzwMode,
    n_x_a: int,
    n_z_a: int,
    n_w_a: int,
    hidden: Sequence[int] = DEFAULTS.AUG_HIDDEN,
    *,
    n_a: int = DEFAULTS.ENCODER_LAG,
    n_b: int = DEFAULTS.ENCODER_LAG,
    encoder_hidden: Sequence[int] = DEFAULTS.ENCODER_HIDDEN,
    seed: int = 0,
) -> AugmentedModel:
    """Unstructured LFR: every block the mode permits is trainable, values start at zero."""
    dims = Dimensions(
        n_x_b=base.n_x, n_x_a=n_x_a, n_u=base.n_u, n_y=base.n_y, n_z_a=n_z_a, n_w_a=n_w_a
    )
    trainable = [
        name for name in BLOCK_NAMES if name not in DZW_BLOCKS or name in PERMITTED_DZW[mode]
    ]
    rng = np.random.Generator(np.random.Philox(seed))
    return build_model(
        dims,
        lfr_assemble(dims, {}, mode),
        mode,
        base,
        AugmentationComponent.single([n_z_a, *hidden, n_w_a], "aug"),
        _encoder(base, n_x_a, n_a, n_b, encoder_hidden),
        rng,
        trainable_blocks=trainable,
        structure="flexible",
    )


def make_baseline_model(
    base: BaselineComponent,
    *,
    n_a: int = DEFAULTS.ENCODER_LAG,
    n_b: int = DEFAULTS.ENCODER_LAG,
    encoder_hidden: Sequence[int] = DEFAULTS.ENCODER_HIDDEN,
    seed: int = 0,
) -> AugmentedModel:
    """The baseline alone as an LFR without a learned component."""
    nb, nu, ny = base.n_x, base.n_u, base.n_y
    dims = Dimensions(n_x_b=nb, n_x_a=0, n_u=nu, n_y=ny, n_z_a=0, n_w_a=0)
    blocks = {
        "C_z_b": _sel(nb + nu, nb, 0, 0, nb),
        "D_zu_b": _sel(nb + nu, nu, nb, 0, nu),
        "B_w_b": _sel(nb, nb + ny, 0, 0, nb),
        "D_yw_b": _sel(ny, nb + ny, 0, nb, ny),
    }
    rng = np.random.Generator(np.random.Philox(seed))
    return build_model(
        dims,
        lfr_assemble(dims, blocks, DzwMode.ZERO),
        DzwMode.ZERO,
        base,
        AugmentationComponent([], []),
        _encoder(base, 0, n_a, n_b, encoder_hidden),
        rng,
        structure="baseline",
        init_plan={},
    )


@dataclass(frozen=True)
class CompositionSpec:
    """Extra head added by compose_structures.

    n_x_a only applies to the dynamic series-output head; an empty `hidden` gives a
    linear (LTI) head.
    """

    n_x_a: int = 1
    hidden: tuple[int, ...] = ()
    seed: int = 1


def _pad(block: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape)
    out[: block.shape[0], : block.shape[1]] = block
    return out


def _combined_mode(old: DzwMode, added: DzwMode) -> DzwMode:
    if added == DzwMode.ZERO or old == added:
        return old
    if old == DzwMode.ZERO:
        return added
    raise ConstructionError(
        f"composition needs D_zw modes {old.value} and {added.value} at once; "
        "no block substitution order exists"
    )


def compose_structures(
    state_model: AugmentedModel,
    extra: CompositionKind,
    spec: Optional[CompositionSpec] = None,
) -> AugmentedModel:
    """Append a second phi_aug head to a factory-built structure.

    `input_series` shapes u before it enters the baseline (S-SP-I); `output_series_dynamic`
    replaces the output by a dynamic series-output head (the O-DSO part of S-SP+O-DSO).
    Parameters of the existing heads and the baseline carry over.

    Raises:
        ConstructionError: unsupported base model or conflicting D_zw modes
        WellPosednessError: the composed interconnection fails check_well_posed
    """
    from lfr_augment.graph import check_well_posed

    spec = spec or CompositionSpec()
    if state_model.init_plan is None or not state_model.aug.heads:
        raise ConstructionError("only factory-built augmented structures can be composed")
    old = state_model.dims
    old_W = state_model.W
    nb, nu, ny = old.n_x_b, old.n_u, old.n_y

    if extra == "input_series":
        if state_model.mode != DzwMode.ZERO or len(state_model.aug.heads) != 1:
            raise ConstructionError(
                f"input series shaping needs a parallel structure, got {state_model.structure}"
            )
        n_new_x, n_new_z, n_new_w = 0, nu, nu
        added_mode = DzwMode.BA_ONLY
        head = ResNetComponent([nu, *spec.hidden, nu], "aug.in")
        plan = BypassPlan(bypass=np.eye(nu), free_rows=np.zeros(nu, dtype=bool))
        label = f"{state_model.structure}-I"
    elif extra == "output_series_dynamic":
        if not state_model.structure.startswith("S-") or "aug.out" in state_model.init_plan:
            raise ConstructionError(
                f"an output head needs a state-level structure, got {state_model.structure}"
            )
        k = spec.n_x_a
        if k < 0:
            raise ConstructionError("n_x_a must be non-negative")
        n_new_x, n_new_z, n_new_w = k, nb + k + nu + ny, ny + k
        added_mode = DzwMode.AB_ONLY
        head = ResNetComponent([n_new_z, *spec.hidden, n_new_w], "aug.out")
        free_rows = np.zeros(n_new_w, dtype=bool)
        free_rows[ny:] = True
        plan = BypassPlan(
            bypass=_sel(n_new_w, n_new_z, 0, nb + k + nu, ny), free_rows=free_rows
        )
        label = f"{state_model.structure}+O-DSO"
    else:
        raise ConstructionError(f"unknown composition {extra!r}")

    mode = _combined_mode(state_model.mode, added_mode)
    dims = Dimensions(
        n_x_b=nb,
        n_x_a=old.n_x_a + n_new_x,
        n_u=nu,
        n_y=ny,
        n_z_a=old.n_z_a + n_new_z,
        n_w_a=old.n_w_a + n_new_w,
    )
    blocks = {name: _pad(old_W[name], dims.block_shape(name)) for name in BLOCK_NAMES}
    za0, wa0 = old.n_z_a, old.n_w_a

    if extra == "input_series":
        blocks["D_zu_a"][za0 : za0 + nu, :] = np.eye(nu)
        blocks["D_zu_b"][nb:, :] = 0.0
        blocks["D_zw_ba"][nb : nb + nu, wa0 : wa0 + nu] = np.eye(nu)
    else:
        x0 = old.n_x
        blocks["C_z_a"][za0 : za0 + nb, :nb] = np.eye(nb)
        blocks["C_z_a"][za0 + nb : za0 + nb + k, x0 : x0 + k] = np.eye(k)
        blocks["D_zu_a"][za0 + nb + k : za0 + nb + k + nu, :] = np.eye(nu)
        blocks["D_zw_ab"][za0 + nb + k + nu :, nb : nb + ny] = np.eye(ny)
        blocks["B_w_a"][x0 : x0 + k, wa0 + ny : wa0 + ny + k] = np.eye(k)
        blocks["D_yw_b"][:, :] = 0.0
        blocks["D_yw_a"][:, :] = 0.0
        blocks["D_yw_a"][:, wa0 : wa0 + ny] = np.eye(ny)

    slices = list(state_model.aug.input_slices) + [(za0, za0 + head.n_in)]
    aug = AugmentationComponent(
        [ResNetComponent(h.layer_widths, h.prefix) for h in state_model.aug.heads] + [head],
        slices,
    )
    encoder_old = state_model.encoder
    encoder = _encoder(
        state_model.base, dims.n_x_a, encoder_old.n_a, encoder_old.n_b, encoder_old.hidden
    )
    rng = np.random.Generator(np.random.Philox(spec.seed))
    model = build_model(
        dims,
        lfr_assemble(dims, blocks, mode),
        mode,
        state_model.base,
        aug,
        encoder,
        rng,
        structure=label,
        init_plan={**state_model.init_plan, head.prefix: plan},
    )
    _carry_over(state_model.params, model.params)
    model.norm = state_model.norm

    report = check_well_posed(model, sample_count=0)
    if not report.verdict:
        raise WellPosednessError(f"composed structure {label} is not well-posed")
    logger.info(f"Composed {label}: {dims}, mode {mode.value}")
    return model


def _carry_over(source: ParamVector, target: ParamVector) -> None:
    for name in source.names():
        if name.startswith("W.") or name not in target:
            continue
        if target.view(name).shape == source.view(name).shape:
            target.set(name, source.view(name))


def build_structure(
    label: str,
    base: BaselineComponent,
    n_x_a: int = 0,
    hidden: Sequence[int] = DEFAULTS.AUG_HIDDEN,
    *,
    n_a: int = DEFAULTS.ENCODER_LAG,
    n_b: int = DEFAULTS.ENCODER_LAG,
    encoder_hidden: Sequence[int] = DEFAULTS.ENCODER_HIDDEN,
    output_head: Optional[CompositionSpec] = None,
    seed: int = 0,
) -> AugmentedModel:
    """Build any catalog or composite label, "baseline" included.

    For "S-DP+O-DSO" `n_x_a` sizes the state head and `output_head` the output head.
    """
    label = canonical_label(label)
    options = {"n_a": n_a, "n_b": n_b, "encoder_hidden": encoder_hidden, "seed": seed}
    if label == "baseline":
        return make_baseline_model(base, **options)  # type: ignore[arg-type]
    if label in CATALOG:
        level, kind, dynamic = parse_label(label)
        factory = make_state_structure if level == "S" else make_output_structure
        return factory(kind, dynamic, base, n_x_a if dynamic else 0, hidden, **options)  # type: ignore[arg-type]
    if label in COMPOSITE_LABELS:
        dynamic = label.startswith("S-DP")
        state = make_state_structure(
            "SP", dynamic, base, n_x_a if dynamic else 0, hidden, **options  # type: ignore[arg-type]
        )
        if label.endswith("-I"):
            return compose_structures(state, "input_series", CompositionSpec(seed=seed + 1))
        head = output_head or CompositionSpec(seed=seed + 1)
        return compose_structures(state, "output_series_dynamic", head)
    raise ConstructionError(f"unknown structure label {label!r}")


def model_from_config(
    structure: StructureConfig, base: BaselineComponent, n_a: int, n_b: int, seed: int = 0
) -> AugmentedModel:
    """Build the model an experiment configuration describes around `base`."""
    options = {
        "n_a": n_a,
        "n_b": n_b,
        "encoder_hidden": structure.encoder_hidden.widths,
        "seed": seed,
    }
    if structure.label == "flexible":
        assert structure.n_z_a is not None and structure.n_w_a is not None
        return make_flexible(
            base,
            DzwMode(structure.mode),
            structure.n_x_a,
            structure.n_z_a,
            structure.n_w_a,
            structure.hidden.widths,
            **options,  # type: ignore[arg-type]
        )
    head = CompositionSpec(
        n_x_a=structure.output_head_states,
        hidden=structure.output_head_hidden.widths,
        seed=seed + 1,
    )
    return build_structure(
        structure.label,
        base,
        structure.n_x_a,
        structure.hidden.widths,
        output_head=head,
        **options,  # type: ignore[arg-type]
    )
