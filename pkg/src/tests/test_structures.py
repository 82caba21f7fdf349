"""
Each factory structure must step exactly like the direct composition of baseline and
learned functions it names.
"""

import numpy as np
import pytest

from lfr_augment.errors import ConstructionError
from lfr_augment.model_core import AugmentedModel, DzwMode, LinearBaseline, step
from lfr_augment.structures import (
    CATALOG,
    COMPOSITE_LABELS,
    CompositionSpec,
    build_structure,
    canonical_label,
    compose_structures,
    make_flexible,
    make_output_structure,
    make_state_structure,
    parse_label,
)
from lfr_augment.training import init_baseline_equivalent

NB, NU, NY = 4, 1, 1
OPTIONS = {"n_a": 2, "n_b": 2, "encoder_hidden": (4,)}


def _randomize_heads(model: AugmentedModel, rng: np.random.Generator) -> None:
    """Nonzero output layers and bypasses so every learned path is exercised."""
    for head in model.aug.heads:
        for name in head.param_names():
            value = model.params.view(name)
            model.params.set(name, 0.3 * rng.normal(size=value.shape))


def _base(baseline: LinearBaseline, x_b: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = baseline.eval(baseline.theta, np.concatenate([x_b, u]))
    return w[:NB], w[NB:]


def _oracle(
    label: str, model: AugmentedModel, baseline: LinearBaseline, x: np.ndarray, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Direct composition for a single-head catalog structure: (x_next, y)."""
    head = model.aug.heads[0]
    x_b, x_a = x[:NB], x[NB:]
    f, h = _base(baseline, x_b, u)
    level, kind, _ = parse_label(label)
    if kind == "SSO":
        out = head.eval(np.concatenate([x_b, x_a, u, f if level == "S" else h]))
    else:
        out = head.eval(np.concatenate([x_b, x_a, u]))

    if level == "S" and kind == "SP":
        return np.concatenate([f + out[:NB], out[NB:]]), h
    if level == "S" and kind == "SSO":
        return np.concatenate([out[:NB], out[NB:]]), h
    if level == "S":
        f_s, h_s = _base(baseline, out[:NB], out[NB : NB + NU])
        return np.concatenate([f_s, out[NB + NU :]]), h_s
    if kind == "SP":
        return np.concatenate([f, out[NY:]]), h + out[:NY]
    if kind == "SSO":
        return np.concatenate([f, out[NY:]]), out[:NY]
    f_s, h_s = _base(baseline, out[:NB], u)
    return np.concatenate([f_s, out[NB:]]), h_s


def _point(rng: np.random.Generator, n_x: int) -> tuple[np.ndarray, np.ndarray]:
    return 0.5 * rng.normal(size=n_x), rng.normal(size=NU)


class TestCatalog:
    @pytest.mark.parametrize("label", CATALOG)
    def test_step_matches_direct_composition(
        self, label: str, baseline: LinearBaseline, rng: np.random.Generator
    ) -> None:
        _, _, dynamic = parse_label(label)
        n_x_a = 2 if dynamic else 0
        model = build_structure(label, baseline, n_x_a, (5,), **OPTIONS)
        _randomize_heads(model, rng)
        for _ in range(3):
            x, u = _point(rng, NB + n_x_a)
            x_next, y = step(model, x, u)
            x_expected, y_expected = _oracle(label, model, baseline, x, u)
            np.testing.assert_allclose(x_next, x_expected, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(y, y_expected, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("label", CATALOG + COMPOSITE_LABELS)
    def test_initialization_reproduces_the_baseline(
        self, label: str, baseline: LinearBaseline, rng: np.random.Generator
    ) -> None:
        dynamic = parse_label(label)[2] if label in CATALOG else label.startswith("S-DP")
        model = build_structure(label, baseline, 2 if dynamic else 0, (5,), **OPTIONS)
        init_baseline_equivalent(model, seed=7)
        for _ in range(3):
            x, u = _point(rng, model.dims.n_x)
            x_next, y = step(model, x, u)
            f, h = _base(baseline, x[:NB], u)
            np.testing.assert_allclose(x_next[:NB], f, atol=1e-12)
            np.testing.assert_allclose(y, h, atol=1e-12)

    def test_dynamic_with_zero_states_equals_static_blocks(self, baseline: LinearBaseline) -> None:
        for factory in (make_state_structure, make_output_structure):
            for kind in ("SP", "SSO", "SSI"):
                static = factory(kind, False, baseline, 0, (5,), **OPTIONS)
                dynamic = factory(kind, True, baseline, 0, (5,), **OPTIONS)
                assert static.dims == dynamic.dims
                assert static.mode == dynamic.mode
                np.testing.assert_array_equal(static.W.dense(static.dims), dynamic.W.dense(dynamic.dims))

    def test_static_structure_rejects_augmented_states(self, baseline: LinearBaseline) -> None:
        with pytest.raises(ConstructionError):
            make_state_structure("SP", False, baseline, 2, **OPTIONS)

    def test_unknown_label(self, baseline: LinearBaseline) -> None:
        with pytest.raises(ConstructionError):
            build_structure("S-XYZ", baseline, 0, (5,), **OPTIONS)

    def test_label_alias(self) -> None:
        assert canonical_label("O-SSP") == "O-SSO"
        assert parse_label("S-DSI") == ("S", "SSI", True)

    def test_same_seed_same_parameters(self, baseline: LinearBaseline) -> None:
        first = build_structure("S-DP", baseline, 2, (5,), seed=4, **OPTIONS)
        second = build_structure("S-DP", baseline, 2, (5,), seed=4, **OPTIONS)
        np.testing.assert_array_equal(first.params.data, second.params.data)

    @pytest.mark.parametrize("label", ["O-SSI", "O-DSI"])
    def test_output_input_series_shapes_the_state_transition(
        self, label: str, baseline: LinearBaseline, rng: np.random.Generator
    ) -> None:
        model = build_structure(label, baseline, 1 if label == "O-DSI" else 0, (5,), **OPTIONS)
        _randomize_heads(model, rng)
        x, u = _point(rng, model.dims.n_x)
        x_next, _ = step(model, x, u)
        shaped = model.aug.heads[0].eval(np.concatenate([x, u]))[:NB]
        np.testing.assert_allclose(x_next[:NB], _base(baseline, shaped, u)[0], atol=1e-12)
        assert not np.allclose(x_next[:NB], _base(baseline, x[:NB], u)[0])


class TestComposition:
    def test_input_series_shapes_the_baseline_input(
        self, baseline: LinearBaseline, rng: np.random.Generator
    ) -> None:
        model = build_structure("S-SP-I", baseline, 0, (5,), **OPTIONS)
        assert model.mode == DzwMode.BA_ONLY
        _randomize_heads(model, rng)
        state_head, input_head = model.aug.heads
        x, u = _point(rng, NB)
        v = input_head.eval(u)
        f, h = _base(baseline, x, v)
        f_aug = state_head.eval(np.concatenate([x, u]))
        x_next, y = step(model, x, u)
        np.testing.assert_allclose(x_next, f + f_aug, atol=1e-12)
        np.testing.assert_allclose(y, h, atol=1e-12)

    def test_output_series_dynamic_head(
        self, baseline: LinearBaseline, rng: np.random.Generator
    ) -> None:
        model = build_structure(
            "S-SP+O-DSO", baseline, 0, (5,), output_head=CompositionSpec(n_x_a=1, hidden=(3,)), **OPTIONS
        )
        assert model.mode == DzwMode.AB_ONLY
        _randomize_heads(model, rng)
        state_head, output_head = model.aug.heads
        x, u = _point(rng, NB + 1)
        f, h = _base(baseline, x[:NB], u)
        f_aug = state_head.eval(np.concatenate([x[:NB], u]))
        out = output_head.eval(np.concatenate([x[:NB], x[NB:], u, h]))
        x_next, y = step(model, x, u)
        np.testing.assert_allclose(x_next, np.concatenate([f + f_aug, out[NY:]]), atol=1e-12)
        np.testing.assert_allclose(y, out[:NY], atol=1e-12)

    def test_parameters_carry_over(self, baseline: LinearBaseline, rng: np.random.Generator) -> None:
        state = make_state_structure("SP", False, baseline, 0, (5,), **OPTIONS)
        _randomize_heads(state, rng)
        composed = compose_structures(state, "input_series")
        np.testing.assert_array_equal(composed.params.view("aug.w1"), state.params.view("aug.w1"))

    def test_conflicting_modes_rejected(self, baseline: LinearBaseline) -> None:
        sso = make_state_structure("SSO", False, baseline, 0, (5,), **OPTIONS)
        with pytest.raises(ConstructionError):
            compose_structures(sso, "input_series")

    def test_output_head_needs_a_state_structure(self, baseline: LinearBaseline) -> None:
        output_level = make_output_structure("SP", False, baseline, 0, (5,), **OPTIONS)
        with pytest.raises(ConstructionError):
            compose_structures(output_level, "output_series_dynamic")

    def test_flexible_models_cannot_be_composed(self, baseline: LinearBaseline) -> None:
        flexible = make_flexible(baseline, DzwMode.ZERO, 1, 3, 2, (4,), **OPTIONS)
        with pytest.raises(ConstructionError):
            compose_structures(flexible, "input_series")


class TestFlexible:
    @pytest.mark.parametrize("mode", [DzwMode.ZERO, DzwMode.AB_ONLY, DzwMode.BA_ONLY])
    def test_initialization_reproduces_the_baseline(
        self, mode: DzwMode, baseline: LinearBaseline, rng: np.random.Generator
    ) -> None:
        model = make_flexible(baseline, mode, 2, 4, 3, (5,), **OPTIONS)
        init_baseline_equivalent(model, seed=3)
        for _ in range(3):
            x, u = _point(rng, model.dims.n_x)
            x_next, y = step(model, x, u)
            f, h = _base(baseline, x[:NB], u)
            np.testing.assert_allclose(x_next[:NB], f, atol=1e-12)
            np.testing.assert_allclose(y, h, atol=1e-12)

    def test_permitted_blocks_are_trainable(self, baseline: LinearBaseline) -> None:
        model = make_flexible(baseline, DzwMode.AB_ONLY, 1, 3, 2, (4,), **OPTIONS)
        assert model.block_trainable("D_zw_ab")
        assert not model.block_trainable("D_zw_ba")
        assert model.block_trainable("A")
