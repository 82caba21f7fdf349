import numpy as np
import pytest

from lfr_augment.autodiff import (
    NumpyOps,
    ParamVector,
    Tape,
    check_grad,
    grad,
    jacobian,
    loss_value,
    register_primitive,
    unregister_primitive,
)
from lfr_augment.errors import ConstructionError, NumericError, UnregisteredPrimitiveError


def _params() -> ParamVector:
    params = ParamVector()
    params.add("w", np.array([[0.5, -1.0], [2.0, 0.25]]))
    params.add("b", np.array([0.1, -0.2]))
    params.add("frozen", np.array([3.0]), trainable=False)
    return params


class TestParamVector:
    def test_slices_are_disjoint_and_cover_the_vector(self) -> None:
        params = _params()
        offsets = sorted((s.offset, s.stop) for s in params.index.values())
        assert offsets == [(0, 4), (4, 6), (6, 7)]
        assert len(params) == 7

    def test_view_aliases_storage(self) -> None:
        params = _params()
        params.view("b")[0] = 9.0
        assert params.data[4] == 9.0

    def test_set_rejects_wrong_shape(self) -> None:
        params = _params()
        with pytest.raises(ConstructionError):
            params.set("b", np.zeros(3))

    def test_duplicate_name_rejected(self) -> None:
        params = _params()
        with pytest.raises(ConstructionError):
            params.add("w", np.zeros(1))

    def test_trainable_mask_and_copy(self) -> None:
        params = _params()
        mask = params.trainable_mask()
        assert mask[:6].all() and not mask[6]
        clone = params.copy()
        clone.data[0] = 100.0
        assert params.data[0] == 0.5


class TestTape:
    def test_gradient_matches_closed_form(self) -> None:
        """d/dw ||w x + b||^2 = 2 (w x + b) x^T."""
        params = _params()
        x = np.array([1.0, -2.0])

        def builder(tape: Tape):
            out = tape.add(tape.matvec(tape.param("w"), x), tape.param("b"))
            return tape.squared_norm(out)

        value, gradient = grad(builder, params)
        residual = params.view("w") @ x + params.view("b")
        assert value == pytest.approx(float(residual @ residual))
        np.testing.assert_allclose(gradient[:4], (2.0 * np.outer(residual, x)).ravel())
        np.testing.assert_allclose(gradient[4:6], 2.0 * residual)

    def test_frozen_parameters_get_zero_gradient(self) -> None:
        params = _params()

        def builder(tape: Tape):
            return tape.sum(tape.mul(tape.param("frozen"), tape.param("b")))

        _, gradient = grad(builder, params)
        assert gradient[6] == 0.0
        np.testing.assert_allclose(gradient[4:6], [3.0, 3.0])

    def test_numpy_and_tape_agree(self) -> None:
        params = _params()
        x = np.array([[0.3, 0.7], [-1.0, 0.2], [0.0, 1.5]])

        def model(ops):
            hidden = ops.tanh(ops.add(ops.matvec(ops.param("w"), x), ops.param("b")))
            return ops.mean(ops.power(hidden, 2))

        eager = float(model(NumpyOps(params)))
        assert loss_value(model, params) == pytest.approx(eager, rel=1e-12)

    def test_finite_difference_check_on_every_primitive(self) -> None:
        params = _params()
        params.add("v", np.array([0.8, 1.3]))

        def builder(tape: Tape):
            w, b, v = tape.param("w"), tape.param("b"), tape.param("v")
            a = tape.matvec(w, tape.tanh(v))
            c = tape.concat([tape.slice(a, 0, 1), tape.slice(tape.reciprocal(tape.add(v, 2.0)), 1, 2)])
            d = tape.dot(c, tape.sub(b, tape.neg(v)))
            e = tape.matmul(w, tape.scale(w, 0.5))
            return tape.add(tape.mul(d, d), tape.add(tape.sum(e), tape.mean(tape.power(v, 3))))

        worst = check_grad(builder, params, coords=[0, 1, 2, 3, 4, 5, 7, 8], step=1e-6)
        assert worst < 1e-5

    def test_batched_matvec_broadcasts_parameters(self) -> None:
        params = _params()
        xs = np.array([[1.0, 0.0], [0.0, 1.0]])

        def builder(tape: Tape):
            return tape.sum(tape.matvec(tape.param("w"), xs))

        _, gradient = grad(builder, params)
        np.testing.assert_allclose(gradient[:4], np.ones(4))

    def test_non_finite_value_raises(self) -> None:
        params = _params()
        params.set("b", np.array([0.0, 1.0]))

        def builder(tape: Tape):
            return tape.sum(tape.reciprocal(tape.param("b")))

        with pytest.raises(NumericError):
            grad(builder, params)

    def test_unregistered_primitive(self) -> None:
        with pytest.raises(UnregisteredPrimitiveError):
            NumpyOps().apply("softplus", np.zeros(2))

    def test_registered_primitive_is_differentiable(self) -> None:
        register_primitive(
            "cube",
            lambda a: a**3,
            lambda g, out, a: (g * 3.0 * a**2,),
        )
        try:
            params = _params()

            def builder(tape: Tape):
                return tape.sum(tape.apply("cube", tape.param("b")))

            _, gradient = grad(builder, params)
            np.testing.assert_allclose(gradient[4:6], 3.0 * params.view("b") ** 2)
        finally:
            unregister_primitive("cube")

    def test_loss_builder_must_return_node(self) -> None:
        with pytest.raises(ConstructionError):
            grad(lambda tape: np.zeros(()), _params())


def test_jacobian_of_linear_map() -> None:
    m = np.array([[1.0, 2.0, 0.0], [0.0, -1.0, 4.0]])
    jac = jacobian(lambda tape, x: tape.matvec(tape.constant(m), x), np.ones(3))
    np.testing.assert_allclose(jac, m)
