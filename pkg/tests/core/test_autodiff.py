"""Tests for the autodiff engine."""
import numpy as np
import pytest

from nmtlab.core.autodiff import (
    Tape,
    active_tape,
    activation,
    add,
    backward,
    column_norm,
    concat,
    constant,
    contract,
    conv_windows,
    elementwise,
    embed,
    expand,
    log,
    log_sigmoid,
    log_softmax,
    matmul,
    maximum,
    numerical_gradient,
    parameter,
    scale,
    sigmoid,
    softmax,
    stack,
    tanh,
    total,
)
from nmtlab.exceptions import ContractError, DimensionError


def _check_gradient(build, *leaves, tol=1e-7):
    """Compare backward() with central differences for every leaf."""
    for leaf in leaves:
        leaf.zero_grad()
    with Tape() as tape:
        loss = build()
    backward(loss, tape)
    for leaf in leaves:
        numeric = numerical_gradient(lambda: build().item(), leaf)
        np.testing.assert_allclose(leaf.grad, numeric, rtol=1e-6, atol=tol)


class TestTape:
    def test_no_tape_means_no_recording(self):
        """Operations outside a tape are plain numpy computations."""
        w = parameter(np.ones((2, 2)))
        out = matmul(w, constant(np.ones(2)))
        assert active_tape() is None
        assert not out.requires_grad
        assert out.is_leaf

    def test_constants_are_not_recorded(self):
        """Only ops touching a gradient-requiring input are recorded."""
        with Tape() as tape:
            add(constant([1.0]), constant([2.0]))
            add(parameter([1.0]), constant([2.0]))
        assert len(tape) == 1

    def test_tape_is_reset_after_exit(self):
        """The context manager restores the previous tape."""
        with Tape() as outer:
            with Tape() as inner:
                assert active_tape() is inner
            assert active_tape() is outer
        assert active_tape() is None

    def test_backward_requires_scalar(self):
        """A non-scalar loss is a contract error."""
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            y = scale(x, 2.0)
        with pytest.raises(ContractError):
            backward(y, tape)

    def test_gradients_accumulate_over_shared_inputs(self):
        """x used twice receives both contributions."""
        x = parameter([3.0])
        with Tape() as tape:
            loss = total(add(scale(x, 2.0), scale(x, 5.0)))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [7.0])


class TestPrimitiveGradients:
    def test_matmul(self, rng):
        """Matrix-matrix and matrix-vector products."""
        a = parameter(rng.normal(size=(3, 4)))
        b = parameter(rng.normal(size=(4, 2)))
        v = parameter(rng.normal(size=4))
        _check_gradient(lambda: total(tanh(matmul(a, b))), a, b)
        _check_gradient(lambda: total(sigmoid(matmul(a, v))), a, v)

    def test_contract(self, rng):
        """Einsum with summed and kept indices."""
        w = parameter(rng.normal(size=(5, 3)))
        s = parameter(rng.normal(size=(5, 4, 3)))
        _check_gradient(lambda: total(tanh(contract("tb,tdb->db", w, s))), w, s)

    def test_softmax_with_mask(self, rng):
        """Masked softmax gradient through a weighted sum."""
        e = parameter(rng.normal(size=(4, 2)))
        mask = np.array([[1, 1], [1, 1], [1, 0], [0, 0]], dtype=bool)
        mask[3, 0] = True
        weights = constant(rng.normal(size=(4, 2)))
        _check_gradient(
            lambda: contract("tb,tb->", softmax(e, axis=0, mask=mask), weights), e
        )

    def test_log_softmax(self, rng):
        """Log-softmax down the vocabulary axis."""
        x = parameter(rng.normal(size=(6, 3)))
        pick = constant(rng.random((6, 3)))
        _check_gradient(lambda: contract("vb,vb->", log_softmax(x, axis=0), pick), x)

    def test_elementwise_family(self, rng):
        """add, sub, hadamard, scale, affine, neg and the activations."""
        a = parameter(rng.normal(size=(3, 2)))
        b = parameter(rng.normal(size=(3, 2)))

        def build():
            mixed = elementwise("hadamard", elementwise("sub", a, b), tanh(a))
            shifted = elementwise("affine", mixed, 0.5, 2.0)
            return total(
                add(activation("logistic", shifted), log_sigmoid(elementwise("neg", b)))
            )

        _check_gradient(build, a, b)

    def test_scale_by_tensor(self, rng):
        """Both the operand and the scalar factor get gradients."""
        x = parameter(rng.normal(size=(3,)))
        f = parameter([0.7])
        _check_gradient(lambda: total(tanh(scale(x, f))), x, f)

    def test_shape_ops(self, rng):
        """concat, stack, expand, maximum and column_norm."""
        a = parameter(rng.normal(size=(2, 3)))
        b = parameter(rng.normal(size=(4, 3)))

        def build():
            joined = concat([a, b], axis=0)
            stacked = stack([joined, tanh(joined)])
            widened = expand(column_norm(joined), 2)
            return add(
                total(maximum([joined, scale(joined, -0.5)])),
                add(total(stacked), total(widened)),
            )

        _check_gradient(build, a, b)

    def test_embed_gathers_columns(self, rng):
        """Repeated ids sum their gradients into one column."""
        table = parameter(rng.normal(size=(3, 5)))
        _check_gradient(lambda: total(tanh(embed(table, [1, 4, 1]))), table)
        np.testing.assert_allclose(embed(table, [4]).data[:, 0], table.data[:, 4])

    def test_conv_windows(self, rng):
        """Zero-padded windows and their adjoint."""
        w = parameter(rng.random((5, 2)))
        kernel = constant(rng.normal(size=(3, 3)))
        _check_gradient(
            lambda: total(tanh(contract("fk,tkb->tfb", kernel, conv_windows(w, 3)))), w
        )

    def test_log_floor_blocks_gradient(self):
        """Clamped entries contribute log(floor) and no gradient."""
        x = parameter([0.0, 0.5])
        with Tape() as tape:
            loss = total(log(x, floor=1e-12))
        backward(loss, tape)
        assert loss.item() == pytest.approx(np.log(1e-12) + np.log(0.5))
        np.testing.assert_allclose(x.grad, [0.0, 2.0])


class TestValues:
    def test_softmax_columns_sum_to_one(self, rng):
        """Masked positions get exactly zero weight."""
        mask = np.array([[1, 1], [1, 0], [0, 0]], dtype=bool)
        mask[2, 0] = True
        w = softmax(constant(rng.normal(size=(3, 2)) * 50), axis=0, mask=mask)
        np.testing.assert_allclose(w.data.sum(axis=0), [1.0, 1.0])
        assert w.data[1, 1] == 0.0
        assert w.data[2, 1] == 0.0

    def test_softmax_is_stable(self):
        """Huge scores give a finite one-hot distribution."""
        w = softmax(constant([1000.0, 0.0]))
        assert np.all(np.isfinite(w.data))
        np.testing.assert_allclose(w.data, [1.0, 0.0])
        assert np.all(np.isfinite(log_softmax(constant([1000.0, 0.0])).data))

    def test_softmax_ignores_a_common_shift(self, rng):
        """Adding a constant to every score leaves the weights unchanged."""
        for _ in range(20):
            e = rng.normal(size=(int(rng.integers(1, 8)), 3))
            base = softmax(constant(e)).data
            shifted = softmax(constant(e + 7.3)).data
            np.testing.assert_allclose(shifted, base, rtol=1e-12, atol=1e-15)

    def test_sigmoid_is_stable(self):
        """Large magnitudes neither overflow nor produce NaN."""
        y = sigmoid(constant([-1000.0, 0.0, 1000.0]))
        np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0])
        assert np.all(np.isfinite(log_sigmoid(constant([-1000.0, 1000.0])).data))

    def test_maximum_ties_go_to_first(self):
        """The first operand wins on equal values."""
        a = parameter([1.0, 2.0])
        b = parameter([1.0, 3.0])
        with Tape() as tape:
            loss = total(maximum([a, b]))
        backward(loss, tape)
        np.testing.assert_allclose(a.grad, [1.0, 0.0])
        np.testing.assert_allclose(b.grad, [0.0, 1.0])

    def test_conv_windows_layout(self):
        """out[t, k] = w[t + k - 1] for width 3."""
        w = constant(np.arange(1.0, 4.0)[:, None])
        out = conv_windows(w, 3).data[:, :, 0]
        np.testing.assert_array_equal(out, [[0, 1, 2], [1, 2, 3], [2, 3, 0]])


class TestErrors:
    def test_shape_mismatch(self):
        """Elementwise ops name both shapes."""
        with pytest.raises(DimensionError, match=r"\(2,\) vs \(3,\)"):
            add(constant([1.0, 2.0]), constant([1.0, 2.0, 3.0]))

    def test_matmul_mismatch(self):
        """Inner dimensions must agree."""
        with pytest.raises(DimensionError):
            matmul(constant(np.ones((2, 3))), constant(np.ones((2, 2))))

    def test_contract_errors(self):
        """Malformed subscripts and rank mismatches are reported."""
        a = constant(np.ones((2, 3)))
        with pytest.raises(ContractError):
            contract("ab->b", a, a)
        with pytest.raises(DimensionError):
            contract("abc,ab->c", a, a)

    def test_conv_windows_even_width(self):
        """Even window widths have no centre."""
        with pytest.raises(DimensionError):
            conv_windows(constant(np.ones((3, 1))), 2)

    def test_embed_out_of_range(self):
        """Ids must index a column of the table."""
        with pytest.raises(DimensionError):
            embed(constant(np.ones((2, 3))), [3])

    def test_unknown_dispatch_names(self):
        """elementwise() and activation() reject unknown kinds."""
        with pytest.raises(ContractError):
            elementwise("power", constant([1.0]))
        with pytest.raises(ContractError):
            activation("relu", constant([1.0]))

    def test_dimension_error_is_value_error(self):
        """Callers catching ValueError still see shape problems."""
        with pytest.raises(ValueError):
            add(constant([1.0]), constant([1.0, 2.0]))
