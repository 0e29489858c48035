import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from stan_eeg.errors import ContractError, InputTooShortError, NonFiniteError, ShapeError
from stan_eeg.ndtensor import (
    Tape,
    Tensor,
    add,
    concat,
    conv1d,
    conv2d,
    dropout,
    einsum,
    l2_norm,
    layer_norm,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sorted_sum,
    stack,
    sub,
    swapaxes,
    take,
    tanh,
    tsum,
)

from conftest import assert_grads, leaf


def probe(op, rng):
    """Scalar sum(op() * W) with a fixed random W, so every output element carries weight."""

    def fn():
        out = op()
        return tsum(mul(out, Tensor(np.random.default_rng(99).standard_normal(out.shape))))

    return fn


class TestElementwiseGradients:
    def test_add_broadcast(self, rng):
        a, b = leaf(rng, 3, 4), leaf(rng, 4)
        assert_grads(probe(lambda: add(a, b), rng), [a, b])

    def test_sub_broadcast(self, rng):
        a, b = leaf(rng, 2, 3, 1), leaf(rng, 3, 5)
        assert_grads(probe(lambda: sub(a, b), rng), [a, b])

    def test_mul_broadcast(self, rng):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 1, 4)
        assert_grads(probe(lambda: mul(a, b), rng), [a, b])

    @pytest.mark.parametrize("fn", [tanh, sigmoid, softplus])
    def test_smooth_pointwise(self, rng, fn):
        x = leaf(rng, 3, 5)
        assert_grads(probe(lambda: fn(x), rng), [x])

    def test_relu_away_from_kink(self, rng):
        x = Tensor(rng.uniform(0.1, 1.0, (4, 4)) * rng.choice([-1, 1], (4, 4)), requires_grad=True)
        assert_grads(probe(lambda: relu(x), rng), [x])


class TestStructuralGradients:
    def test_matmul_batched(self, rng):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 5)
        assert_grads(probe(lambda: matmul(a, b), rng), [a, b])

    def test_matmul_shared_right_operand(self, rng):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        assert_grads(probe(lambda: matmul(a, b), rng), [a, b])

    def test_reshape_swapaxes(self, rng):
        x = leaf(rng, 2, 3, 4)
        assert_grads(probe(lambda: swapaxes(reshape(x, (6, 4)), 0, 1), rng), [x])

    def test_take_basic_and_fancy(self, rng):
        x = leaf(rng, 5, 3)
        assert_grads(probe(lambda: take(x, (slice(1, 4), 2)), rng), [x])
        assert_grads(probe(lambda: take(x, np.array([0, 2, 2, 4])), rng), [x])

    def test_concat_stack(self, rng):
        a, b = leaf(rng, 2, 3), leaf(rng, 2, 4)
        assert_grads(probe(lambda: concat([a, b], axis=-1), rng), [a, b])
        c = leaf(rng, 2, 3)
        assert_grads(probe(lambda: stack([a, c], axis=1), rng), [a, c])

    def test_sum_mean(self, rng):
        x = leaf(rng, 3, 4, 2)
        assert_grads(probe(lambda: tsum(x, axis=1, keepdims=True), rng), [x])
        assert_grads(probe(lambda: mean(x, axis=(0, 2)), rng), [x])


class TestOrderInvariantGradients:
    def test_einsum_broadcast_left(self, rng):
        a, w = leaf(rng, 2, 4, 3), leaf(rng, 2, 3, 5)
        assert_grads(probe(lambda: einsum("...ie,hef->...hif", a, w), rng), [a, w])

    def test_einsum_contract_shared_batch(self, rng):
        a, b = leaf(rng, 2, 3, 4, 5), leaf(rng, 2, 4, 5)
        assert_grads(probe(lambda: einsum("...hif,...jf->...hij", a, b), rng), [a, b])

    def test_einsum_matches_matmul(self, rng):
        a, b = rng.standard_normal((3, 4, 5)), rng.standard_normal((5, 2))
        np.testing.assert_allclose(einsum("...ne,et->...nt", Tensor(a), Tensor(b)).data, a @ b, rtol=1e-12)

    def test_einsum_rejects_dropped_index(self):
        with pytest.raises(ContractError):
            einsum("ij,kl->i", Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))))

    def test_sorted_sum(self, rng):
        x = leaf(rng, 3, 6, 2)
        assert_grads(probe(lambda: sorted_sum(x, axis=1), rng), [x])

    def test_order_invariant_softmax(self, rng):
        x = leaf(rng, 2, 4, 5)
        assert_grads(probe(lambda: softmax(x, axis=-1, order_invariant=True), rng), [x])

    def test_sorted_sum_ignores_order_bitwise(self, rng):
        x = rng.standard_normal((50, 7)) * 10.0 ** rng.integers(-8, 8, (50, 7))
        perm = rng.permutation(50)
        assert np.array_equal(sorted_sum(Tensor(x), 0).data, sorted_sum(Tensor(x[perm]), 0).data)


class TestNormalisationGradients:
    def test_softmax(self, rng):
        x = leaf(rng, 2, 4, 5)
        assert_grads(probe(lambda: softmax(x, axis=-1), rng), [x])

    def test_layer_norm(self, rng):
        x, g, b = leaf(rng, 3, 6), leaf(rng, 6), leaf(rng, 6)
        assert_grads(probe(lambda: layer_norm(x, g, b), rng), [x, g, b])

    def test_l2_norm(self, rng):
        x = leaf(rng, 4, 7)
        assert_grads(probe(lambda: l2_norm(x, axis=-1), rng), [x])

    def test_dropout_fixed_mask(self, rng):
        x = leaf(rng, 3, 8)
        assert_grads(probe(lambda: dropout(x, 0.3, np.random.default_rng(5), True), rng), [x])


class TestConvolutionGradients:
    def test_conv1d(self, rng):
        x, k = leaf(rng, 2, 3, 9), leaf(rng, 4, 3, 2)
        assert_grads(probe(lambda: conv1d(x, k), rng), [x, k])

    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_conv2d(self, rng, stride):
        x, k = leaf(rng, 2, 3, 8, 8), leaf(rng, 2, 3, 3, 3)
        assert_grads(probe(lambda: conv2d(x, k, stride=stride), rng), [x, k])


class TestConvolutionValues:
    def test_conv1d_matches_loop(self, rng):
        x, k = rng.standard_normal((2, 3, 7)), rng.standard_normal((4, 3, 2))
        out = conv1d(Tensor(x), Tensor(k)).data
        ref = np.zeros((2, 4, 6))
        for b in range(2):
            for o in range(4):
                for t in range(6):
                    ref[b, o, t] = np.sum(x[b, :, t:t + 2] * k[o])
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_conv2d_matches_loop(self, rng):
        x, k = rng.standard_normal((3, 7, 7)), rng.standard_normal((2, 3, 3, 3))
        out = conv2d(Tensor(x), Tensor(k), stride=2).data
        ref = np.zeros((2, 3, 3))
        for f in range(2):
            for i in range(3):
                for j in range(3):
                    ref[f, i, j] = np.sum(x[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * k[f])
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_too_short_inputs(self):
        with pytest.raises(InputTooShortError):
            conv1d(Tensor(np.zeros((3, 1))), Tensor(np.zeros((2, 3, 2))))
        with pytest.raises(InputTooShortError):
            conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


class TestContracts:
    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_backward_needs_scalar(self, rng):
        x = leaf(rng, 3)
        with Tape() as tape:
            y = mul(x, 2.0)
            with pytest.raises(ContractError):
                tape.backward(y)

    def test_empty_tape(self):
        with Tape() as tape:
            with pytest.raises(ContractError):
                tape.backward(Tensor(1.0))

    def test_non_finite_forward(self):
        with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
            mul(Tensor([1e308]), Tensor([1e308]))

    def test_no_grad_records_nothing(self, rng):
        x = leaf(rng, 3)
        with Tape() as tape:
            with no_grad():
                y = tanh(x)
            assert len(tape) == 0
            assert not y.requires_grad

    def test_unused_leaf_gets_zero_grad(self, rng):
        x, unused = leaf(rng, 3), leaf(rng, 3)
        with Tape() as tape:
            loss = tsum(add(mul(x, x), mul(unused, 0.0)))
            tape.backward(loss)
        np.testing.assert_array_equal(unused.grad, np.zeros(3))
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_shared_subexpression_accumulates(self, rng):
        x = leaf(rng, 4)
        with Tape() as tape:
            y = tanh(x)
            loss = tsum(add(mul(y, y), y))
            tape.backward(loss)
        t = np.tanh(x.data)
        np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t), rtol=1e-12)

    def test_l2_norm_zero_subgradient(self):
        x = Tensor(np.zeros((2, 3)), requires_grad=True)
        with Tape() as tape:
            tape.backward(tsum(l2_norm(x)))
        np.testing.assert_array_equal(x.grad, np.zeros((2, 3)))

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        assert dropout(x, 0.5, rng, training=False) is x


finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=6), elements=finite))
def test_softmax_rows_are_distributions(x):
    p = softmax(Tensor(x), axis=-1).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 8)), elements=finite))
def test_layer_norm_standardises(x):
    n = x.shape[-1]
    y = layer_norm(Tensor(x), Tensor(np.ones(n)), Tensor(np.zeros(n))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-9)
    assert np.all(np.abs(y) <= np.sqrt(n) + 1e-9)


@given(hnp.arrays(np.float64, st.integers(1, 10), elements=finite))
def test_sigmoid_softplus_consistency(x):
    s = sigmoid(Tensor(x)).data
    assert np.all((s >= 0) & (s <= 1))
    sp_pos = softplus(Tensor(x)).data
    sp_neg = softplus(Tensor(-x)).data
    np.testing.assert_allclose(sp_pos - sp_neg, x, atol=1e-9)
