import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from add_distill.errors import DimensionError, DomainError
from add_distill.tensor_core import (
    DiffOp,
    MlpParams,
    bilinear_resize,
    channel_argmax,
    embedding_lookup,
    embedding_lookup_vjp,
    matmul,
    matmul_op,
    mlp_apply,
    mlp_op,
    resize_op,
    softmax_op,
    softmax_rows,
    vjp_check,
)
from oracles import bilinear_sample, numeric_vjp


def test_matmul_identity_and_hand_case():
    b = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(matmul(np.eye(3), b), b)
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2.0], [4.0]])
    assert not matmul(np.zeros((2, 3)), b).any()


def test_matmul_rejects_inner_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_softmax_examples():
    assert np.allclose(softmax_rows([[2.0, 2.0, 2.0, 2.0]]), 0.25, rtol=0, atol=1e-15)
    assert np.allclose(softmax_rows([[0.0, math.log(2.0)]]), [[1 / 3, 2 / 3]], rtol=0, atol=1e-15)
    big = softmax_rows([[1000.0, 0.0]])
    assert np.all(np.isfinite(big)) and big[0, 0] == pytest.approx(1.0) and big[0, 1] < 1e-300


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-1e300, 1e300)))
def test_softmax_rows_sum_to_one_for_extreme_inputs(x):
    y = softmax_rows(x)
    assert np.all(np.abs(y.sum(axis=1) - 1.0) <= 1e-12)


def test_mlp_examples():
    ident = MlpParams.identity(3)
    x = np.array([[1.0, -2.0, 3.0]])
    assert np.array_equal(mlp_apply(ident, x), x)
    hand = MlpParams([np.array([[2.0]])], [np.array([1.0])], ("identity",))
    assert mlp_apply(hand, [[3.0]])[0, 0] == 7.0
    relu = MlpParams([np.eye(2)], [np.zeros(2)], ("relu",))
    assert not mlp_apply(relu, -np.ones((4, 2))).any()


def test_mlp_shape_mismatch():
    with pytest.raises(DimensionError):
        mlp_apply(MlpParams.identity(3), np.zeros((2, 4)))


def test_resize_constant_and_identity():
    c = np.full((3, 5, 2), 1.5)
    assert np.allclose(bilinear_resize(c, 7, 2), 1.5, rtol=0, atol=1e-15)
    x = np.array([[0.0, 1.0], [2.0, 3.0]])[:, :, None]
    assert np.array_equal(bilinear_resize(x, 2, 2), x)


def test_resize_1x2_to_1x4_matches_sampler():
    x = np.array([[0.0, 1.0]])[:, :, None]
    # frozen from the scalar sampler oracle
    expected = np.array([0.0, 0.25, 0.75, 1.0])
    assert np.allclose(bilinear_sample(x, 1, 4)[0, :, 0], expected, rtol=0, atol=1e-15)
    assert np.allclose(bilinear_resize(x, 1, 4)[0, :, 0], expected, rtol=0, atol=1e-15)


def test_resize_random_against_sampler():
    rng = np.random.default_rng(3)
    for _ in range(30):
        h, w, oh, ow = rng.integers(1, 7, size=4)
        x = rng.standard_normal((h, w, 2))
        assert np.allclose(bilinear_resize(x, oh, ow), bilinear_sample(x, oh, ow), rtol=0, atol=1e-12)


def test_resize_same_size_is_exact_identity():
    x = np.random.default_rng(0).standard_normal((4, 6, 3))
    assert np.array_equal(bilinear_resize(x, 4, 6), x)


def test_argmax_examples_and_shift_invariance():
    assert not channel_argmax(np.random.default_rng(0).random((3, 3, 1))).any()
    assert channel_argmax(np.array([[[0.1, 0.9, 0.3]]]))[0, 0] == 1
    assert channel_argmax(np.array([[[0.5, 0.5]]]))[0, 0] == 0
    x = np.random.default_rng(1).standard_normal((4, 4, 5))
    shift = np.random.default_rng(2).standard_normal((4, 4, 1))
    assert np.array_equal(channel_argmax(x), channel_argmax(x + shift))


def test_embedding_lookup():
    table = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(embedding_lookup(table, np.zeros((2, 2), dtype=int)), np.broadcast_to(table[0], (2, 2, 3)))
    assert np.array_equal(embedding_lookup(np.eye(2), [[0, 1]])[0], np.eye(2))
    assert embedding_lookup(table, np.zeros((0, 0), dtype=int)).shape == (0, 0, 3)
    with pytest.raises(DomainError):
        embedding_lookup(table, [[2]])


def test_embedding_vjp_accumulates_repeated_indices():
    idx = np.array([[0, 1, 0]])
    seed = np.ones((1, 3, 2))
    g = embedding_lookup_vjp((3, 2), idx, seed)
    assert np.array_equal(g, [[2.0, 2.0], [1.0, 1.0], [0.0, 0.0]])


def test_vjp_check_linear_is_exact():
    rng = np.random.default_rng(0)
    err = vjp_check(matmul_op(rng.standard_normal((4, 3))), rng.uniform(-1, 1, (2, 4)), rng.standard_normal((2, 3)))
    assert err <= 1e-9


def test_vjp_check_rejects_bad_eps():
    with pytest.raises(DomainError):
        vjp_check(softmax_op(), np.zeros((1, 2)), np.ones((1, 2)), eps=0.1)


def test_vjp_check_detects_wrong_gradient():
    wrong = DiffOp(lambda x: x**2, lambda x, s: s * x, "half-derivative")
    assert vjp_check(wrong, np.full((1, 3), 0.5), np.ones((1, 3))) > 0.4


def test_ops_against_independent_finite_differences():
    rng = np.random.default_rng(11)
    params = MlpParams.init([4, 5, 3], rng)
    for op, shape in ((softmax_op(), (3, 4)), (mlp_op(params), (6, 4)), (resize_op(3, 5), (2, 4, 2))):
        x = rng.uniform(-1, 1, shape)
        seed = rng.standard_normal(op.forward(x).shape)
        assert np.allclose(op.vjp(x, seed), numeric_vjp(op.forward, x, seed), rtol=1e-6, atol=1e-8)


def test_kernels_are_bit_deterministic():
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal((9, 7)), rng.standard_normal((7, 4))
    assert matmul(a, b).tobytes() == matmul(a.copy(), b.copy()).tobytes()
    assert softmax_rows(a).tobytes() == softmax_rows(a.copy()).tobytes()
