import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from extrapnet.tensor import (NonFiniteError, ShapeError, Tape, TapeConsumedError, Tensor, add, backward,
                              conv1d, conv2d, grad_check, mul, no_grad, per_position_cross_entropy, relu,
                              tensor_sum)


def naive_conv1d(x, w, padding, dilation):
    c_in, length = x.shape
    c_out, _, k = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding)))
    out = np.zeros((c_out, length))
    for c in range(c_out):
        for pos in range(length):
            for i in range(c_in):
                for t in range(k):
                    out[c, pos] += w[c, i, t] * xp[i, pos + t * dilation]
    return out


def naive_conv2d(x, w, padding, dilation):
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((c_out, h, wd))
    for c in range(c_out):
        for r in range(h):
            for q in range(wd):
                for i in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            out[c, r, q] += w[c, i, a, b] * xp[i, r + a * dilation, q + b * dilation]
    return out


# --- conv forward -------------------------------------------------------------

def test_conv1d_identity_kernel():
    out = conv1d(Tensor([[1.0]]), Tensor([[[0.0, 1.0, 0.0]]]), padding=1)
    assert out.data.tolist() == [[1.0]]


def test_conv1d_sliding_window_sum():
    out = conv1d(Tensor([[1.0, 0.0, 1.0, 1.0]]), Tensor([[[1.0, 1.0, 1.0]]]), padding=1)
    assert out.data.tolist() == [[1.0, 2.0, 2.0, 2.0]]


def test_conv1d_zero_kernel():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 7)))
    out = conv1d(x, Tensor(np.zeros((2, 3, 3))), padding=1)
    assert out.shape == (2, 7) and not out.data.any()


def test_conv2d_identity_kernel():
    x = np.arange(9.0).reshape(1, 3, 3)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(k)).data, x)


def test_conv2d_all_ones():
    out = conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
    assert out.data.tolist() == [[[4.0, 4.0], [4.0, 4.0]]]


def test_conv2d_dilated_shape():
    out = conv2d(Tensor(np.ones((1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))), padding=2, dilation=2)
    assert out.shape == (1, 5, 5)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        conv1d(Tensor(np.ones((2, 5))), Tensor(np.ones((1, 3, 3))))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 1, 3, 3))))


@settings(max_examples=25, deadline=None)
@given(c_in=st.integers(1, 3), c_out=st.integers(1, 3), length=st.integers(1, 12),
       dilation=st.integers(1, 3), seed=st.integers(0, 2**16))
def test_conv1d_matches_naive(c_in, c_out, length, dilation, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((c_in, length))
    w = rng.standard_normal((c_out, c_in, 3))
    out = conv1d(Tensor(x), Tensor(w), padding=dilation, dilation=dilation)
    assert out.shape == (c_out, length)
    np.testing.assert_allclose(out.data, naive_conv1d(x, w, dilation, dilation), rtol=1e-12, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(c_in=st.integers(1, 3), c_out=st.integers(1, 2), h=st.integers(1, 6), w=st.integers(1, 6),
       dilation=st.integers(1, 2), seed=st.integers(0, 2**16))
def test_conv2d_matches_naive(c_in, c_out, h, w, dilation, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((c_in, h, w))
    k = rng.standard_normal((c_out, c_in, 3, 3))
    out = conv2d(Tensor(x), Tensor(k), padding=dilation, dilation=dilation)
    assert out.shape == (c_out, h, w)
    np.testing.assert_allclose(out.data, naive_conv2d(x, k, dilation, dilation), rtol=1e-12, atol=1e-12)


def test_batched_conv_equals_per_sample():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 2, 5, 6))
    k = rng.standard_normal((3, 2, 3, 3))
    batched = conv2d(Tensor(x), Tensor(k)).data
    for i in range(4):
        np.testing.assert_allclose(batched[i], conv2d(Tensor(x[i]), Tensor(k)).data, rtol=1e-13)


# --- elementwise / loss -------------------------------------------------------

def test_relu_values_and_grad():
    assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
    assert not relu(Tensor([-3.0, -0.5])).data.any()
    x = Tensor([-1.0, 2.0], requires_grad=True)
    backward(tensor_sum(relu(x)))
    assert x.grad.tolist() == [0.0, 1.0]


def test_relu_subgradient_at_zero():
    x = Tensor([0.0], requires_grad=True)
    backward(tensor_sum(relu(x)))
    assert x.grad.tolist() == [0.0]


def test_add():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 4.0], requires_grad=True)
    assert add(a, Tensor([0.0, 0.0])).data.tolist() == [1.0, 2.0]
    assert add(a, b).data.tolist() == [4.0, 6.0]
    backward(tensor_sum(a + b))
    assert a.grad.tolist() == [1.0, 1.0] and b.grad.tolist() == [1.0, 1.0]
    with pytest.raises(ShapeError):
        add(a, Tensor([1.0, 2.0, 3.0]))


def test_cross_entropy_uniform():
    loss = per_position_cross_entropy(Tensor(np.zeros((2, 5))), np.array([0, 1, 1, 0, 1]))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-12)


def test_cross_entropy_saturated():
    loss = per_position_cross_entropy(Tensor([[-1000.0], [1000.0]]), np.array([1]))
    assert np.isfinite(loss.item()) and loss.item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_hand_values():
    # position 0 logits (1, 0) target 0; position 1 logits (0, 1) target 1
    loss = per_position_cross_entropy(Tensor([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]))
    sig = 1.0 / (1.0 + math.exp(-1.0))
    assert loss.item() == pytest.approx(-math.log(sig), rel=1e-12)


def test_cross_entropy_rejects_bad_target():
    with pytest.raises(ValueError):
        per_position_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 2, 1]))


def test_cross_entropy_batched_layout():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((3, 2, 4))
    t = rng.integers(0, 2, (3, 4))
    batched = per_position_cross_entropy(Tensor(z), t).item()
    single = np.mean([per_position_cross_entropy(Tensor(z[i]), t[i]).item() for i in range(3)])
    assert batched == pytest.approx(single, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=2, max_size=2), st.integers(0, 1))
def test_cross_entropy_finite_and_nonnegative(z, t):
    loss = per_position_cross_entropy(Tensor(np.array(z).reshape(2, 1)), np.array([t])).item()
    assert np.isfinite(loss) and loss >= 0.0


# --- backward -----------------------------------------------------------------

def test_bilinear_grads():
    w = Tensor([2.0], requires_grad=True)
    x = Tensor([3.0], requires_grad=True)
    backward(tensor_sum(mul(w, x)))
    assert w.grad.tolist() == [3.0] and x.grad.tolist() == [2.0]


def test_constant_loss_zero_grad():
    w = Tensor([1.0, -2.0], requires_grad=True)
    loss = tensor_sum(mul(w, Tensor([0.0, 0.0])))
    backward(loss)
    assert not w.grad.any()


def test_non_scalar_backward_rejected():
    with pytest.raises(ShapeError):
        backward(relu(Tensor([1.0, 2.0], requires_grad=True)))


def test_consumed_tape_rejected():
    w = Tensor([1.0], requires_grad=True)
    loss = tensor_sum(mul(w, w))
    backward(loss)
    with pytest.raises(TapeConsumedError):
        backward(loss)


def test_tape_records_in_creation_order():
    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = tensor_sum(relu(add(w, w)))
    assert Tape(loss).ops() == ["add", "relu", "sum"]


def test_weight_shared_kernel_accumulates():
    """Two applications of one kernel get the sum of both single-use gradients."""
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 6))
    k = rng.standard_normal((2, 2, 3))

    shared = Tensor(k.copy(), requires_grad=True)
    backward(tensor_sum(conv1d(relu(conv1d(Tensor(x), shared)), shared)))

    # graph surgery: two independent copies, one per use
    k1 = Tensor(k.copy(), requires_grad=True)
    k2 = Tensor(k.copy(), requires_grad=True)
    backward(tensor_sum(conv1d(relu(conv1d(Tensor(x), k1)), k2)))
    np.testing.assert_allclose(shared.grad, k1.grad + k2.grad, rtol=1e-12, atol=1e-12)

    err = grad_check(lambda p: tensor_sum(conv1d(relu(conv1d(Tensor(x), p)), p)), Tensor(k.copy()))
    assert err <= 1e-4


def test_grad_accumulates_across_backward_calls():
    w = Tensor([1.5], requires_grad=True)
    backward(tensor_sum(mul(w, Tensor([2.0]))))
    backward(tensor_sum(mul(w, Tensor([5.0]))))
    assert w.grad.tolist() == [7.0]


def test_no_grad_records_nothing():
    w = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = mul(w, w)
    assert y.is_leaf


def test_nonfinite_forward_raises():
    with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
        mul(Tensor([1e200]), Tensor([1e200]))


# --- grad_check ---------------------------------------------------------------

def test_grad_check_quadratic():
    a = Tensor(np.array([[2.0, 0.5], [0.5, 1.0]]))
    err = grad_check(lambda p: tensor_sum(mul(p, mul(p, a))), Tensor([[0.3, -1.2], [0.7, 2.0]]))
    assert err < 1e-6


def test_grad_check_constant():
    assert grad_check(lambda p: tensor_sum(Tensor([1.0, 2.0])), Tensor([0.5, 0.25])) == 0.0


def _away_from_zero(rng, shape):
    v = rng.uniform(0.2, 1.5, shape)
    return v * rng.choice([-1.0, 1.0], shape)


@pytest.mark.parametrize("dilation", [1, 2])
def test_grad_check_conv1d(dilation):
    rng = np.random.default_rng(dilation)
    x = rng.standard_normal((2, 7))
    w = rng.standard_normal((3, 2, 3))
    target = rng.integers(0, 2, 7)
    wfix = rng.standard_normal((2, 3, 3))

    def via_kernel(p):
        return per_position_cross_entropy(conv1d(conv1d(Tensor(x), p, dilation, dilation), Tensor(wfix)), target)

    def via_input(p):
        return per_position_cross_entropy(conv1d(conv1d(p, Tensor(w), dilation, dilation), Tensor(wfix)), target)

    assert grad_check(via_kernel, Tensor(w.copy())) <= 1e-4
    assert grad_check(via_input, Tensor(x.copy())) <= 1e-4


@pytest.mark.parametrize("dilation", [1, 2])
def test_grad_check_conv2d(dilation):
    rng = np.random.default_rng(10 + dilation)
    x = rng.standard_normal((2, 4, 5))
    w = rng.standard_normal((2, 2, 3, 3))
    target = rng.integers(0, 2, (4, 5))
    assert grad_check(lambda p: per_position_cross_entropy(conv2d(Tensor(x), p, dilation, dilation), target),
                      Tensor(w.copy())) <= 1e-4
    assert grad_check(lambda p: per_position_cross_entropy(conv2d(p, Tensor(w), dilation, dilation), target),
                      Tensor(x.copy())) <= 1e-4


def test_grad_check_relu_add_mul():
    rng = np.random.default_rng(7)
    x = _away_from_zero(rng, (5,))
    b = Tensor(rng.standard_normal(5))
    assert grad_check(lambda p: tensor_sum(mul(relu(p), b)), Tensor(x)) <= 1e-4
    assert grad_check(lambda p: tensor_sum(mul(add(p, b), add(p, b))), Tensor(x.copy())) <= 1e-4


def test_grad_check_cross_entropy():
    rng = np.random.default_rng(8)
    z = rng.standard_normal((3, 2, 6)) * 3
    t = rng.integers(0, 2, (3, 6))
    assert grad_check(lambda p: per_position_cross_entropy(p, t), Tensor(z)) <= 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16), st.integers(1, 4), st.integers(1, 9))
def test_conv_preserves_length(seed, dilation, length):
    rng = np.random.default_rng(seed)
    out = conv1d(Tensor(rng.standard_normal((2, length))), Tensor(rng.standard_normal((1, 2, 3))),
                 padding=dilation, dilation=dilation)
    assert out.shape == (1, length)
