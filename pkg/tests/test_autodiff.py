import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brainkan import autodiff as ad
from brainkan.autodiff import AdamState, Tensor, adam_step, backward

from gradcheck import check_gradients


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(Tensor(np.eye(2)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_matmul_hand_product():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_zero_annihilates():
    out = ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.arange(12.0).reshape(3, 4)))
    np.testing.assert_array_equal(out.data, np.zeros((2, 4)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 4\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_softmax_symmetry():
    out = ad.softmax(Tensor([[0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]])


def test_softmax_large_logits_stable():
    out = ad.softmax(Tensor([[1000.0, 0.0]]))
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-300)


def test_softmax_closed_form():
    out = ad.softmax(Tensor([[math.log(1.0), math.log(3.0)]]))
    np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-50, 50), min_size=2, max_size=6),
        min_size=1,
        max_size=4,
    ).filter(lambda rows: len({len(r) for r in rows}) == 1)
)
def test_softmax_rows_sum_to_one(rows):
    out = ad.softmax(Tensor(np.array(rows)), axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


def test_layer_norm_constant_row_gives_zero():
    x = Tensor(np.full((2, 4), 3.7))
    out = ad.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_two_point_standardization():
    out = ad.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-10)


def test_layer_norm_zero_gain_returns_bias():
    out = ad.layer_norm(
        Tensor(np.random.default_rng(0).normal(size=(3, 5))),
        Tensor(np.zeros(5)),
        Tensor(np.full(5, 2.5)),
    )
    np.testing.assert_allclose(out.data, 2.5)


def test_layer_norm_shape_error():
    with pytest.raises(ValueError, match="gain/bias"):
        ad.layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))


def test_silu_tanh_at_zero():
    assert ad.silu(Tensor([0.0])).data[0] == 0.0
    t = Tensor([0.0], requires_grad=True)
    out = ad.tanh(t)
    assert out.data[0] == 0.0
    backward(ad.tsum(out))
    assert t.grad[0] == pytest.approx(1.0, abs=1e-15)


def test_gelu_value_matches_erf_formula():
    out = ad.gelu(Tensor([1.0]))
    expected = 1.0 * 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
    assert out.data[0] == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "op",
    [ad.silu, ad.tanh, ad.gelu, lambda t: ad.softmax(t, axis=-1), ad.exp],
)
def test_elementwise_gradients_match_finite_differences(op):
    rng = np.random.default_rng(42)
    x = rng.normal(size=(3, 5))
    check_gradients(lambda ts: ad.tsum(ad.mul(op(ts[0]), ts[1])), [x, rng.normal(size=(3, 5))])


def test_cross_entropy_uniform_prediction():
    loss = ad.cross_entropy(Tensor([[0.0, 0.0]]), [1])
    assert loss.item() == pytest.approx(math.log(2.0), abs=1e-15)


def test_cross_entropy_confident_correct_is_near_zero():
    loss = ad.cross_entropy(Tensor([[20.0, -20.0]]), [0])
    assert 0.0 <= loss.item() < 1e-12


def test_cross_entropy_hand_logsumexp():
    # -log(e^1 / (e^1 + e^2)) = log(1 + e)
    loss = ad.cross_entropy(Tensor([[1.0, 2.0]]), [0])
    assert loss.item() == pytest.approx(math.log(1.0 + math.e), abs=1e-14)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError, match="labels"):
        ad.cross_entropy(Tensor([[0.0, 0.0]]), [2])


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30)), min_size=1, max_size=6),
    st.randoms(use_true_random=False),
)
def test_cross_entropy_nonnegative(rows, rnd):
    labels = [rnd.randint(0, 1) for _ in rows]
    loss = ad.cross_entropy(Tensor(np.array(rows)), labels)
    assert loss.item() >= 0.0


def test_cross_entropy_gradient():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(4, 2))
    labels = np.array([0, 1, 1, 0])
    check_gradients(lambda ts: ad.cross_entropy(ts[0], labels), [logits])


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)), requires_grad=True)
    backward(ad.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(ad.tsum(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_disconnected_parameter_keeps_zero_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    other = Tensor([5.0], requires_grad=True)
    backward(ad.tsum(ad.mul(x, x)))
    np.testing.assert_array_equal(other.grad, [0.0])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(ad.mul(x, 2.0))


def test_backward_accumulates_without_zeroing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ad.tsum(ad.mul(x, x))
    backward(loss)
    first = x.grad.copy()
    backward(loss)
    np.testing.assert_allclose(x.grad, 2.0 * first)


def test_backward_deterministic_with_zeroing():
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    loss = ad.tsum(ad.silu(ad.matmul(x, w)))
    backward(loss)
    gx, gw = x.grad.copy(), w.grad.copy()
    x.zero_grad()
    w.zero_grad()
    backward(loss)
    np.testing.assert_array_equal(x.grad, gx)
    np.testing.assert_array_equal(w.grad, gw)


def test_finite_outputs_on_finite_inputs():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(3, 4)) * 100.0, requires_grad=True)
    for op in (ad.silu, ad.tanh, ad.gelu, lambda t: ad.softmax(t, axis=-1)):
        out = op(x)
        assert np.isfinite(out.data).all()
        x.zero_grad()
        backward(ad.tsum(out))
        assert np.isfinite(x.grad).all()


def test_shape_ops_gradients():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))

    def build(ts):
        h = ad.matmul(ts[0], ts[1])  # batched (2,3,5)
        h = ad.transpose(h, (1, 0, 2))
        h = ad.reshape(h, (3, 10))
        h = ad.concat([h, ad.mul(h, 0.5)], axis=1)
        return ad.tsum(ad.mul(h[1:, :4], h[1:, :4]))

    check_gradients(build, [a, b])


def test_broadcast_add_bias_gradient():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(2, 3, 4))
    bias = rng.normal(size=(4,))
    check_gradients(lambda ts: ad.tsum(ad.gelu(ad.add(ts[0], ts[1]))), [x, bias])


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_leaves_params():
    p = Tensor([1.0, -2.0], requires_grad=True)
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.step_count == 1


def test_adam_first_step_moves_by_lr_sign():
    lr = 0.0009
    p = Tensor([1.0, 1.0], requires_grad=True)
    state = AdamState.for_params([p], learning_rate=lr)
    g = np.array([0.3, -2.0])
    adam_step([p], [g], state)
    # bias-corrected first step: delta = lr * g / (|g| + eps) ~ lr * sign(g)
    np.testing.assert_allclose(p.data, [1.0 - lr, 1.0 + lr], atol=1e-9)


def test_adam_two_steps_match_scalar_oracle():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    g = 0.7
    # hand-rolled scalar recurrence
    theta, m, v = 2.0, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)

    p = Tensor([2.0], requires_grad=True)
    state = AdamState.for_params([p], learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps)
    adam_step([p], [np.array([g])], state)
    adam_step([p], [np.array([g])], state)
    assert p.data[0] == pytest.approx(theta, abs=1e-15)
    assert state.step_count == 2


def test_adam_shape_mismatch_error():
    p = Tensor(np.zeros(3), requires_grad=True)
    state = AdamState.for_params([p])
    with pytest.raises(ValueError, match="shape"):
        adam_step([p], [np.zeros(4)], state)
