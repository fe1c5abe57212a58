import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from adafcn import tensorcore as tc
from adafcn.tensorcore import Tape, Tensor, backward, conv1d, finite_diff_check, matmul


def grad_of(f, *params):
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    return [p.grad for p in params]


def test_matmul_identity_cases():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), m).data, m)
    np.testing.assert_array_equal(matmul(m, np.eye(2)).data, m)


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    expected = np.array(oracles.matmul(a.tolist(), b.tolist()))
    np.testing.assert_allclose(matmul(a, b).data, expected, rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(3, 4\).*\(3, 2\)"):
        matmul(np.zeros((3, 4)), np.zeros((3, 2)))


def test_matmul_backward_rules(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    ga, gb = grad_of(lambda: matmul(a, b).sum(), a, b)
    ones = np.ones((3, 2))
    np.testing.assert_allclose(ga, ones @ b.data.T)
    np.testing.assert_allclose(gb, a.data.T @ ones)


@pytest.mark.parametrize("kernel", [[0.0, 1.0, 0.0], [1.0]])
def test_conv1d_identity_kernels(kernel, rng):
    s = rng.standard_normal(17)
    np.testing.assert_array_equal(conv1d(s, kernel).data, s)


def test_conv1d_dilated_impulse():
    s = np.zeros(9)
    s[4] = 1.0
    out = conv1d(s, np.full(3, 1 / 3), dilation=2).data
    expected = np.zeros(9)
    expected[[2, 4, 6]] = 1 / 3
    np.testing.assert_allclose(out, expected, atol=1e-15)
    np.testing.assert_allclose(out, oracles.conv_same(s.tolist(), [1 / 3] * 3, 2), atol=1e-15)


@pytest.mark.parametrize("dilation", [1, 2, 4])
def test_conv1d_matches_loop_oracle(dilation, rng):
    s, k = rng.standard_normal(40), rng.standard_normal(5)
    np.testing.assert_allclose(conv1d(s, k, dilation).data,
                               oracles.conv_same(s.tolist(), k.tolist(), dilation), atol=1e-12)


def test_conv1d_even_kernel_rejected():
    with pytest.raises(ValueError, match="odd"):
        conv1d(np.zeros(10), np.zeros(4))


def test_conv1d_gradients(rng):
    s = Tensor(rng.standard_normal((2, 3, 30)), requires_grad=True)
    k = Tensor(rng.standard_normal(5), requires_grad=True)
    w = rng.standard_normal((2, 3, 30))
    # bilinear in (s, k): central differences are exact for any step
    err = finite_diff_check(lambda: (conv1d(s, k, dilation=2) * w).sum(), [s, k], h=1e-3, n_probe=60)
    assert err < 1e-9


def test_backward_sum_gives_ones():
    p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    (g,) = grad_of(lambda: p.sum(), p)
    np.testing.assert_array_equal(g, np.ones((2, 3)))


def test_backward_half_square_gives_param(rng):
    p = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    (g,) = grad_of(lambda: (p * p).sum() * 0.5, p)
    np.testing.assert_allclose(g, p.data)


def test_fan_out_accumulates():
    x = Tensor(np.ones(5), requires_grad=True)
    (g,) = grad_of(lambda: x.sum() + x.sum(), x)
    np.testing.assert_array_equal(g, 2 * np.ones(5))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ValueError, match="scalar"):
        backward(tape, y)


def test_no_recording_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * 2.0
    assert not y.requires_grad


def test_tape_is_topological_and_each_node_visited_once(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    with Tape() as tape:
        y = (x * x).sum() + tc.relu(x).sum()
    produced = set()
    for node in tape.nodes:
        for inp in node.inputs:
            assert inp is x or id(inp) in produced or not inp.requires_grad
        produced.add(id(node.out))
    calls = []
    for node in tape.nodes:
        fn = node.backward
        node.backward = (lambda f, n: (lambda g: (calls.append(n), f(g))[1]))(fn, id(node))
    backward(tape, y)
    assert len(calls) == len(set(calls)) == len(tape.nodes)


def test_debug_mode_flags_non_finite():
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
        tc.tlog(Tensor(np.array([-1.0])))


def test_finite_diff_check_quadratic_and_constant(rng):
    A = rng.standard_normal((5, 5))
    A = A @ A.T
    p = Tensor(rng.standard_normal((5, 1)), requires_grad=True)
    assert finite_diff_check(lambda: (p.mT @ (A @ p)).sum(), [p], h=1e-3, n_probe=20) < 1e-9
    q = Tensor(rng.standard_normal(3), requires_grad=True)
    assert finite_diff_check(lambda: Tensor(np.array(2.0)) + 0.0 * q.sum(), [q], n_probe=10) == 0.0


def _composite(params, w):
    a, b, k = params
    sig = conv1d(a, k, dilation=2)
    h = tc.leaky_relu(sig, 0.1) @ b
    norm = tc.clamp_min((h * h).mean(axis=-1, keepdims=True), 1e-8) ** -0.5
    z = tc.log_softmax(h * norm, axis=-1)
    return (z * w).sum() + tc.tabs(h).mean() + tc.texp(h * 0.1).sum() * 0.01


def test_composite_graph_gradients(rng):
    a = Tensor(rng.standard_normal((3, 20)), requires_grad=True)
    b = Tensor(rng.standard_normal((20, 4)), requires_grad=True)
    k = Tensor(rng.standard_normal(3), requires_grad=True)
    w = rng.standard_normal((3, 4))
    assert finite_diff_check(lambda: _composite((a, b, k), w), [a, b, k], n_probe=120) < 1e-4


def test_broadcast_and_shape_op_gradients(rng):
    a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 1)), requires_grad=True)
    c = Tensor(rng.uniform(1, 2, (4,)), requires_grad=True)

    def f():
        x = (a * b - c) / c
        y = tc.stack([x[0], x[1].transpose((1, 0)).reshape((3, 4))], axis=0)
        z = tc.concat([y, x[:, :, :2]], axis=-1)
        return (z ** 3).sum() + x[np.array([0, 0, 1])].sum()
    assert finite_diff_check(f, [a, b, c], n_probe=90) < 1e-7


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)))
def test_log_softmax_rows_normalize(x):
    out = tc.log_softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(np.exp(out).sum(axis=-1), 1.0, atol=1e-12)


def test_determinism(rng):
    a = rng.standard_normal((4, 30))
    k = Tensor(rng.standard_normal(5), requires_grad=True)
    runs = []
    for _ in range(2):
        k.grad = None
        with Tape() as tape:
            out = (tc.leaky_relu(conv1d(a, k, 2)) ** 2).sum()
        backward(tape, out)
        runs.append((out.data.tobytes(), k.grad.tobytes()))
    assert runs[0] == runs[1]
