import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from times2d import autodiff as ad
from times2d.autodiff import ContractError, GradientTape, ShapeError, Tensor, backward, finite_diff_check

from oracles import loop_conv2d, loop_matmul, mp_softmax


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- matmul -------------------------------------------------------------------


def test_matmul_identity():
    m = [[1.0, 2.0], [3.0, 4.0]]
    assert np.array_equal(ad.matmul(t64(np.eye(2)), t64(m)).data, m)


def test_matmul_hand():
    assert ad.matmul(t64([[1, 2]]), t64([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_matches_loop(rng):
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(ad.matmul(t64(a), t64(b)).data, loop_matmul(a, b), atol=1e-12, rtol=0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


@pytest.mark.parametrize("seed", range(10))
def test_matmul_random_shapes(seed):
    r = np.random.default_rng(seed)
    m, k, n = r.integers(1, 17, size=3)
    a, b = r.normal(size=(m, k)), r.normal(size=(k, n))
    np.testing.assert_allclose(ad.matmul(t64(a), t64(b)).data, loop_matmul(a, b), atol=1e-12, rtol=0)


# -- conv2d -------------------------------------------------------------------


def test_conv2d_identity_kernel(backend, rng):
    x = rng.normal(size=(2, 1, 5, 4))
    out = ad.conv2d(t64(x), t64(np.ones((1, 1, 1, 1))), padding="same")
    assert np.array_equal(out.data, x)


def test_conv2d_ones_valid(backend):
    out = ad.conv2d(t64(np.ones((1, 1, 3, 3))), t64(np.ones((1, 1, 3, 3))), padding="valid")
    assert out.data.reshape(-1).tolist() == [9.0]


def test_conv2d_matches_six_loop(backend, rng):
    x, w = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))
    out = ad.conv2d(t64(x), t64(w), padding="same")
    assert out.shape == (2, 4, 8, 8)
    np.testing.assert_allclose(out.data, loop_conv2d(x, w, 1, 1), atol=1e-12, rtol=0)


@pytest.mark.parametrize("seed", range(6))
def test_conv2d_random_shapes(backend, seed):
    r = np.random.default_rng(seed)
    B, C, O = r.integers(1, 4, size=3)
    H, W = r.integers(3, 17, size=2)
    kh, kw = r.choice([1, 3], size=2)
    x, w = r.normal(size=(B, C, H, W)), r.normal(size=(O, C, kh, kw))
    out = ad.conv2d(t64(x), t64(w), padding="same")
    np.testing.assert_allclose(out.data, loop_conv2d(x, w, kh // 2, kw // 2), atol=1e-12, rtol=0)


def test_conv2d_kernel_too_large():
    with pytest.raises(ShapeError):
        ad.conv2d(t64(np.ones((1, 1, 2, 2))), t64(np.ones((1, 1, 3, 3))), padding="valid")


def test_conv2d_backends_agree_including_grads(rng):
    from times2d import _accel

    x, w = rng.normal(size=(2, 3, 6, 5)), rng.normal(size=(4, 3, 3, 3))
    g = rng.normal(size=(2, 4, 6, 5))
    res = {}
    prev = _accel.get_backend()
    try:
        for be in ("numba", "numpy"):
            _accel.set_backend(be)
            xt, wt = t64(x, True), t64(w, True)
            out = ad.conv2d(xt, wt, padding="same")
            backward(ad.sum_(ad.mul(out, t64(g))))
            res[be] = (out.data, xt.grad, wt.grad)
    finally:
        _accel.set_backend(prev)
    for a, b in zip(res["numba"], res["numpy"]):
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


# -- softmax / layer norm -------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(t64([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_large_inputs_do_not_overflow():
    out = ad.softmax(t64([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_softmax_matches_extended_precision(rng):
    v = rng.normal(scale=3.0, size=11)
    np.testing.assert_allclose(ad.softmax(t64(v)).data, mp_softmax(v), atol=1e-12, rtol=0)


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        ad.softmax(t64([1.0, 2.0]), axis=3)


def test_layer_norm_constant_row():
    out = ad.layer_norm(t64(np.full((1, 4), 3.0)), t64(np.ones(4)), t64(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_two_values():
    out = ad.layer_norm(t64([[1.0, 3.0]]), t64(np.ones(2)), t64(np.zeros(2)), eps=1e-15)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-12)


def test_layer_norm_moments(rng):
    out = ad.layer_norm(t64(rng.normal(3.0, 5.0, size=(4, 32))), t64(np.ones(32)), t64(np.zeros(32))).data
    # direct recomputation of the moments
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)


# -- backward -----------------------------------------------------------------


def test_backward_sum():
    x = t64([1.0, 2.0, 3.0], grad=True)
    backward(ad.sum_(x))
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_sum_of_squares():
    x = t64([1.0, 2.0, 3.0], grad=True)
    backward(ad.sum_(ad.mul(x, x)))
    assert x.grad.tolist() == [2.0, 4.0, 6.0]


def test_backward_requires_scalar():
    x = t64([1.0, 2.0], grad=True)
    with pytest.raises(ContractError):
        backward(ad.mul(x, 2.0))


def test_shared_subexpression_matches_unshared(rng):
    v = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    x1, w1 = t64(v, True), t64(w, True)
    h = ad.gelu(ad.matmul(x1, w1))
    backward(ad.sum_(ad.add(ad.mul(h, h), h)))
    x2, w2 = t64(v, True), t64(w, True)
    ha = ad.gelu(ad.matmul(x2, w2))
    hb = ad.gelu(ad.matmul(x2, w2))
    hc = ad.gelu(ad.matmul(x2, w2))
    backward(ad.sum_(ad.add(ad.mul(ha, hb), hc)))
    np.testing.assert_allclose(x1.grad, x2.grad, atol=1e-13)
    np.testing.assert_allclose(w1.grad, w2.grad, atol=1e-13)


def test_tape_is_topologically_ordered(rng):
    x = t64(rng.normal(size=(2, 3)), True)
    y = ad.softmax(ad.gelu(ad.mul(x, x)))
    loss = ad.sum_(ad.add(y, x))
    tape = GradientTape.from_output(loss)
    assert tape.ops() == ["mul", "gelu", "softmax", "add", "sum"]
    position = {id(t): i for i, t in enumerate(tape.entries)}
    for i, t in enumerate(tape.entries):
        for inp in t._node.inputs:
            assert inp._node is None or position[id(inp)] < i


def test_only_scalar_broadcasting():
    with pytest.raises(ShapeError):
        ad.add(t64(np.ones((2, 3))), t64(np.ones(3)))
    assert ad.add(t64(np.ones((2, 3))), 2.0).data.tolist() == [[3.0] * 3] * 2


def test_float32_graph_stays_float32(rng):
    x = Tensor(rng.normal(size=(2, 4)), requires_grad=True, dtype=np.float32)
    y = ad.layer_norm(ad.gelu(ad.mul(x, 0.5)), Tensor(np.ones(4), dtype=np.float32), Tensor(np.zeros(4), dtype=np.float32))
    assert y.dtype == np.float32


def test_forward_bit_identical_across_runs(rng):
    x, w = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(2, 3, 3, 3))
    a = ad.softmax(ad.conv2d(t64(x), t64(w)), axis=-1).data
    b = ad.softmax(ad.conv2d(t64(x), t64(w)), axis=-1).data
    assert a.tobytes() == b.tobytes()


# -- finite differences ----------------------------------------------------------


def test_fd_check_linear_exact(rng):
    assert finite_diff_check(lambda t: ad.sum_(t), t64(rng.normal(size=5))) < 1e-9


def test_fd_check_quadratic():
    assert finite_diff_check(lambda t: ad.sum_(ad.mul(t, t)), t64([1.0, 2.0]), h=1e-5) < 1e-8


def test_fd_check_conv_softmax_composite(rng):
    w = t64(rng.normal(size=(2, 1, 3, 3)))
    probe = t64(rng.normal(size=(1, 2, 4, 5)))

    def f(x):
        return ad.sum_(ad.mul(ad.softmax(ad.conv2d(x, w), axis=-1), probe))

    assert finite_diff_check(f, t64(rng.normal(size=(1, 1, 4, 5)))) < 1e-4


def _op_cases(r):
    """(name, builder(x) -> scalar, input shape) for every differentiable op."""
    other = t64(r.normal(size=(3, 4)))
    probe34 = t64(r.normal(size=(3, 4)))
    w43 = t64(r.normal(size=(4, 3)))
    gamma, beta = t64(r.normal(size=4)), t64(r.normal(size=4))
    k = t64(r.normal(size=(2, 2, 3, 3)))
    probe_conv = t64(r.normal(size=(1, 2, 4, 4)))
    bm = t64(r.normal(size=(2, 4, 2)))

    def w(t, probe):
        return ad.sum_(ad.mul(t, probe))

    return [
        ("add", lambda x: w(ad.add(x, other), probe34), (3, 4)),
        ("sub", lambda x: w(ad.sub(other, x), probe34), (3, 4)),
        ("mul", lambda x: w(ad.mul(x, other), probe34), (3, 4)),
        ("matmul", lambda x: ad.sum_(ad.mul(ad.matmul(x, w43), ad.matmul(x, w43))), (3, 4)),
        ("bmatmul", lambda x: ad.sum_(ad.mul(ad.bmatmul(x, bm), ad.bmatmul(x, bm))), (2, 3, 4)),
        ("linear", lambda x: ad.sum_(ad.gelu(ad.linear(x, w43, t64([0.1, -0.2, 0.3])))), (3, 4)),
        ("conv2d", lambda x: w(ad.conv2d(x, k), probe_conv), (1, 2, 4, 4)),
        ("gelu", lambda x: w(ad.gelu(x), probe34), (3, 4)),
        ("softmax", lambda x: w(ad.softmax(x, axis=0), probe34), (3, 4)),
        ("layer_norm", lambda x: w(ad.layer_norm(x, gamma, beta), probe34), (3, 4)),
        ("reshape", lambda x: ad.sum_(ad.mul(ad.reshape(x, (4, 3)), ad.reshape(probe34, (4, 3)))), (3, 4)),
        ("permute", lambda x: ad.sum_(ad.mul(ad.permute(x, (1, 0)), ad.permute(probe34, (1, 0)))), (3, 4)),
        ("pad", lambda x: ad.sum_(ad.mul(ad.pad(x, ((1, 0), (0, 2))), t64(np.arange(24.0).reshape(4, 6)))), (3, 4)),
        ("slice", lambda x: ad.sum_(ad.mul(ad.slice_(x, (slice(1, 3), slice(None))), ad.slice_(probe34, (slice(0, 2),)))), (3, 4)),
        ("concat", lambda x: ad.sum_(ad.mul(ad.concat([x, other], axis=0), ad.concat([probe34, probe34], axis=0))), (3, 4)),
        ("stack", lambda x: ad.sum_(ad.mul(ad.stack([x, x], axis=1), ad.stack([probe34, other], axis=1))), (3, 4)),
        ("mean", lambda x: ad.sum_(ad.mul(ad.mean(x, axis=1), t64([1.0, -2.0, 3.0]))), (3, 4)),
        ("sum", lambda x: ad.sum_(ad.mul(ad.sum_(x, axis=0), t64([1.0, -2.0, 3.0, 0.5]))), (3, 4)),
        ("neg", lambda x: w(ad.neg(x), probe34), (3, 4)),
    ]


@pytest.mark.parametrize("seed", range(100))
def test_every_op_passes_finite_difference(seed):
    r = np.random.default_rng(seed)
    for name, f, shape in _op_cases(r):
        err = finite_diff_check(f, t64(r.normal(size=shape)), h=1e-5)
        assert err < 1e-4, f"{name}: {err}"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_sums_to_one(values):
    out = ad.softmax(t64(values)).data
    assert abs(out.sum() - 1.0) < 1e-12
    assert np.all(out >= 0)
