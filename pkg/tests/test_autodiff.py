import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfdebias import autodiff as ad
from cfdebias.autodiff import AdamState, Tensor, adam_step, grad_check
from cfdebias.errors import InvalidArgumentError, InvalidShapeError, NumericFailureError


def naive_conv(x, k, b):
    w = k.shape[0]
    out = np.zeros((x.shape[0] - w + 1, k.shape[2]))
    for t in range(out.shape[0]):
        for o in range(k.shape[2]):
            acc = b[o]
            for j in range(w):
                for c in range(k.shape[1]):
                    acc += x[t + j, c] * k[j, c, o]
            out[t, o] = acc
    return out


def naive_pool(x, window, stride):
    n = (x.shape[0] - window) // stride + 1
    out = np.zeros((n, x.shape[1]))
    for p in range(n):
        for c in range(x.shape[1]):
            out[p, c] = max(x[p * stride + j, c] for j in range(window))
    return out


# ---------------------------------------------------------------- sigmoid

def test_sigmoid_basics():
    assert ad.sigmoid_values(0.0) == 0.5
    x = np.linspace(-30, 30, 61)
    s = ad.sigmoid_values(x)
    np.testing.assert_allclose(s + ad.sigmoid_values(-x), 1.0, rtol=0, atol=1e-15)


def test_sigmoid_stays_open_interval():
    s = ad.sigmoid_values(np.array([-1e4, -800.0, 800.0, 1e4]))
    assert np.all(s > 0) and np.all(s < 1)


def test_sigmoid_gradient_at_0_7():
    x = Tensor(np.array(0.7), requires_grad=True)
    ad.sigmoid(x).backward()
    h = 1e-6
    numeric = (ad.sigmoid_values(0.7 + h) - ad.sigmoid_values(0.7 - h)) / (2 * h)
    assert abs(x.grad - numeric) / abs(numeric) < 1e-8


# ---------------------------------------------------------------- softmax

def test_softmax_examples():
    np.testing.assert_array_equal(ad.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    v = np.random.default_rng(0).normal(size=7)
    np.testing.assert_allclose(ad.softmax(Tensor(v)).data, ad.softmax(Tensor(v + 13.5)).data, atol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_softmax_sums_to_one(v):
    y = ad.softmax(Tensor(np.array(v))).data
    assert np.all(y > 0)
    assert abs(y.sum() - 1.0) <= 1e-12


def test_softmax_mask_excludes_entries():
    y = ad.softmax(Tensor([[1.0, 2.0, 50.0]]), mask=np.array([[True, True, False]])).data
    assert y[0, 2] == 0.0
    np.testing.assert_allclose(y[0, :2], ad.softmax(Tensor([1.0, 2.0])).data, atol=1e-16)
    with pytest.raises(InvalidShapeError):
        ad.softmax(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


def test_softmax_gradient_random_vector():
    v = np.random.default_rng(1).normal(size=5)
    w = np.random.default_rng(2).normal(size=5)
    err = grad_check(lambda P: ad.sum_(ad.mul(ad.softmax(P["v"]), w)), {"v": v})
    assert err < 1e-6


# ---------------------------------------------------------------- conv / pool

def test_conv1d_shapes_and_zero_input():
    x = Tensor(np.zeros((5, 3)))
    k = Tensor(np.ones((5, 3, 2)))
    out = ad.conv1d(x, k, Tensor(np.zeros(2)))
    assert out.shape == (1, 2)
    np.testing.assert_array_equal(out.data, 0.0)


def test_conv1d_window_dot_product():
    x = np.arange(1.0, 7.0).reshape(6, 1)
    k = np.array([1.0, -1.0, 2.0, 0.5, 3.0]).reshape(5, 1, 1)
    out = ad.conv1d(Tensor(x), Tensor(k), Tensor(np.zeros(1))).data[:, 0]
    expected = [sum(x[t + j, 0] * k[j, 0, 0] for j in range(5)) for t in range(2)]
    assert out.tolist() == expected


def test_conv1d_shape_errors():
    with pytest.raises(InvalidShapeError):
        ad.conv1d(Tensor(np.zeros((4, 3))), Tensor(np.zeros((5, 3, 2))), Tensor(np.zeros(2)))
    with pytest.raises(InvalidShapeError):
        ad.conv1d(Tensor(np.zeros((8, 3))), Tensor(np.zeros((5, 2, 2))), Tensor(np.zeros(2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 14), st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31))
def test_conv1d_matches_loop(length, d_in, d_out, width, seed):
    rng = np.random.default_rng(seed)
    x, k, b = rng.normal(size=(length, d_in)), rng.normal(size=(width, d_in, d_out)), rng.normal(size=d_out)
    out = ad.conv1d(Tensor(x), Tensor(k), Tensor(b)).data
    np.testing.assert_allclose(out, naive_conv(x, k, b), rtol=0, atol=1e-12)


def test_conv1d_batched_equals_per_example():
    rng = np.random.default_rng(3)
    x, k, b = rng.normal(size=(3, 9, 2)), rng.normal(size=(5, 2, 4)), rng.normal(size=4)
    out = ad.conv1d(Tensor(x), Tensor(k), Tensor(b)).data
    for n in range(3):
        np.testing.assert_allclose(out[n], naive_conv(x[n], k, b), rtol=0, atol=1e-12)


def test_maxpool_examples():
    assert ad.maxpool1d(Tensor([[1.0], [3.0], [2.0]]), 3, 3).data.tolist() == [[3.0]]
    x = Tensor(np.full((3, 1), 2.0), requires_grad=True)
    ad.sum_(ad.maxpool1d(x, 3, 3)).backward()
    assert x.grad[:, 0].tolist() == [1.0, 0.0, 0.0]
    with pytest.raises(InvalidShapeError):
        ad.maxpool1d(Tensor(np.zeros((2, 1))), 3, 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 16), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_maxpool_matches_loop(length, d, window, stride, seed):
    if length < window:
        return
    x = np.random.default_rng(seed).normal(size=(length, d))
    out = ad.maxpool1d(Tensor(x), window, stride).data
    np.testing.assert_array_equal(out, naive_pool(x, window, stride))


def test_maxpool_random_10x4():
    x = np.random.default_rng(4).normal(size=(10, 4))
    np.testing.assert_array_equal(ad.maxpool1d(Tensor(x), 3, 3).data, naive_pool(x, 3, 3))


# ---------------------------------------------------------------- gradients of every op

RNG = np.random.default_rng(11)
OP_CASES = {
    "add": (lambda P: ad.sum_(ad.square(ad.add(P["a"], P["b"]))), {"a": RNG.normal(size=(3, 4)), "b": RNG.normal(size=4)}),
    "sub": (lambda P: ad.sum_(ad.square(ad.sub(P["a"], P["b"]))), {"a": RNG.normal(size=(3, 4)), "b": RNG.normal(size=(3, 1))}),
    "mul": (lambda P: ad.sum_(ad.square(ad.mul(P["a"], P["b"]))), {"a": RNG.normal(size=(2, 3)), "b": RNG.normal(size=(2, 3))}),
    "square": (lambda P: ad.sum_(ad.square(P["a"])), {"a": RNG.normal(size=5)}),
    "relu": (lambda P: ad.sum_(ad.square(ad.relu(P["a"]))), {"a": RNG.normal(size=8)}),
    "sigmoid": (lambda P: ad.sum_(ad.square(ad.sigmoid(P["a"]))), {"a": RNG.normal(size=6)}),
    "softmax": (lambda P: ad.sum_(ad.square(ad.softmax(P["a"]))), {"a": RNG.normal(size=(2, 5))}),
    "sum_axis": (lambda P: ad.sum_(ad.square(ad.sum_(P["a"], axis=1))), {"a": RNG.normal(size=(3, 4))}),
    "mean": (lambda P: ad.square(ad.mean(P["a"])), {"a": RNG.normal(size=(3, 4))}),
    "reshape": (lambda P: ad.sum_(ad.square(ad.reshape(P["a"], (6, 2)))), {"a": RNG.normal(size=(3, 4))}),
    "gather": (lambda P: ad.sum_(ad.square(ad.gather(P["a"], np.array([[0, 2], [2, 1]])))), {"a": RNG.normal(size=(3, 2))}),
    "matmul": (lambda P: ad.sum_(ad.square(ad.matmul(P["a"], P["w"]))), {"a": RNG.normal(size=(2, 3, 4)), "w": RNG.normal(size=(4, 2))}),
    "linear": (lambda P: ad.sum_(ad.square(ad.linear(P["a"], P["w"], P["b"]))), {"a": RNG.normal(size=(3, 4)), "w": RNG.normal(size=(4, 2)), "b": RNG.normal(size=2)}),
    "dense": (lambda P: ad.sum_(ad.square(ad.dense(P["a"], P["w"], P["b"]))), {"a": RNG.normal(size=(3, 4)), "w": RNG.normal(size=(4, 2)), "b": RNG.normal(size=2)}),
    "conv1d": (lambda P: ad.sum_(ad.square(ad.conv1d(P["x"], P["k"], P["b"]))), {"x": RNG.normal(size=(2, 9, 3)), "k": RNG.normal(size=(5, 3, 2)), "b": RNG.normal(size=2)}),
    "maxpool1d": (lambda P: ad.sum_(ad.square(ad.maxpool1d(P["x"], 3, 3))), {"x": RNG.normal(size=(2, 9, 3))}),
    "maxpool1d_overlap": (lambda P: ad.sum_(ad.square(ad.maxpool1d(P["x"], 3, 2))), {"x": RNG.normal(size=(9, 3))}),
    "dropout": (lambda P: ad.sum_(ad.square(ad.dropout(P["a"], 0.5, np.random.default_rng(0), True))), {"a": RNG.normal(size=10)}),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_every_op_passes_grad_check(name):
    f, point = OP_CASES[name]
    assert grad_check(f, point) < 1e-4


def test_grad_check_linear_map_is_exact():
    w = np.array([0.5, -2.0, 3.0])
    assert grad_check(lambda P: ad.sum_(ad.mul(P["x"], w)), {"x": np.ones(3)}) < 1e-10


def test_grad_check_catches_a_broken_rule():
    def bad_square(a):
        return ad._result(a.data * a.data, (a,), lambda g: (3.0 * a.data * g,))

    assert grad_check(lambda P: ad.sum_(bad_square(P["a"])), {"a": np.array([1.0, -2.0])}) > 1e-2


def test_grad_check_rejects_non_finite():
    with pytest.raises(NumericFailureError):
        grad_check(lambda P: ad.sum_(ad.mul(P["a"], np.inf)), {"a": np.ones(2)})


# ---------------------------------------------------------------- graph behaviour

def test_shared_node_accumulates_gradient():
    a = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    ad.sum_(ad.add(ad.mul(a, a), a)).backward()
    np.testing.assert_array_equal(a.grad, 2 * a.data + 1)


def test_no_graph_without_requires_grad():
    out = ad.mul(Tensor([1.0]), Tensor([2.0]))
    assert out._parents == () and not out.requires_grad


def test_dropout_modes():
    a = Tensor(np.ones(10000))
    assert ad.dropout(a, 0.5, None, train=False) is a
    d = ad.dropout(a, 0.25, np.random.default_rng(0), train=True).data
    assert set(np.unique(d)) <= {0.0, 1.0 / 0.75}
    assert abs((d == 0).mean() - 0.25) < 0.02
    with pytest.raises(InvalidArgumentError):
        ad.dropout(a, 1.0, np.random.default_rng(0), train=True)


def test_graph_evaluation_deterministic():
    x = np.random.default_rng(5).normal(size=(4, 12, 3))
    k = np.random.default_rng(6).normal(size=(5, 3, 2))
    first = ad.maxpool1d(ad.conv1d(Tensor(x), Tensor(k), Tensor(np.zeros(2))), 3, 3).data
    second = ad.maxpool1d(ad.conv1d(Tensor(x), Tensor(k), Tensor(np.zeros(2))), 3, 3).data
    assert first.tobytes() == second.tobytes()


# ---------------------------------------------------------------- Adam

def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -1.0])}
    state = AdamState.zeros_like(params)
    adam_step(params, {"w": np.ones(2)}, state, lr=0.002)
    np.testing.assert_allclose(params["w"], [1.0 - 0.002, -1.0 - 0.002], rtol=0, atol=1e-10)
    assert state.step == 1


def test_adam_zero_gradient_is_a_no_op():
    params = {"w": np.array([0.3, 0.4])}
    before = params["w"].copy()
    state = AdamState.zeros_like(params)
    adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(params["w"], before)


def test_adam_matches_textbook_recursion():
    rng = np.random.default_rng(8)
    theta = rng.normal(size=3)
    params = {"w": theta.copy()}
    state = AdamState.zeros_like(params)
    m = v = np.zeros(3)
    lr, wd = 0.01, 0.1
    for t in range(1, 6):
        g = rng.normal(size=3)
        adam_step(params, {"w": g}, state, lr, wd)
        g = g + wd * theta
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params["w"], theta, rtol=0, atol=1e-14)


def test_adam_is_deterministic_and_rejects_nan():
    def run():
        p = {"w": np.linspace(-1, 1, 4)}
        s = AdamState.zeros_like(p)
        for k in range(3):
            adam_step(p, {"w": np.sin(p["w"] + k)}, s, 0.002, 1e-6)
        return p["w"]

    assert run().tobytes() == run().tobytes()
    p = {"w": np.zeros(2)}
    with pytest.raises(NumericFailureError):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState.zeros_like(p), 0.1)
