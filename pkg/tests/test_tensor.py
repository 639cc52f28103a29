import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nprl import tensor as T
from nprl.errors import GraphError, NumericError, ShapeError
from nprl.gradcheck import check_function


def naive_conv(x, w, b, stride):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    ho, wo = (h - 3) // stride + 1, (wd - 3) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for r in range(ho):
                for c in range(wo):
                    acc = b[o]
                    for k in range(cin):
                        for dr in range(3):
                            for dc in range(3):
                                acc += x[i, k, r * stride + dr, c * stride + dc] * w[o, k, dr, dc]
                    out[i, o, r, c] = acc
    return out


def naive_matmul(x, w, b):
    out = np.zeros((x.shape[0], w.shape[1]))
    for i in range(x.shape[0]):
        for j in range(w.shape[1]):
            out[i, j] = b[j] + sum(x[i, k] * w[k, j] for k in range(x.shape[1]))
    return out


def test_conv_zero_input_gives_bias():
    w = np.random.default_rng(0).normal(size=(2, 1, 3, 3)).astype(np.float32)
    out = T.conv2d(T.Tensor(np.zeros((1, 1, 5, 5), np.float32)), T.Tensor(w), T.Tensor(np.array([1.5, -2.0], np.float32)))
    assert out.shape == (1, 2, 3, 3)
    assert np.all(out.data[0, 0] == 1.5) and np.all(out.data[0, 1] == -2.0)


def test_conv_fixed_random_case_matches_loops():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    got = T.conv2d(T.Tensor(x.astype(np.float32)), T.Tensor(w.astype(np.float32)), T.Tensor(b.astype(np.float32)))
    np.testing.assert_allclose(got.data, naive_conv(x, w, b, 1), atol=1e-5)


@given(n=st.integers(1, 2), cin=st.integers(1, 3), cout=st.integers(1, 3), h=st.integers(3, 9),
       wd=st.integers(3, 9), stride=st.sampled_from([1, 2]), seed=st.integers(0, 2**31))
def test_conv_matches_naive_loops(n, cin, cout, h, wd, stride, seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(n, cin, h, wd)), rng.normal(size=(cout, cin, 3, 3)), rng.normal(size=cout)
    got = T.conv2d(T.Tensor(x), T.Tensor(w), T.Tensor(b), stride=stride)
    np.testing.assert_allclose(got.data, naive_conv(x, w, b, stride), atol=1e-6)


def test_conv_output_extents_through_trunk():
    h, sizes = 128, []
    for s in (2, 2, 1, 1):
        x = T.Tensor(np.zeros((1, 1, h, h), np.float32))
        h = T.conv2d(x, T.Tensor(np.zeros((1, 1, 3, 3), np.float32)), T.Tensor(np.zeros(1, np.float32)), s).shape[2]
        sizes.append(h)
    assert sizes == [63, 31, 29, 27]


def test_conv_rejects_bad_shapes_and_stride():
    x = T.Tensor(np.zeros((1, 2, 5, 5), np.float32))
    with pytest.raises(ShapeError):
        T.conv2d(x, T.Tensor(np.zeros((1, 3, 3, 3), np.float32)), T.Tensor(np.zeros(1, np.float32)))
    with pytest.raises(ShapeError):
        T.conv2d(T.Tensor(np.zeros((1, 2, 2, 5), np.float32)), T.Tensor(np.zeros((1, 2, 3, 3), np.float32)),
                 T.Tensor(np.zeros(1, np.float32)))
    with pytest.raises((ShapeError, ValueError)):
        T.conv2d(x, T.Tensor(np.zeros((1, 2, 3, 3), np.float32)), T.Tensor(np.zeros(1, np.float32)), stride=3)


def test_nonfinite_input_rejected():
    with pytest.raises(NumericError):
        T.Tensor(np.array([1.0, np.nan]))


def test_dense_identity_and_fixed_case():
    x = np.random.default_rng(2).normal(size=(3, 4)).astype(np.float32)
    out = T.dense(T.Tensor(x), T.Tensor(np.eye(4, dtype=np.float32)), T.Tensor(np.zeros(4, np.float32)))
    np.testing.assert_array_equal(out.data, x)
    out = T.dense(T.Tensor(np.array([[1.0, 2.0]])), T.Tensor(np.eye(2)), T.Tensor(np.array([3.0, 4.0])))
    np.testing.assert_array_equal(out.data, [[4.0, 6.0]])
    with pytest.raises(ShapeError):
        T.dense(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 2))), T.Tensor(np.zeros(2)))


@given(n=st.integers(1, 4), f=st.integers(1, 6), u=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_dense_matches_naive_loops(n, f, u, seed):
    rng = np.random.default_rng(seed)
    x, w, b = (rng.normal(size=s).astype(np.float32) for s in ((n, f), (f, u), (u,)))
    got = T.dense(T.Tensor(x), T.Tensor(w), T.Tensor(b))
    np.testing.assert_allclose(got.data, naive_matmul(x.astype(float), w.astype(float), b.astype(float)), atol=1e-5)


def test_batchnorm_eval_identity_and_train_moments():
    rng = np.random.default_rng(3)
    x = rng.normal(2.0, 3.0, size=(8, 16, 10, 10))
    c = 16
    out = T.batchnorm2d(T.Tensor(x), T.Tensor(np.ones(c)), T.Tensor(np.zeros(c)), np.zeros(c), np.ones(c),
                        training=False, eps=1e-12)
    np.testing.assert_allclose(out.data, x, atol=1e-9)
    rm, rv = np.zeros(c), np.ones(c)
    out = T.batchnorm2d(T.Tensor(x), T.Tensor(np.ones(c)), T.Tensor(np.zeros(c)), rm, rv, training=True)
    assert np.abs(out.data.mean(axis=(0, 2, 3))).max() < 1e-5
    assert np.abs(out.data.var(axis=(0, 2, 3)) - 1).max() < 1e-4
    assert not np.allclose(rm, 0)  # running statistics moved


def test_batchnorm_degenerate_batch_rejected():
    with pytest.raises(NumericError):
        T.batchnorm2d(T.Tensor(np.ones((1, 2, 1, 1))), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)),
                      np.zeros(2), np.ones(2), training=True)


def test_relu_and_losses():
    np.testing.assert_array_equal(T.relu(T.Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0, 0, 2])
    k = 7
    loss = T.softmax_cross_entropy(T.Tensor(np.zeros((3, k))), [0, 3, 6])
    assert abs(float(loss.data) - np.log(k)) < 1e-12
    y = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    m = T.mse(y, y.data.copy())
    assert float(m.data) == 0.0
    m.backward()
    np.testing.assert_array_equal(y.grad, 0.0)
    with pytest.raises(ShapeError):
        T.softmax_cross_entropy(T.Tensor(np.zeros((2, 3))), [0, 3])


def test_softmax_stable_for_huge_logits():
    z = T.Tensor(np.array([[1e4, -1e4, 0.0], [-1e4, -1e4, -1e4]]), requires_grad=True)
    loss = T.softmax_cross_entropy(z, [1, 0])
    assert np.isfinite(loss.data)
    loss.backward()
    assert np.isfinite(z.grad).all()


def test_backward_simple_grads_and_graph_rules():
    x = T.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, 1.0)
    x = T.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    loss = T.tsum(T.mul(x, x))
    loss.backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data)
    with pytest.raises(GraphError):
        loss.backward()
    with pytest.raises(GraphError):
        T.mul(x, x).backward()


@pytest.mark.parametrize("seed", range(3))
def test_forward_backward_bitwise_deterministic(seed):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=(2, 3, 7, 7)).astype(np.float32), rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
              rng.normal(size=4).astype(np.float32)]
    grads = []
    for _ in range(2):
        leaves = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = T.conv2d(*leaves, stride=2)
        T.tsum(T.mul(out, out)).backward()
        grads.append([l.grad for l in leaves] + [out.data])
    for a, b in zip(*grads):
        assert np.array_equal(a, b)


@given(seed=st.integers(0, 2**31), n=st.integers(2, 4), k=st.integers(2, 6))
def test_softmax_cross_entropy_gradient_property(seed, n, k):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, k, size=n)
    err = check_function(lambda t: T.softmax_cross_entropy(t[0], labels), [rng.normal(size=(n, k))], seed=seed)
    assert err < 1e-4
