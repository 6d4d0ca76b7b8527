import numpy as np
import pytest

from framediff import tensor as T

from util import check_grads, f64, rand_f64


def test_add_hand_case():
    out = T.add(T.Tensor([1.0, 2.0]), T.Tensor([3.0, 4.0]))
    assert np.allclose(out.data, [4.0, 6.0])


def test_sigmoid_symmetry_point():
    assert T.sigmoid(T.Tensor([0.0])).data[0] == pytest.approx(0.5)


def test_silu_hand_value():
    # x * sigmoid(x) at x=1 is 1/(1+e^-1)
    assert T.silu(T.Tensor([1.0])).data[0] == pytest.approx(0.731059, abs=1e-6)


def test_div_by_zero_raises():
    with pytest.raises(T.NumericsError):
        T.div(T.Tensor([1.0]), T.Tensor([0.0]))


def test_incompatible_dims_raise():
    with pytest.raises(T.ShapeError):
        T.add(T.Tensor(np.ones(3)), T.Tensor(np.ones(4)))


def test_matmul_identity():
    m = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = T.Tensor(np.eye(2, dtype=np.float32))
    assert np.allclose(T.matmul(eye, m).data, m.data)


def test_matmul_hand_product():
    out = T.matmul(T.Tensor([[1.0, 2.0], [3.0, 4.0]]), T.Tensor([[1.0], [1.0]]))
    assert np.allclose(out.data, [[3.0], [7.0]])


def test_matmul_dim_mismatch():
    with pytest.raises(T.ShapeError):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


def test_matmul_gradient_vs_fd():
    rng = np.random.default_rng(0)
    a = rand_f64(rng, (3, 4))
    b = rand_f64(rng, (4, 2))
    check_grads(lambda: T.tsum(T.matmul(a, b)), [a, b], tol=1e-5)


def test_conv2d_1x1_identity():
    rng = np.random.default_rng(1)
    x = T.Tensor(rng.standard_normal((1, 2, 5, 5)).astype(np.float32))
    w = T.Tensor(np.eye(2, dtype=np.float32).reshape(2, 2, 1, 1))
    out = T.conv2d(x, w)
    assert np.allclose(out.data, x.data)


def test_conv2d_allones_on_constant():
    v = 0.7
    x = T.Tensor(np.full((1, 1, 6, 6), v, dtype=np.float32))
    w = T.ones((1, 1, 3, 3))
    out = T.conv2d(x, w, stride=1, pad=0)
    assert out.shape == (1, 1, 4, 4)
    assert np.allclose(out.data, 9 * v, atol=1e-6)


def test_conv2d_noninteger_output_rejected():
    with pytest.raises(T.ShapeError):
        T.conv2d(T.zeros((1, 1, 5, 5)), T.zeros((1, 1, 2, 2)), stride=2, pad=0)


def test_conv2d_gradient_vs_fd():
    rng = np.random.default_rng(2)
    x = rand_f64(rng, (1, 2, 5, 5))
    w = rand_f64(rng, (3, 2, 3, 3))
    check_grads(lambda: T.tsum(T.conv2d(x, w, stride=1, pad=1)), [x, w], tol=1e-5)
    check_grads(lambda: T.tmean(T.mul(T.conv2d(x, w, stride=2, pad=1),
                                      T.conv2d(x, w, stride=2, pad=1))), [x, w], tol=1e-5)


def test_mean_hand_case():
    assert T.tmean(T.Tensor([2.0, 4.0])).item() == pytest.approx(3.0)


def test_softmax_symmetry():
    assert np.allclose(T.softmax(T.Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_hand_case():
    out = T.softmax(T.Tensor([1.0, 2.0, 3.0]))
    assert np.allclose(out.data, [0.09003, 0.24473, 0.66524], atol=1e-5)


def test_softmax_rows_normalised():
    rng = np.random.default_rng(3)
    x = T.Tensor(rng.standard_normal((8, 16)).astype(np.float32) * 5)
    out = T.softmax(x, axis=-1)
    assert (out.data >= 0).all()
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)


def test_reduce_empty_axis_rejected():
    with pytest.raises(T.ShapeError):
        T.tsum(T.Tensor(np.ones((2, 0))), axis=1)


def test_backward_sum_gives_ones():
    x = f64(np.random.default_rng(4).standard_normal((3, 4)))
    T.tsum(x).backward()
    assert np.allclose(x.grad, 1.0)


def test_backward_quadratic():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    T.tsum(T.mul(x, x)).backward()
    assert np.allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(T.ShapeError):
        T.mul(x, x).backward()


def test_backward_composite_conv_silu_mean():
    rng = np.random.default_rng(5)
    x = rand_f64(rng, (1, 2, 5, 5))
    w = rand_f64(rng, (2, 2, 3, 3))
    check_grads(lambda: T.tmean(T.silu(T.conv2d(x, w, pad=1))), [x, w], tol=1e-5)


def test_backward_accumulates_double_use():
    rng = np.random.default_rng(6)
    x = rand_f64(rng, (4,))
    # x appears twice in the graph; both contributions must accumulate
    check_grads(lambda: T.tsum(T.mul(x, x) + T.exp(x)), [x], tol=1e-5)


def test_repeated_backward_accumulates():
    x = T.Tensor([3.0], requires_grad=True)
    loss = T.tsum(T.mul(x, x))
    loss.backward()
    g1 = x.grad.copy()
    loss.backward()
    assert np.allclose(x.grad, 2 * g1)


def test_broadcast_sum_consistency():
    rng = np.random.default_rng(7)
    a = T.Tensor(rng.standard_normal((4, 5)).astype(np.float32))
    b = T.Tensor(rng.standard_normal((5,)).astype(np.float32))
    lhs = T.tsum(T.add(a, b)).item()
    rhs = T.tsum(a).item() + 4 * T.tsum(b).item()
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_broadcast_gradients_vs_fd():
    rng = np.random.default_rng(8)
    a = rand_f64(rng, (3, 4))
    b = rand_f64(rng, (4,))
    check_grads(lambda: T.tsum(T.mul(T.add(a, b), T.add(a, b))), [a, b], tol=1e-5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_elementwise_gradients_vs_fd(seed):
    rng = np.random.default_rng(seed)
    x = rand_f64(rng, (3, 4), scale=0.8)
    y = rand_f64(rng, (3, 4), scale=0.8)
    pos = f64(np.abs(rng.standard_normal((3, 4))) + 0.5)
    check_grads(lambda: T.tsum(T.mul(x, y)), [x, y], tol=1e-5)
    check_grads(lambda: T.tsum(T.div(x, pos)), [x, pos], tol=1e-5)
    check_grads(lambda: T.tsum(T.sqrt(pos)), [pos], tol=1e-5)
    check_grads(lambda: T.tsum(T.exp(x)), [x], tol=1e-5)
    check_grads(lambda: T.tsum(T.sigmoid(x)), [x], tol=1e-5)
    check_grads(lambda: T.tsum(T.silu(x)), [x], tol=1e-5)
    check_grads(lambda: T.tsum(T.tabs(x)), [x], tol=1e-5)
    check_grads(lambda: T.tsum(T.scale(x, -2.5)), [x], tol=1e-5)
    check_grads(lambda: T.tmean(T.relu(x)), [x], tol=1e-5)


def test_reduction_and_softmax_gradients_vs_fd():
    rng = np.random.default_rng(9)
    x = rand_f64(rng, (3, 5))
    check_grads(lambda: T.tsum(T.mul(T.softmax(x, axis=-1), T.softmax(x, axis=-1))), [x], tol=1e-5)
    check_grads(lambda: T.tsum(T.mul(T.tmean(x, axis=0), T.tmean(x, axis=0))), [x], tol=1e-5)
    check_grads(lambda: T.tsum(T.tmax(x, axis=1)), [x], tol=1e-5)


def test_shape_op_gradients_vs_fd():
    rng = np.random.default_rng(10)
    x = rand_f64(rng, (2, 3, 4, 4))
    y = rand_f64(rng, (2, 3, 4, 4))

    def build():
        a = T.reshape(x, 2, 3, 16)
        b = T.transpose(a, 0, 2, 1)
        c = T.concat([b, b], axis=2)
        d = T.pad2d(c, 1, 1, 0, 0)
        return T.tsum(T.mul(d, d)) + T.tsum(T.upsample2x(y)) + T.tsum(x[:, 1:, ::2])

    check_grads(build, [x, y], tol=1e-5)


def test_embed_rows_gradient_vs_fd():
    rng = np.random.default_rng(11)
    table = rand_f64(rng, (5, 3))
    idx = np.array([0, 2, 2, 4])
    check_grads(lambda: T.tsum(T.mul(T.embed_rows(table, idx), T.embed_rows(table, idx))),
                [table], tol=1e-5)


def test_bilinear_sample_integer_position():
    img = T.Tensor(np.arange(12, dtype=np.float32).reshape(1, 3, 4))
    out = T.bilinear_sample(img, 2.0, 3.0)
    assert out.data[0] == pytest.approx(11.0)


def test_bilinear_sample_halfway():
    col = np.zeros((1, 2, 1), dtype=np.float32)
    col[0, 0, 0], col[0, 1, 0] = 3.0, 5.0
    out = T.bilinear_sample(T.Tensor(col), 0.5, 0.0)
    assert out.data[0] == pytest.approx(4.0)


def test_bilinear_sample_clamps():
    img = T.Tensor(np.arange(12, dtype=np.float32).reshape(1, 3, 4))
    assert np.allclose(T.bilinear_sample(img, -3.0, 1.0).data,
                       T.bilinear_sample(img, 0.0, 1.0).data)


def test_bilinear_sample_gradients_vs_fd():
    rng = np.random.default_rng(12)
    img = rand_f64(rng, (2, 5, 5))
    y = f64(np.asarray(2.3))
    x = f64(np.asarray(1.7))
    check_grads(lambda: T.tsum(T.mul(T.bilinear_sample(img, y, x),
                                     T.bilinear_sample(img, y, x))), [img, y, x], tol=1e-5)


def test_nan_guard_trips_on_overflow():
    with pytest.raises(T.NumericsError):
        T.exp(T.Tensor([1000.0]))


def test_detach_blocks_gradient():
    x = T.Tensor([2.0], requires_grad=True)
    y = T.mul(x.detach(), x)
    T.tsum(y).backward()
    assert np.allclose(x.grad, [2.0])
