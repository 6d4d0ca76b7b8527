import numpy as np
import pytest

from framediff import tensor as T
from framediff.defconv import (
    DeformableKernelSet,
    FrameKernels,
    blend,
    identity_kernels,
    synthesize_frame,
    synthesize_one,
    synthesize_one_bruteforce,
)
from framediff.tensor import Tensor

from util import check_grads


def _random_kernels(rng, h, w, k, dtype=np.float64, offset_scale=1.0, requires_grad=False):
    def softmaxed(x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    kv = softmaxed(rng.standard_normal((h, w, k))).astype(dtype)
    kh = softmaxed(rng.standard_normal((h, w, k))).astype(dtype)
    oy = (rng.uniform(-1, 1, (h, w, k, k)) * offset_scale).astype(dtype)
    ox = (rng.uniform(-1, 1, (h, w, k, k)) * offset_scale).astype(dtype)
    return FrameKernels(
        Tensor(kv, requires_grad=requires_grad),
        Tensor(kh, requires_grad=requires_grad),
        Tensor(oy, requires_grad=requires_grad),
        Tensor(ox, requires_grad=requires_grad),
    )


def test_identity_kernels_reproduce_input():
    rng = np.random.default_rng(0)
    img = Tensor(rng.standard_normal((3, 7, 9)).astype(np.float32))
    ks = identity_kernels(7, 9, 5)
    out = synthesize_one(img, ks.frame0)
    assert np.abs(out.data - img.data).max() <= 1e-6


def test_unit_shift_right_offset():
    rng = np.random.default_rng(1)
    img = Tensor(rng.standard_normal((1, 4, 6)).astype(np.float32))
    ks = identity_kernels(4, 6, 1)
    fk = ks.frame0
    fk = FrameKernels(fk.kernel_v, fk.kernel_h, fk.offset_y,
                      Tensor(np.ones_like(fk.offset_x.data)))
    out = synthesize_one(img, fk)
    expect = np.concatenate([img.data[:, :, 1:], img.data[:, :, -1:]], axis=2)
    assert np.allclose(out.data, expect, atol=1e-6)
    assert np.allclose(out.data, synthesize_one_bruteforce(img, fk), atol=1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_fast_path_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, 4))
    h = int(rng.integers(4, 17))
    w = int(rng.integers(4, 17))
    k = int(rng.integers(1, 6))
    img = Tensor(rng.standard_normal((c, h, w)))
    fk = _random_kernels(rng, h, w, k, offset_scale=2.0)
    fast = synthesize_one(img, fk)
    ref = synthesize_one_bruteforce(img, fk)
    assert np.abs(fast.data - ref).max() <= 1e-5


def test_blend_hand_cases():
    in0 = Tensor(np.full((1, 2, 2), 0.2, dtype=np.float32))
    in1 = Tensor(np.full((1, 2, 2), 0.4, dtype=np.float32))
    ones = np.ones((2, 2), dtype=np.float32)
    out = blend(in0, in1, Tensor(ones), Tensor(0 * ones))
    assert np.allclose(out.data, 0.2)
    out = blend(in0, in1, Tensor(0.5 * ones), Tensor(0 * ones))
    assert np.allclose(out.data, 0.3)
    out = blend(in0, in1, Tensor(0 * ones), Tensor(0.1 * ones))
    assert np.allclose(out.data, 0.5, atol=1e-7)


def test_blend_is_affine():
    rng = np.random.default_rng(2)
    shape = (3, 4, 4)
    a0, a1, b0, b1 = (Tensor(rng.standard_normal(shape).astype(np.float32)) for _ in range(4))
    v = Tensor(rng.uniform(0, 1, (4, 4)).astype(np.float32))
    d = Tensor(rng.standard_normal((4, 4)).astype(np.float32))
    zero = Tensor(np.zeros((4, 4), np.float32))
    lhs = blend(T.add(a0, b0), T.add(a1, b1), v, d).data
    rhs = blend(a0, a1, v, d).data + blend(b0, b1, v, zero).data
    assert np.allclose(lhs, rhs, atol=1e-5)


def test_synthesize_frame_identity_average():
    rng = np.random.default_rng(3)
    img = Tensor(rng.standard_normal((3, 6, 6)).astype(np.float32))
    ks = identity_kernels(6, 6, 5)
    out = synthesize_frame(img, img, ks)
    assert np.abs(out.data - img.data).max() <= 1e-6


def test_synthesize_frame_constant_blend():
    a = Tensor(np.full((3, 5, 5), 0.8, dtype=np.float32))
    b = Tensor(np.full((3, 5, 5), -0.4, dtype=np.float32))
    ks = identity_kernels(5, 5, 3)
    ks = DeformableKernelSet(ks.frame0, ks.frame1,
                             Tensor(np.full((5, 5), 0.25, dtype=np.float32)),
                             ks.residual)
    out = synthesize_frame(a, b, ks)
    assert np.allclose(out.data, 0.25 * 0.8 + 0.75 * -0.4, atol=1e-6)


def test_gradients_vs_fd():
    rng = np.random.default_rng(4)
    h = w = 5
    k = 3
    i0 = Tensor(rng.standard_normal((2, h, w)), requires_grad=True)
    i1 = Tensor(rng.standard_normal((2, h, w)), requires_grad=True)
    f0 = _random_kernels(rng, h, w, k, offset_scale=0.4, requires_grad=True)
    f1 = _random_kernels(rng, h, w, k, offset_scale=0.4, requires_grad=True)
    v = Tensor(rng.uniform(0.2, 0.8, (h, w)), requires_grad=True)
    d = Tensor(0.1 * rng.standard_normal((h, w)), requires_grad=True)
    ks = DeformableKernelSet(f0, f1, v, d)

    def build():
        out = synthesize_frame(i0, i1, ks)
        return T.tsum(T.mul(out, out))

    leaves = [i0, i1, f0.kernel_v, f0.kernel_h, f0.offset_y, f0.offset_x, v, d]
    check_grads(build, leaves, tol=1e-4, h=1e-5)


def test_horizontal_flip_symmetry():
    rng = np.random.default_rng(5)
    h, w, k = 6, 8, 3
    img = Tensor(rng.standard_normal((2, h, w)))
    fk = _random_kernels(rng, h, w, k, offset_scale=1.0)
    out = synthesize_one(img, fk).data

    img_f = Tensor(img.data[:, :, ::-1].copy())
    fk_f = FrameKernels(
        Tensor(fk.kernel_v.data[:, ::-1, :].copy()),
        Tensor(fk.kernel_h.data[:, ::-1, ::-1].copy()),
        Tensor(fk.offset_y.data[:, ::-1, :, ::-1].copy()),
        Tensor(-fk.offset_x.data[:, ::-1, :, ::-1].copy()),
    )
    out_f = synthesize_one(img_f, fk_f).data
    assert np.abs(out_f - out[:, :, ::-1]).max() <= 1e-10


def test_batched_matches_unbatched():
    rng = np.random.default_rng(6)
    h = w = 6
    imgs = rng.standard_normal((2, 3, h, w)).astype(np.float32)
    fks = [_random_kernels(rng, h, w, 3, dtype=np.float32) for _ in range(2)]
    batched = FrameKernels(
        Tensor(np.stack([f.kernel_v.data for f in fks])),
        Tensor(np.stack([f.kernel_h.data for f in fks])),
        Tensor(np.stack([f.offset_y.data for f in fks])),
        Tensor(np.stack([f.offset_x.data for f in fks])),
    )
    out = synthesize_one(Tensor(imgs), batched)
    for n in range(2):
        single = synthesize_one(Tensor(imgs[n]), fks[n])
        assert np.allclose(out.data[n], single.data, atol=1e-6)


def test_shape_mismatch_rejected():
    img = Tensor(np.zeros((3, 4, 4), np.float32))
    ks = identity_kernels(5, 5, 3)
    with pytest.raises(T.ShapeError):
        synthesize_one(img, ks.frame0)
