import numpy as np
import pytest

from framediff import tensor as T
from framediff.rng import derive_rng
from framediff.tensor import Tensor
from framediff.vq import Codebook, codebook_usage, nearest_entries, quantize


def _codebook_from(entries):
    cb = Codebook.__new__(Codebook)
    arr = np.asarray(entries, dtype=np.float32)
    cb.num_entries, cb.dim = arr.shape
    cb.entries = Tensor(arr, requires_grad=True)
    return cb


def test_exact_entry_maps_to_itself():
    cb = _codebook_from([[0.0, 0.0], [1.0, 1.0]])
    z = Tensor(np.array([1.0, 1.0], np.float32).reshape(2, 1, 1))
    z_q, idx, loss = quantize(z, cb)
    assert idx[0, 0] == 1
    assert np.allclose(z_q.data, z.data)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_nearest_neighbor_hand_case():
    cb = _codebook_from([[0.0, 0.0], [1.0, 1.0]])
    z = Tensor(np.array([0.2, 0.2], np.float32).reshape(2, 1, 1))
    z_q, idx, _ = quantize(z, cb)
    assert idx[0, 0] == 0
    assert np.allclose(z_q.data.reshape(-1), [0.0, 0.0])


def test_straight_through_gradient_is_identity():
    rng = derive_rng(0, "vq")
    cb = _codebook_from(rng.uniform(-1, 1, (8, 3)))
    z = Tensor(rng.standard_normal((3, 4, 4)).astype(np.float32), requires_grad=True)
    z_q, _, _ = quantize(z, cb)
    T.tsum(z_q).backward()
    assert np.allclose(z.grad, 1.0)


def test_straight_through_matches_downstream_grad():
    rng = derive_rng(1, "vq")
    cb = _codebook_from(rng.uniform(-1, 1, (8, 3)))
    z = Tensor(rng.standard_normal((3, 2, 2)).astype(np.float32), requires_grad=True)
    z_q, _, _ = quantize(z, cb)
    weight = Tensor(rng.standard_normal(z.shape).astype(np.float32))
    T.tsum(T.mul(z_q, weight)).backward()
    assert np.allclose(z.grad, weight.data)
    assert np.allclose(z_q.grad, weight.data)


def test_idempotent_on_quantized_latents():
    rng = derive_rng(2, "vq")
    cb = _codebook_from(rng.uniform(-1, 1, (16, 2)))
    z = Tensor(rng.standard_normal((2, 3, 3)).astype(np.float32))
    z_q, idx1, _ = quantize(z, cb)
    z_q2, idx2, loss2 = quantize(z_q.detach(), cb)
    assert np.array_equal(idx1, idx2)
    assert np.allclose(z_q2.data, z_q.data)
    assert loss2.item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_nearest_matches_bruteforce_scan(seed):
    rng = derive_rng(seed, "vqscan")
    m = int(rng.integers(2, 17))
    d = int(rng.integers(1, 5))
    entries = rng.standard_normal((m, d)).astype(np.float32)
    vectors = rng.standard_normal((50, d)).astype(np.float32)
    fast = nearest_entries(vectors, entries)
    slow = np.array([
        min(range(m), key=lambda j: float(np.square(v - entries[j]).sum()))
        for v in vectors
    ])
    assert np.array_equal(fast, slow)


def test_tie_breaks_to_lowest_index():
    cb = _codebook_from([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    z = Tensor(np.array([1.0, 0.0], np.float32).reshape(2, 1, 1))
    _, idx, _ = quantize(z, cb)
    assert idx[0, 0] == 0
    zmid = Tensor(np.array([0.0, 0.0], np.float32).reshape(2, 1, 1))
    _, idx, _ = quantize(zmid, cb)
    assert idx[0, 0] == 0


def test_codebook_loss_pulls_entries():
    rng = derive_rng(3, "vq")
    cb = _codebook_from(rng.uniform(-1, 1, (4, 2)))
    z = Tensor(rng.standard_normal((2, 2, 2)).astype(np.float32), requires_grad=True)
    _, idx, loss = quantize(z, cb)
    loss.backward()
    used = np.unique(idx)
    grads = cb.entries.grad
    assert np.abs(grads[used]).sum() > 0
    unused = [i for i in range(4) if i not in used]
    if unused:
        assert np.allclose(grads[unused], 0.0)
    assert np.abs(z.grad).sum() > 0  # commitment term reaches the encoder side


def test_dim_mismatch_rejected():
    cb = _codebook_from(np.zeros((4, 3)))
    with pytest.raises(T.ShapeError):
        quantize(Tensor(np.zeros((2, 2, 2), np.float32)), cb)


def test_usage_histogram_sums_to_pixels():
    rng = derive_rng(4, "vq")
    cb = _codebook_from(rng.uniform(-1, 1, (8, 3)))
    z = Tensor(rng.standard_normal((3, 5, 7)).astype(np.float32))
    _, idx, _ = quantize(z, cb)
    hist = codebook_usage(idx, cb.num_entries)
    assert hist.sum() == 5 * 7


def test_usage_histogram_statistical_coverage():
    rng = derive_rng(5, "vq")
    cb = _codebook_from([[(-2.0), -2.0], [2.0, 2.0]])
    z = Tensor(rng.uniform(-3, 3, (2, 32, 32)).astype(np.float32))
    _, idx, _ = quantize(z, cb)
    hist = codebook_usage(idx, cb.num_entries)
    assert (hist > 0).all()


def test_usage_histogram_empty_batch():
    hist = codebook_usage([], 8)
    assert hist.shape == (8,)
    assert hist.sum() == 0


def test_batched_quantize_matches_per_sample():
    rng = derive_rng(6, "vq")
    cb = _codebook_from(rng.uniform(-1, 1, (8, 3)))
    z = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    zq_b, idx_b, _ = quantize(Tensor(z), cb)
    for n in range(2):
        zq_s, idx_s, _ = quantize(Tensor(z[n]), cb)
        assert np.array_equal(idx_b[n], idx_s)
        assert np.allclose(zq_b.data[n], zq_s.data)
