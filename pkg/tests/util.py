"""Shared helpers: central finite-difference gradient checks in float64."""

import numpy as np

from framediff import tensor as T


def numeric_grad(fn, t, h=1e-4):
    """Central-difference gradient of scalar fn() w.r.t. tensor t (float64)."""
    assert t.data.dtype == np.float64, "gradient checks must run in double precision"
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a, b, floor=1e-8):
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return np.abs(a - b).max(initial=0.0) / denom


def check_grads(build_loss, leaves, tol=1e-5, h=1e-4):
    """Compare analytic grads of build_loss() against finite differences.

    build_loss must construct a fresh graph from the given leaf tensors each
    call and return the scalar loss tensor.
    """
    loss = build_loss()
    loss.backward()
    analytic = [lf.grad.copy() for lf in leaves]
    for lf in leaves:
        lf.zero_grad()
    for lf, ag in zip(leaves, analytic):
        ng = numeric_grad(lambda: build_loss().item(), lf, h=h)
        err = rel_err(ag, ng)
        assert err <= tol, f"gradient mismatch on {lf}: rel err {err:.3g} > {tol}"


def f64(data, requires_grad=True):
    return T.Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


def rand_f64(rng, shape, scale=1.0, requires_grad=True):
    return f64(rng.standard_normal(shape) * scale, requires_grad=requires_grad)
