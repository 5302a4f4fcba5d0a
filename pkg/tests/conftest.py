"""Shared test helpers: finite-difference gradient oracles.

The numeric gradients here re-evaluate the forward computation and never
touch the graph machinery, so they are independent of the backward code
they check.
"""

import numpy as np

FD_H = 1e-5
GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-7


def numeric_grad(f, tensor, h=FD_H):
    """Central finite differences of scalar ``f()`` w.r.t. ``tensor.data``."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def numeric_grad_at(f, tensor, coords, h=FD_H):
    """Finite differences at selected flat coordinates only."""
    flat = tensor.data.reshape(-1)
    out = []
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2.0 * h))
    return np.array(out)


def max_rel_err(analytic, numeric, atol=GRAD_ATOL):
    """Worst-case relative error with an absolute floor for near-zeros."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / GRAD_RTOL)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def assert_grads_close(analytic, numeric, rtol=GRAD_RTOL, atol=GRAD_ATOL, label=""):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    err = np.abs(analytic - numeric)
    bound = atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
    bad = err > bound
    assert not bad.any(), (
        f"{label} gradient mismatch at {int(bad.sum())}/{bad.size} entries; "
        f"worst rel err {max_rel_err(analytic, numeric):.3e}"
    )
