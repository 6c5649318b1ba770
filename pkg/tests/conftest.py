import os

# single-threaded numerics: keeps every reduction order, and therefore every
# reported metric, bit-reproducible across runs
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference_grad(fn, tensor, step=1e-6):
    """Central finite differences of a scalar-valued fn w.r.t. tensor.data."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(fn().data)
        flat[i] = orig - step
        f_minus = float(fn().data)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_grad_error(analytic, numeric):
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return np.linalg.norm(analytic - numeric) / denom


def check_gradients(fn, tensors, tol=1e-4, step=1e-6):
    """Assert analytic gradients of scalar fn match central differences."""
    for t in tensors:
        t.grad = None
    out = fn()
    out.backward()
    for t in tensors:
        assert t.grad is not None, "missing gradient"
        num = finite_difference_grad(fn, t, step=step)
        err = relative_grad_error(t.grad, num)
        assert err < tol, f"gradient mismatch: relative error {err:.3e}"
