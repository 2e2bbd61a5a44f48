"""Shared test oracles: central finite differences and error metrics."""

import numpy as np

from metaretrain.nn import Tensor


def finite_diff_grad(loss_fn, arr, eps=1e-4):
    """Central-difference gradient of loss_fn() w.r.t. arr, perturbed in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def max_rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / scale))


def gradcheck(build_loss, params, eps=1e-4):
    """Compare autodiff grads against finite differences for each named array.

    `params` maps name -> float64 ndarray. `build_loss` receives
    {name: Tensor(requires_grad=True)} and returns a scalar Tensor. Returns the
    worst relative error across all parameters.
    """
    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = build_loss(tensors)
    loss.backward()
    worst = 0.0
    for name, arr in params.items():
        def loss_value():
            fresh = {k: Tensor(v, requires_grad=False) for k, v in params.items()}
            return build_loss(fresh).item()

        fd = finite_diff_grad(loss_value, arr, eps=eps)
        ad = tensors[name].grad
        assert ad is not None, f"no gradient for {name}"
        worst = max(worst, max_rel_error(ad, fd))
    return worst
