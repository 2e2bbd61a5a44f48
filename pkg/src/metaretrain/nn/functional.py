"""Autodiff ops for image networks: convolution, pooling, and classifier losses.

Convolution is direct (im2col over sliding windows); adequate for 28x28 and
32x32 inputs. All contractions run in float64 and cast back to the storage
dtype.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, ValidationError
from .tensor import Tensor, _result_dtype


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[B,Cin,H,W] with weight[Cout,Cin,KH,KW] plus bias[Cout]."""
    B, Cin, H, W = x.data.shape
    Cout, Cin_w, KH, KW = weight.data.shape
    if Cin != Cin_w:
        raise ConfigurationError(f"conv2d channel mismatch: input {Cin}, weight {Cin_w}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < KH or Wp < KW:
        raise ConfigurationError("conv2d kernel larger than padded input")
    Ho = (Hp - KH) // stride + 1
    Wo = (Wp - KW) // stride + 1

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # windows: [B, Cin, Ho, Wo, KH, KW]
    win = sliding_window_view(xp, (KH, KW), axis=(2, 3))[:, :, ::stride, ::stride]
    w64 = weight.data.astype(np.float64)
    out = np.einsum("bchwkl,ockl->bohw", win.astype(np.float64), w64, optimize=True)
    out += bias.data.astype(np.float64)[None, :, None, None]
    with np.errstate(over="ignore"):
        data = out.astype(_result_dtype(x.data, weight.data))

    def backward(grad):
        g64 = grad.astype(np.float64)
        if bias.requires_grad:
            bias._accumulate(g64.sum(axis=(0, 2, 3)).astype(bias.data.dtype))
        if weight.requires_grad:
            gw = np.einsum("bchwkl,bohw->ockl", win.astype(np.float64), g64, optimize=True)
            weight._accumulate(gw.astype(weight.data.dtype))
        if x.requires_grad:
            gxp = np.zeros((B, Cin, Hp, Wp), dtype=np.float64)
            # scatter-add one kernel offset at a time
            for kh in range(KH):
                for kw in range(KW):
                    patch = np.einsum("bohw,oc->bchw", g64, w64[:, :, kh, kw], optimize=True)
                    gxp[:, :, kh : kh + Ho * stride : stride, kw : kw + Wo * stride : stride] += patch
            if padding:
                gxp = gxp[:, :, padding : padding + H, padding : padding + W]
            x._accumulate(gxp.astype(x.data.dtype))

    return Tensor._make(data, "conv2d", (x, weight, bias), backward)


def maxpool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling; H and W must be divisible by kernel."""
    B, C, H, W = x.data.shape
    if H % kernel or W % kernel:
        raise ConfigurationError(f"maxpool2d: input {H}x{W} not divisible by kernel {kernel}")
    Ho, Wo = H // kernel, W // kernel
    tiles = x.data.reshape(B, C, Ho, kernel, Wo, kernel).transpose(0, 1, 2, 4, 3, 5)
    flat = tiles.reshape(B, C, Ho, Wo, kernel * kernel)
    arg = flat.argmax(axis=4)  # first max wins on ties
    data = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]

    def backward(grad):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], grad[..., None].astype(x.data.dtype), axis=4)
        gx = gflat.reshape(B, C, Ho, Wo, kernel, kernel).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        x._accumulate(gx)

    return Tensor._make(np.ascontiguousarray(data), "maxpool2d", (x,), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x[B,D] @ weight[F,D].T + bias[F]."""
    if x.data.ndim != 2:
        raise ConfigurationError("dense expects a flattened [batch, features] input")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ConfigurationError(
            f"dense feature mismatch: input {x.data.shape[1]}, weight expects {weight.data.shape[1]}"
        )
    return x.matmul(weight.transpose()) + bias


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain ndarray softmax over axis 1 (stable); used outside the graph."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_targets(targets: np.ndarray, n_classes: int) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2 or targets.shape[1] != n_classes:
        raise ValidationError(f"targets must be [batch, {n_classes}] probability rows")
    if not np.allclose(targets.sum(axis=1), 1.0, atol=1e-6):
        raise ValidationError("target rows must sum to 1 within 1e-6")
    return targets


def softmax_cross_entropy(logits: Tensor, targets, weights=None, normalizer=None) -> Tensor:
    """Mean cross-entropy between softmax(logits) and probability-row targets.

    `weights`, when given, scales each sample's contribution (mask or class
    weight); the sum is divided by `normalizer` (defaults to the batch size,
    the FixMatch convention for masked batches).
    """
    targets = _check_targets(targets, logits.data.shape[1])
    ls = logits.log_softmax()
    per_sample = -(ls * Tensor(targets.astype(ls.data.dtype))).sum(axis=1)
    if weights is not None:
        per_sample = per_sample * Tensor(np.asarray(weights, dtype=ls.data.dtype))
    denom = float(normalizer) if normalizer is not None else float(logits.data.shape[0])
    if denom <= 0:
        raise ValidationError("cross-entropy normalizer must be positive")
    return per_sample.sum() * (1.0 / denom)


def soft_mse(logits: Tensor, targets) -> Tensor:
    """Mean squared error between softmax(logits) and probability-row targets."""
    targets = _check_targets(targets, logits.data.shape[1])
    p = logits.log_softmax().exp()
    diff = p - Tensor(targets.astype(p.data.dtype))
    n = logits.data.shape[0] * logits.data.shape[1]
    return (diff * diff).sum() * (1.0 / n)


def one_hot(labels, n_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(f"labels out of range for {n_classes} classes")
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1.0
    return out
