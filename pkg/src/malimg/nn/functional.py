"""Differentiable ops used by the network: the minimum needed, no more.

Images are NCHW. Convolution goes through an explicit patch matrix so the
backward pass is a pair of matmuls plus a strided scatter.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..exceptions import InvalidTarget, ShapeError
from .tensor import Tensor, as_tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), backward, "mul")


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(np.asarray(a.data.sum()), (a,), backward, "sum")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor.from_op(x.data * mask, (x,), backward, "relu")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``x`` (B, in) and ``weight`` (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return Tensor.from_op(out, parents, backward, "linear")


def _patches(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B, C*k*k, ho*wo) patch matrix."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(b, c * k * k, ho * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``weight`` is (out, in, k, k)."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    n_out, n_in, k, k2 = weight.shape
    if k != k2:
        raise ShapeError("conv2d: only square kernels are supported")
    b, _, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {hp}x{wp}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _patches(xp, k, stride, ho, wo)
    wmat = weight.data.reshape(n_out, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(b, n_out, ho, wo)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def backward(g):
        g2 = g.reshape(b, n_out, ho * wo)
        gw = np.einsum("bol,bkl->ok", g2, cols).reshape(weight.shape)
        grads = [None, gw]
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(b, n_in, k, k, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
            grads[0] = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        if bias is not None:
            grads.append(g2.sum(axis=(0, 2)))
        return grads

    return Tensor.from_op(out, parents, backward, "conv2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {x.shape}")
    area = x.shape[2] * x.shape[3]

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / area, x.shape).copy(),)

    return Tensor.from_op(x.data.mean(axis=(2, 3)), (x,), backward, "gap")


def upsample_nearest2x(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"upsample expects NCHW, got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        b, c, h, w = x.shape
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), backward, "upsample2x")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis),
                          tensors, backward, "concat")


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(z)))


def class_weights(counts) -> np.ndarray:
    """Inverse-frequency weights ``N / (C * n_c)`` from per-class training counts."""
    n = np.asarray(counts, dtype=np.int64)
    if n.ndim != 1 or n.size == 0 or np.any(n <= 0):
        raise ValueError("class counts must be a non-empty vector of positive integers")
    return float(n.sum()) / (n.size * n.astype(np.float64))


def check_targets(targets: np.ndarray, n_classes: int, tol: float = 1e-6) -> np.ndarray:
    y = np.asarray(targets)
    if y.ndim != 2 or y.shape[1] != n_classes:
        raise InvalidTarget(f"targets must be (B, {n_classes}), got {y.shape}")
    if not np.all(np.isfinite(y)) or np.any(y < -tol):
        raise InvalidTarget("targets must be finite and non-negative")
    sums = y.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise InvalidTarget(f"target rows must sum to 1 (worst row sums to {sums[np.argmax(np.abs(sums - 1))]!r})")
    return y


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean over the batch of ``-sum_c w_c y_bc log softmax(z)_bc``.

    ``targets`` are (B, C) distributions, one-hot or soft. ``weights`` of
    ``None`` means all ones.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (B, C), got {logits.shape}")
    bsz, n_classes = logits.shape
    y = check_targets(targets, n_classes).astype(logits.dtype, copy=False)
    w = np.ones(n_classes, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    if w.shape != (n_classes,):
        raise ShapeError(f"weights must have length {n_classes}, got {w.shape}")

    logp = log_softmax(logits.data)
    wy = w * y
    loss = -(wy * logp).sum() / bsz

    def backward(g):
        p = np.exp(logp)
        return ((p * wy.sum(axis=1, keepdims=True) - wy) * g / bsz,)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")
