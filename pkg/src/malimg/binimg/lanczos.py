"""Separable Lanczos-3 resampling.

Output pixel ``i`` samples the source at ``(i + 0.5) * in / out - 0.5``.
When shrinking, the kernel is stretched by ``in / out`` so it low-passes
before decimation. Taps falling outside the image are clamped to the edge
pixel, and each row of weights is normalised to sum to one.
"""
from __future__ import annotations

import math

import numpy as np

LANCZOS_A = 3


def lanczos_kernel(x, a: int = LANCZOS_A):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < a, np.sinc(x) * np.sinc(x / a), 0.0)


def resample_matrix(n_in: int, n_out: int, a: int = LANCZOS_A) -> np.ndarray:
    """Dense ``(n_out, n_in)`` matrix applying 1-D Lanczos resampling."""
    if n_in <= 0 or n_out <= 0:
        raise ValueError("sizes must be positive")
    scale = n_in / n_out
    stretch = max(scale, 1.0)
    support = a * stretch
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        lo = math.floor(center - support) + 1
        hi = math.ceil(center + support)
        taps = np.arange(lo, hi)
        w = lanczos_kernel((taps - center) / stretch, a)
        w /= w.sum()
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), w)
    return mat


def lanczos_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a ``(K, H, W)`` image to ``(K, out_h, out_w)``, clamped to [0, 1]."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    rows = resample_matrix(h, out_h)
    cols = resample_matrix(w, out_w)
    out = np.einsum("oh,khw,pw->kop", rows, img, cols, optimize=True)
    return np.clip(out, 0.0, 1.0)
