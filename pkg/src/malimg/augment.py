"""Mixup and TrivialAugment on (B, K, H, W) image batches in [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Tuple

import numpy as np
from scipy import ndimage

from .exceptions import BatchTooSmall, ConfigError


@dataclass
class LabeledBatch:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 4 or self.labels.ndim != 2 or len(self.images) != len(self.labels):
            raise ValueError(f"inconsistent batch: images {self.images.shape}, labels {self.labels.shape}")

    def __len__(self):
        return len(self.images)


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 0.2
    enabled: bool = False

    def __post_init__(self):
        if self.enabled and not self.alpha > 0:
            raise ConfigError(f"mixup.alpha must be positive, got {self.alpha}")


def mixup(batch: LabeledBatch, cfg: MixupConfig, rng: np.random.Generator,
          lam: float | None = None, perm: np.ndarray | None = None) -> LabeledBatch:
    """Blend every example with a permuted partner using one shared weight.

    ``lam`` is drawn from Beta(alpha, alpha) and ``perm`` uniformly unless
    given explicitly.
    """
    n = len(batch)
    if n < 2:
        raise BatchTooSmall(f"mixup needs at least 2 examples, got {n}")
    if lam is None:
        lam = float(rng.beta(cfg.alpha, cfg.alpha))
    if perm is None:
        perm = rng.permutation(n)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixing weight must lie in [0, 1], got {lam}")
    x, y = batch.images, batch.labels
    dt = x.dtype
    images = (dt.type(lam) * x + dt.type(1.0 - lam) * x[perm]).astype(dt, copy=False)
    labels = lam * y + (1.0 - lam) * y[perm]
    return LabeledBatch(np.clip(images, 0.0, 1.0), labels)


# -- TrivialAugment ops -----------------------------------------------------
# Each op maps one (K, H, W) float image and a magnitude to a new image.


def _affine(img: np.ndarray, matrix: np.ndarray, offset) -> np.ndarray:
    """Resample every channel at ``matrix @ out_coord + offset``; fill 0."""
    return np.stack([
        ndimage.affine_transform(ch, matrix, offset=offset, order=1, mode="constant", cval=0.0)
        for ch in img
    ]).astype(img.dtype, copy=False)


def _about_center(img, inv):
    h, w = img.shape[1:]
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    return _affine(img, inv, center - inv @ center)


def rotate(img, degrees):
    th = np.deg2rad(degrees)
    # inverse map (output -> input) in (row, col) coordinates
    inv = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])
    return _about_center(img, inv)


def shear_x(img, m):
    return _about_center(img, np.array([[1.0, 0.0], [m, 1.0]]))


def shear_y(img, m):
    return _about_center(img, np.array([[1.0, m], [0.0, 1.0]]))


def _shift(img, dy, dx):
    return _affine(img, np.eye(2), (-dy, -dx))


def translate_x(img, px):
    return _shift(img, 0.0, px)


def translate_y(img, px):
    return _shift(img, px, 0.0)


def _gray(img):
    if img.shape[0] == 3:
        return (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2])[None]
    return img


def _blend(a, b, factor):
    return b + factor * (a - b)


def brightness(img, m):
    return img * (1.0 + m)


def contrast(img, m):
    mean = _gray(img).mean()
    return _blend(img, np.full_like(img, mean), 1.0 + m)


def color(img, m):
    return _blend(img, np.broadcast_to(_gray(img), img.shape), 1.0 + m)


_SMOOTH = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


def sharpness(img, m):
    smooth = np.stack([ndimage.convolve(ch, _SMOOTH, mode="nearest") for ch in img]).astype(img.dtype)
    # borders keep their original values, as in the usual image-library op
    smooth[:, 0, :], smooth[:, -1, :] = img[:, 0, :], img[:, -1, :]
    smooth[:, :, 0], smooth[:, :, -1] = img[:, :, 0], img[:, :, -1]
    return _blend(img, smooth, 1.0 + m)


def autocontrast(img, _m=0.0):
    out = np.empty_like(img)
    for i, ch in enumerate(img):
        lo, hi = ch.min(), ch.max()
        out[i] = (ch - lo) / (hi - lo) if hi > lo else ch
    return out


def equalize(img, _m=0.0):
    q = np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.int64)
    out = np.empty_like(img)
    for i, ch in enumerate(q):
        hist = np.bincount(ch.ravel(), minlength=256)
        cdf = np.cumsum(hist)
        cdf_min = cdf[hist > 0][0]
        denom = cdf[-1] - cdf_min
        if denom == 0:
            out[i] = img[i]
            continue
        lut = (cdf - cdf_min) / denom
        out[i] = lut[ch]
    return out


def posterize(img, bits):
    bits = int(round(bits))
    q = np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)
    mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
    return (q & mask).astype(img.dtype) / 255.0


def solarize(img, threshold):
    return np.where(img >= threshold, 1.0 - img, img).astype(img.dtype)


def identity(img, _m=0.0):
    return img


@dataclass(frozen=True)
class AugOp:
    fn: Callable
    color_only: bool = False
    integer: bool = False


OPS: Dict[str, AugOp] = {
    "identity": AugOp(identity),
    "rotate": AugOp(rotate),
    "shear_x": AugOp(shear_x),
    "shear_y": AugOp(shear_y),
    "translate_x": AugOp(translate_x),
    "translate_y": AugOp(translate_y),
    "brightness": AugOp(brightness),
    "contrast": AugOp(contrast),
    "sharpness": AugOp(sharpness),
    "autocontrast": AugOp(autocontrast),
    "equalize": AugOp(equalize),
    "posterize": AugOp(posterize, integer=True),
    "solarize": AugOp(solarize),
    "color": AugOp(color, color_only=True),
}

DEFAULT_TA_OPS: Dict[str, Tuple[float, float]] = {
    "identity": (0.0, 0.0),
    "rotate": (-30.0, 30.0),
    "shear_x": (-0.3, 0.3),
    "shear_y": (-0.3, 0.3),
    "translate_x": (-32.0, 32.0),
    "translate_y": (-32.0, 32.0),
    "brightness": (-0.4, 0.4),
    "contrast": (-0.4, 0.4),
    "sharpness": (-0.4, 0.4),
    "autocontrast": (0.0, 0.0),
    "equalize": (0.0, 0.0),
    "posterize": (2.0, 8.0),
    "solarize": (0.0, 1.0),
}


@dataclass(frozen=True)
class TaConfig:
    ops: Mapping[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_TA_OPS))
    enabled: bool = False

    def __post_init__(self):
        ops = {str(k): (float(v[0]), float(v[1])) for k, v in dict(self.ops).items()}
        unknown = set(ops) - set(OPS)
        if unknown:
            raise ConfigError(f"unknown TrivialAugment ops: {sorted(unknown)}")
        if "identity" not in ops:
            raise ConfigError("TrivialAugment op set must include 'identity'")
        if any(lo > hi for lo, hi in ops.values()):
            raise ConfigError("op magnitude ranges must have lo <= hi")
        object.__setattr__(self, "ops", ops)

    def active_ops(self, channels: int) -> list[str]:
        return [name for name in self.ops if channels == 3 or not OPS[name].color_only]


def apply_op(img: np.ndarray, name: str, magnitude: float) -> np.ndarray:
    out = OPS[name].fn(img, magnitude)
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def sample_magnitude(name: str, rng: np.random.Generator, lo: float, hi: float) -> float:
    if OPS[name].integer:
        return float(rng.integers(int(round(lo)), int(round(hi)) + 1))
    return float(rng.uniform(lo, hi)) if hi > lo else lo


def trivial_augment(images: np.ndarray, cfg: TaConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply one uniformly drawn op at a uniformly drawn magnitude to each image."""
    images = np.asarray(images)
    names = cfg.active_ops(images.shape[1])
    out = np.empty_like(images)
    for i, img in enumerate(images):
        name = names[int(rng.integers(len(names)))]
        lo, hi = cfg.ops[name]
        out[i] = apply_op(img, name, sample_magnitude(name, rng, lo, hi))
    return out
