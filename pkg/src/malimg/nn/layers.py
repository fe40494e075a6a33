"""Network building blocks: conv backbone (C2..C5), FPN top-down fusion, pooled head."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, Mapping, Sequence

import numpy as np

from ..exceptions import ShapeError
from . import functional as F
from .tensor import Tensor, as_tensor

LEVELS = ("C2", "C3", "C4", "C5")
PYRAMID = ("P2", "P3", "P4", "P5")


@dataclass(frozen=True)
class BackboneConfig:
    """Stem (stride 2) followed by four stride-2 stages emitting C2..C5."""

    in_channels: int = 1
    widths: tuple[int, ...] = (16, 32, 64, 128)
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != 4:
            raise ValueError(f"backbone needs exactly 4 stage widths, got {self.widths}")
        if any(w <= 0 for w in self.widths) or self.in_channels <= 0:
            raise ValueError("channel widths must be positive")

    @property
    def strides(self) -> tuple[int, ...]:
        """Total downsampling factor at C2..C5."""
        return (4, 8, 16, 32)


@dataclass(frozen=True)
class FpnConfig:
    width: int = 64
    upsample: str = "nearest"

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("pyramid width must be positive")
        if self.upsample != "nearest":
            raise ValueError(f"unsupported upsample mode {self.upsample!r}")


class Module:
    """Parameter container; children are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, n_in, n_out, kernel_size, stride=1, padding=0, *, rng, dtype=np.float32):
        fan_in = n_in * kernel_size * kernel_size
        self.weight = Tensor(kaiming_uniform(rng, (n_out, n_in, kernel_size, kernel_size), fan_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, n_in, n_out, *, rng, dtype=np.float32):
        self.weight = Tensor(kaiming_uniform(rng, (n_out, n_in), n_in, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Stage(Module):
    """3x3 conv stride 2 -> ReLU -> 3x3 conv stride 1 -> ReLU."""

    def __init__(self, n_in, n_out, k, *, rng, dtype):
        pad = k // 2
        self.down = Conv2d(n_in, n_out, k, stride=2, padding=pad, rng=rng, dtype=dtype)
        self.conv = Conv2d(n_out, n_out, k, stride=1, padding=pad, rng=rng, dtype=dtype)

    def __call__(self, x):
        return F.relu(self.conv(F.relu(self.down(x))))


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, *, rng, dtype=np.float32):
        self.cfg = cfg
        k = cfg.kernel_size
        self.stem = Conv2d(cfg.in_channels, cfg.widths[0], k, stride=2, padding=k // 2, rng=rng, dtype=dtype)
        ins = (cfg.widths[0],) + cfg.widths[:-1]
        self.stages = [Stage(a, b, k, rng=rng, dtype=dtype) for a, b in zip(ins, cfg.widths)]

    def __call__(self, x) -> Dict[str, Tensor]:
        return forward_backbone(x, self)


def forward_backbone(x, backbone: Backbone) -> Dict[str, Tensor]:
    """Return ``{"C2": ..., "C5": ...}``; C_i has spatial size H/2^i x W/2^i."""
    x = as_tensor(x)
    cfg = backbone.cfg
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"expected (B, {cfg.in_channels}, H, W), got {x.shape}")
    if x.shape[2] % 32 or x.shape[3] % 32:
        raise ShapeError(f"spatial dims must be divisible by 32, got {x.shape[2:]}")
    h = F.relu(backbone.stem(x))
    feats = {}
    for name, stage in zip(LEVELS, backbone.stages):
        h = stage(h)
        feats[name] = h
    return feats


class FPN(Module):
    def __init__(self, in_widths: Sequence[int], cfg: FpnConfig, *, rng, dtype=np.float32):
        self.cfg = cfg
        self.lateral = [Conv2d(w, cfg.width, 1, rng=rng, dtype=dtype) for w in in_widths]

    def __call__(self, feats: Mapping[str, Tensor]) -> Dict[str, Tensor]:
        return fpn_fuse(feats, self)


def fpn_fuse(feats: Mapping[str, Tensor], fpn: FPN) -> Dict[str, Tensor]:
    """Top-down fusion: P5 = L5(C5); P_i = L_i(C_i) + up2x(P_{i+1}) for i = 4, 3, 2."""
    cs = [as_tensor(feats[name]) for name in LEVELS]
    for lo, hi in zip(cs, cs[1:]):
        if lo.shape[0] != hi.shape[0] or lo.shape[2] != 2 * hi.shape[2] or lo.shape[3] != 2 * hi.shape[3]:
            raise ShapeError(f"feature maps must halve level to level: {lo.shape} -> {hi.shape}")
    out: Dict[str, Tensor] = {}
    top = fpn.lateral[3](cs[3])
    out["P5"] = top
    for i in (2, 1, 0):
        top = F.add(fpn.lateral[i](cs[i]), F.upsample_nearest2x(top))
        out[PYRAMID[i]] = top
    return out


class ClassifierHead(Module):
    def __init__(self, n_features: int, num_classes: int, *, rng, dtype=np.float32):
        self.fc = Linear(n_features, num_classes, rng=rng, dtype=dtype)

    def __call__(self, features) -> Tensor:
        return classify_head(features, self)


def classify_head(features, head: ClassifierHead) -> Tensor:
    """Pool-and-project: C5 tensor -> GAP -> linear; or P2..P5 -> GAP each -> concat -> linear."""
    if isinstance(features, Mapping):
        levels = [as_tensor(features[name]) for name in PYRAMID]
        if len({t.shape[0] for t in levels}) != 1:
            raise ShapeError("pyramid levels disagree on batch size")
        pooled = F.concat([F.global_avg_pool(t) for t in levels], axis=1)
    else:
        pooled = F.global_avg_pool(as_tensor(features))
    if pooled.shape[1] != head.fc.weight.shape[1]:
        raise ShapeError(f"head expects {head.fc.weight.shape[1]} features, got {pooled.shape[1]}")
    return head.fc(pooled)


@dataclass(frozen=True)
class NetConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    fpn: FpnConfig | None = field(default_factory=FpnConfig)
    num_classes: int = 43

    def to_dict(self) -> dict:
        return {
            "backbone": {**asdict(self.backbone), "widths": list(self.backbone.widths)},
            "fpn": None if self.fpn is None else asdict(self.fpn),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetConfig":
        return cls(
            backbone=BackboneConfig(**d["backbone"]),
            fpn=None if d.get("fpn") is None else FpnConfig(**d["fpn"]),
            num_classes=int(d["num_classes"]),
        )


class MalwareNet(Module):
    """Backbone, optional FPN, pooled linear classifier."""

    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.backbone = Backbone(cfg.backbone, rng=rng, dtype=dtype)
        if cfg.fpn is not None:
            self.fpn = FPN(cfg.backbone.widths, cfg.fpn, rng=rng, dtype=dtype)
            n_features = 4 * cfg.fpn.width
        else:
            self.fpn = None
            n_features = cfg.backbone.widths[-1]
        self.head = ClassifierHead(n_features, cfg.num_classes, rng=rng, dtype=dtype)

    def __call__(self, x) -> Tensor:
        x = as_tensor(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.dtype))
        feats = self.backbone(x)
        if self.fpn is not None:
            return self.head(self.fpn(feats))
        return self.head(feats["C5"])

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data) for k, p in self.parameters().items())

    def load_arrays(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy arrays into parameters by name; returns names that were skipped.

        With ``strict`` any missing name or shape mismatch raises.
        """
        skipped = []
        params = self.parameters()
        for name, p in params.items():
            arr = arrays.get(name)
            if arr is None or arr.shape != p.shape:
                if strict:
                    got = None if arr is None else arr.shape
                    raise ShapeError(f"parameter {name}: expected {p.shape}, got {got}")
                skipped.append(name)
                continue
            p.data = np.array(arr, dtype=self.dtype)
        if strict:
            extra = set(arrays) - set(params)
            if extra:
                raise ShapeError(f"unexpected parameters: {sorted(extra)}")
        return skipped
