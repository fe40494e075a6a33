"""Byte stream to 2-D grid layout and DEX section colouring."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Tuple

import numpy as np

from ..exceptions import EmptyInput, ShapeMismatch
from .dex import REGIONS, DexSectionMap

KB = 1024

# header and identifiers share red: the header alone is only 0x70 bytes
DEFAULT_CHANNEL_MAP = {"header": 0, "identifiers": 0, "class_defs": 1, "data": 2}


@dataclass(frozen=True)
class WidthRule:
    """Maps a file length to a grid width.

    ``thresholds`` holds ``(max_size, width)`` pairs with exclusive upper
    bounds in strictly increasing order; lengths at or beyond the last bound
    get ``default``.
    """

    thresholds: Tuple[Tuple[int, int], ...]
    default: int

    def __post_init__(self):
        object.__setattr__(self, "thresholds",
                           tuple((int(s), int(w)) for s, w in self.thresholds))
        sizes = [s for s, _ in self.thresholds]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"width thresholds must be strictly increasing: {sizes}")
        if any(w <= 0 for _, w in self.thresholds) or self.default <= 0:
            raise ValueError("widths must be positive")

    def width_for(self, n_bytes: int) -> int:
        for max_size, width in self.thresholds:
            if n_bytes < max_size:
                return width
        return self.default

    @classmethod
    def standard(cls) -> "WidthRule":
        """The usual malware-imagery table (<10 KB -> 32 ... >=1000 KB -> 1024)."""
        return cls(
            thresholds=(
                (10 * KB, 32),
                (30 * KB, 64),
                (60 * KB, 128),
                (100 * KB, 256),
                (200 * KB, 384),
                (500 * KB, 512),
                (1000 * KB, 768),
            ),
            default=1024,
        )

    @classmethod
    def fixed(cls, width: int) -> "WidthRule":
        return cls(thresholds=(), default=width)

    def to_dict(self) -> dict:
        return {"thresholds": [list(t) for t in self.thresholds], "default": self.default}

    @classmethod
    def from_dict(cls, d: Mapping) -> "WidthRule":
        unknown = set(d) - {"thresholds", "default"}
        if unknown:
            raise ValueError(f"unknown width-table keys: {sorted(unknown)}")
        return cls(thresholds=tuple(tuple(t) for t in d.get("thresholds", ())),
                   default=int(d["default"]))

    @classmethod
    def from_file(cls, path) -> "WidthRule":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_u8(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data.astype(np.uint8, copy=False).ravel()
    return np.frombuffer(bytes(data), dtype=np.uint8)


def bytes_to_grid(data, rule: WidthRule) -> np.ndarray:
    """Lay bytes out row-major on a ``(1, ceil(n / width), width)`` grid in [0, 1].

    The final row is zero-padded.
    """
    raw = _as_u8(data)
    n = raw.size
    if n == 0:
        raise EmptyInput("cannot convert an empty byte stream")
    width = rule.width_for(n)
    height = math.ceil(n / width)
    flat = np.zeros(height * width, dtype=np.float64)
    flat[:n] = raw / 255.0
    return flat.reshape(1, height, width)


def colorize(
    grid: np.ndarray,
    section_map: DexSectionMap,
    rule: WidthRule,
    channel_map: Mapping[str, int] | None = None,
) -> np.ndarray:
    """Spread a grayscale grid over three channels by DEX region.

    Each byte position keeps its intensity in the channel of its region and
    is zero in the other two; padding is zero everywhere.
    """
    channel_map = dict(DEFAULT_CHANNEL_MAP if channel_map is None else channel_map)
    if set(channel_map) != set(REGIONS) or not all(0 <= c < 3 for c in channel_map.values()):
        raise ValueError(f"channel_map must assign each of {REGIONS} to a channel in 0..2")
    if grid.ndim != 3 or grid.shape[0] != 1:
        raise ShapeMismatch(f"expected a (1, H, W) grid, got {grid.shape}")
    _, height, width = grid.shape
    n = section_map.file_len
    if n == 0 or rule.width_for(n) != width or math.ceil(n / width) != height:
        raise ShapeMismatch(
            f"section map for {n} bytes does not match a {height}x{width} grid"
        )

    lookup = np.array([channel_map[name] for name in REGIONS], dtype=np.intp)
    channel_of_byte = lookup[section_map.labels()]
    flat = grid.reshape(-1)
    out = np.zeros((3, height * width), dtype=grid.dtype)
    idx = np.arange(n)
    out[channel_of_byte, idx] = flat[:n]
    return out.reshape(3, height, width)


def validate_image(img: np.ndarray, channels: Sequence[int] = (1, 3)) -> np.ndarray:
    """Check the (K, H, W) image contract: K allowed, values finite in [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in channels:
        raise ShapeMismatch(f"expected (K, H, W) with K in {tuple(channels)}, got {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must be finite and within [0, 1]")
    return img
