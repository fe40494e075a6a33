"""Full byte-stream -> fixed-size image pipeline plus PNG/sidecar output."""
from __future__ import annotations

import json
import logging
import warnings
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
from PIL import Image

from ..exceptions import DexError
from .dex import DexSectionMap, parse_dex
from .grid import WidthRule, bytes_to_grid, colorize
from .lanczos import lanczos_resize

logger = logging.getLogger(__name__)

DEFAULT_SIZE = 256


class DexFallbackWarning(UserWarning):
    """Three-channel conversion requested for input that is not a DEX file."""


def convert_with_meta(
    data,
    channels: int = 1,
    rule: WidthRule | None = None,
    target: int = DEFAULT_SIZE,
    channel_map: Mapping[str, int] | None = None,
) -> tuple[np.ndarray, dict]:
    """Convert ``data`` to a ``(channels, target, target)`` image.

    Returns the image and a metadata dict (original length, grid width and
    height, section map or ``None``, whether the DEX fallback was used).
    """
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    rule = rule or WidthRule.standard()
    raw = bytes(data)
    grid = bytes_to_grid(raw, rule)
    meta = {
        "file_len": len(raw),
        "width": int(grid.shape[2]),
        "height": int(grid.shape[1]),
        "channels": channels,
        "size": target,
        "section_map": None,
        "fallback": False,
    }
    if channels == 3:
        try:
            smap = parse_dex(raw)
        except DexError as exc:
            warnings.warn(f"not a DEX file ({exc}); replicating grayscale into 3 channels",
                          DexFallbackWarning, stacklevel=2)
            grid = np.repeat(grid, 3, axis=0)
            meta["fallback"] = True
        else:
            grid = colorize(grid, smap, rule, channel_map)
            meta["section_map"] = smap.to_dict()
    return lanczos_resize(grid, target, target), meta


def convert(data, channels: int = 1, rule: WidthRule | None = None,
            target: int = DEFAULT_SIZE, channel_map=None) -> np.ndarray:
    """bytes -> grid -> (colorize if 3 channels) -> Lanczos resize to target x target."""
    return convert_with_meta(data, channels, rule, target, channel_map)[0]


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantise [0, 1] to 0..255 with round-half-up; returns (H, W) or (H, W, 3)."""
    q = np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)
    return q[0] if q.shape[0] == 1 else np.moveaxis(q, 0, -1)


def save_png(img: np.ndarray, path) -> None:
    q = to_uint8(img)
    mode = "L" if q.ndim == 2 else "RGB"
    Image.fromarray(q, mode=mode).save(path, format="PNG")


def load_png(path, channels: int | None = None) -> np.ndarray:
    """Read a PNG into a (K, H, W) float32 array in [0, 1]."""
    with Image.open(path) as im:
        im.load()
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if channels == 3 else "L")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    arr = arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)
    return np.ascontiguousarray(arr)


def write_sidecar(meta: dict, path) -> None:
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def iter_inputs(path) -> Iterator[Path]:
    path = Path(path)
    if path.is_dir():
        yield from sorted(p for p in path.rglob("*") if p.is_file())
    else:
        yield path


def convert_path(
    src,
    out_dir,
    channels: int = 1,
    rule: WidthRule | None = None,
    size: int = DEFAULT_SIZE,
) -> list[Path]:
    """Convert a file or every file under a directory; returns written PNG paths.

    Files under a directory keep their relative layout in ``out_dir``.
    """
    src = Path(src)
    out_dir = Path(out_dir)
    written = []
    for f in iter_inputs(src):
        rel = f.relative_to(src) if src.is_dir() else Path(f.name)
        target = out_dir / rel.parent
        target.mkdir(parents=True, exist_ok=True)
        img, meta = convert_with_meta(f.read_bytes(), channels, rule, size)
        meta["source"] = str(rel)
        png = target / (rel.name + ".png")
        save_png(img, png)
        write_sidecar(meta, target / (rel.name + ".json"))
        logger.info("converted %s -> %s", f, png)
        written.append(png)
    return written


def section_map_from_meta(meta: dict) -> DexSectionMap | None:
    sm = meta.get("section_map")
    return None if sm is None else DexSectionMap.from_dict(sm)
