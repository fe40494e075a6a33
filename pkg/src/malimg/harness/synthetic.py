"""Synthetic DEX-shaped corpora for smoke tests and desk-scale training.

Each class is a distinct byte texture. Every sample is a DEX-shaped file
(valid header, randomised identifier/class-def table sizes, a data section)
whose body carries the class texture, so both the grayscale and the
section-coloured paths of the converter are exercised.
"""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Dict

import numpy as np

from ..binimg.convert import convert_with_meta, save_png, write_sidecar
from ..binimg.dex import HEADER_SIZE, build_dex
from ..binimg.grid import WidthRule


def _noise(rng, n):
    return rng.integers(0, 256, n)


def _ramp(rng, n):
    step = int(rng.integers(3, 9))
    return (np.arange(n) * step + int(rng.integers(256))) % 256


def _bands(rng, n):
    out = np.empty(n, dtype=np.int64)
    pos = 0
    while pos < n:
        run = int(rng.integers(96, 320))
        out[pos:pos + run] = rng.choice((int(rng.integers(0, 40)), int(rng.integers(200, 256))))
        pos += run
    return out


def _sparse(rng, n):
    out = np.zeros(n, dtype=np.int64)
    hits = rng.random(n) < 0.06
    out[hits] = rng.integers(128, 256, int(hits.sum()))
    return out


def _columns(rng, n):
    period = int(rng.choice((4, 8)))
    phase = (np.arange(n) // (period // 2)) % 2
    return np.where(phase == 1, int(rng.integers(200, 256)), int(rng.integers(0, 30))) + rng.integers(0, 8, n)


TEXTURES: Dict[str, Callable[[np.random.Generator, int], np.ndarray]] = {
    "noise": _noise,
    "ramp": _ramp,
    "bands": _bands,
    "sparse": _sparse,
    "columns": _columns,
}


def synthetic_dex(texture: str, rng: np.random.Generator, min_len: int = 4096,
                  max_len: int = 9216) -> bytes:
    """One DEX-shaped sample with randomised table sizes and a textured body."""
    n = int(rng.integers(min_len, max_len + 1))
    body = np.clip(TEXTURES[texture](rng, n - HEADER_SIZE), 0, 255).astype(np.uint8).tobytes()
    counts = {
        "string_ids": int(rng.integers(8, 64)),
        "type_ids": int(rng.integers(4, 32)),
        "proto_ids": int(rng.integers(2, 16)),
        "field_ids": int(rng.integers(2, 16)),
        "method_ids": int(rng.integers(4, 32)),
    }
    item = {"string_ids": 4, "type_ids": 4, "proto_ids": 12, "field_ids": 8, "method_ids": 8}
    tables = {}
    off = HEADER_SIZE
    for name, count in counts.items():
        tables[name] = (count, off)
        off += count * item[name]
    n_classes = int(rng.integers(2, 12))
    tables["class_defs"] = (n_classes, off)
    off += 32 * n_classes
    data_off = off + int(rng.integers(0, 64))
    return build_dex(tables=tables, data=(n - data_off, data_off), file_len=n, body=body)


def make_corpus(root, n_train: int = 200, n_val: int = 50, n_test: int = 50,
                size: int = 64, channels: int = 1, classes=tuple(TEXTURES), seed: int = 0,
                keep_sidecars: bool = False) -> Path:
    """Write ``<root>/<split>/<class>/<i>.png`` images through the real converter."""
    root = Path(root)
    rule = WidthRule.standard()
    ss = np.random.SeedSequence(seed)
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        for cls in classes:
            rng = np.random.default_rng(ss.spawn(1)[0])
            cdir = root / split / cls
            cdir.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                img, meta = convert_with_meta(synthetic_dex(cls, rng), channels, rule, size)
                save_png(img, cdir / f"{i:04d}.png")
                if keep_sidecars:
                    write_sidecar(meta, cdir / f"{i:04d}.json")
    return root
