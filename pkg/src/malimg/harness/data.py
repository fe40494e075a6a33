"""Dataset indexing and image loading.

Two layouts are understood:

* ``tree``: ``<root>/<split>/<class>/<image>.png`` for split in train/val/test
* ``manifest``: ``<root>/manifest.csv`` with header ``split,class,path``;
  paths are relative to ``root``
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..binimg.convert import load_png
from ..exceptions import ConfigMismatch, DataError, EmptyClass, MissingSplit, UnreadableImage

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = (".png",)
MANIFEST = "manifest.csv"


@dataclass
class DatasetIndex:
    root: Path
    class_names: List[str]
    splits: Dict[str, List[Tuple[str, int]]]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def train_counts(self) -> np.ndarray:
        labels = [c for _, c in self.splits["train"]]
        return np.bincount(labels, minlength=self.num_classes)

    @property
    def total(self) -> int:
        return len(self.splits["train"])

    def labels(self, split: str) -> np.ndarray:
        return np.array([c for _, c in self.splits[split]], dtype=np.int64)

    def paths(self, split: str) -> List[Path]:
        return [self.root / p for p, _ in self.splits[split]]


def _scan_tree(root: Path) -> Dict[str, Dict[str, List[str]]]:
    found: Dict[str, Dict[str, List[str]]] = {}
    for split in SPLITS:
        sdir = root / split
        if not sdir.is_dir():
            raise MissingSplit(f"missing split directory {sdir}")
        classes = {}
        for cdir in sorted(p for p in sdir.iterdir() if p.is_dir()):
            classes[cdir.name] = sorted(
                str(p.relative_to(root)) for p in cdir.iterdir()
                if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
            )
        found[split] = classes
    return found


def _scan_manifest(root: Path) -> Dict[str, Dict[str, List[str]]]:
    path = root / MANIFEST
    if not path.is_file():
        raise DataError(f"manifest layout requested but {path} does not exist")
    found: Dict[str, Dict[str, List[str]]] = {s: {} for s in SPLITS}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"split", "class", "path"}:
            raise DataError(f"{path} must have columns split,class,path")
        for row in reader:
            if row["split"] not in found:
                raise DataError(f"unknown split {row['split']!r} in {path}")
            found[row["split"]].setdefault(row["class"], []).append(row["path"])
    for split in SPLITS:
        if not found[split]:
            raise MissingSplit(f"manifest lists no {split} images")
    return found


def ingest(data_root, layout: str = "tree") -> DatasetIndex:
    """Build a deterministic index; classes are the sorted train class names."""
    root = Path(data_root)
    if layout == "tree":
        found = _scan_tree(root)
    elif layout == "manifest":
        found = _scan_manifest(root)
    else:
        raise DataError(f"unknown layout {layout!r}")

    class_names = sorted(found["train"])
    if not class_names:
        raise EmptyClass(f"no classes under {root / 'train'}")
    empty = [c for c in class_names if not found["train"][c]]
    if empty:
        raise EmptyClass(f"training classes without images: {empty}")
    lookup = {c: i for i, c in enumerate(class_names)}

    splits: Dict[str, List[Tuple[str, int]]] = {}
    seen: Dict[str, str] = {}
    for split in SPLITS:
        extra = set(found[split]) - set(lookup)
        if extra:
            raise DataError(f"{split} has classes absent from train: {sorted(extra)}")
        items = sorted((p, lookup[c]) for c, ps in found[split].items() for p in ps)
        for p, _ in items:
            if p in seen:
                raise DataError(f"{p} appears in both {seen[p]} and {split}")
            seen[p] = split
        splits[split] = items
    return DatasetIndex(root=root, class_names=class_names, splits=splits)


def read_image(path: Path, channels: int) -> np.ndarray:
    try:
        img = load_png(path)
    except (OSError, ValueError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc
    if img.shape[0] == channels:
        return img
    if img.shape[0] == 1 and channels == 3:
        warnings.warn(f"{path}: grayscale image replicated to 3 channels", stacklevel=2)
        return np.repeat(img, 3, axis=0)
    raise ConfigMismatch(f"{path} has {img.shape[0]} channels but the model expects {channels}")


class ArrayDataset:
    """In-memory images (N, K, H, W) with integer labels."""

    def __init__(self, images: np.ndarray, labels: Sequence[int]):
        self.images = np.asarray(images, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise DataError(f"images {self.images.shape} and labels {self.labels.shape} disagree")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    def load(self, idx: np.ndarray) -> np.ndarray:
        return self.images[idx]


class PngDataset:
    """Images read lazily from disk; decoded arrays are cached up to ``cache_bytes``."""

    def __init__(self, paths: Sequence[Path], labels: Sequence[int], channels: int,
                 cache_bytes: int = 2 << 30):
        self.paths = list(paths)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.channels = channels
        self.cache_bytes = cache_bytes
        self._cache: Dict[int, np.ndarray] = {}
        self._cached = 0
        self._shape: Tuple[int, ...] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def _get(self, i: int) -> np.ndarray:
        img = self._cache.get(i)
        if img is not None:
            return img
        img = read_image(self.paths[i], self.channels)
        if self._shape is None:
            self._shape = img.shape
        elif img.shape != self._shape:
            raise DataError(f"{self.paths[i]} has shape {img.shape}, expected {self._shape}")
        if self._cached + img.nbytes <= self.cache_bytes:
            self._cache[i] = img
            self._cached += img.nbytes
        return img

    def load(self, idx: np.ndarray) -> np.ndarray:
        return np.stack([self._get(int(i)) for i in idx])


def split_dataset(index: DatasetIndex, split: str, channels: int) -> PngDataset:
    return PngDataset(index.paths(split), index.labels(split), channels)
