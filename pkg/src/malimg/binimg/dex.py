"""DEX header parsing into coarse section maps.

Only the fixed 0x70-byte header is read. Field layout (all little-endian u32)::

    0x00  magic "dex\\n" + 4-byte version
    0x20  file_size
    0x24  header_size
    0x38  string_ids_size   0x3C string_ids_off   (4 bytes / item)
    0x40  type_ids_size     0x44 type_ids_off     (4 bytes / item)
    0x48  proto_ids_size    0x4C proto_ids_off    (12 bytes / item)
    0x50  field_ids_size    0x54 field_ids_off    (8 bytes / item)
    0x58  method_ids_size   0x5C method_ids_off   (8 bytes / item)
    0x60  class_defs_size   0x64 class_defs_off   (32 bytes / item)
    0x68  data_size         0x6C data_off
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from ..exceptions import InconsistentOffsets, MalformedMagic, TruncatedHeader

HEADER_SIZE = 0x70
DEX_MAGIC = b"dex\n"

# (name, size field offset, item size in bytes); offset field follows the size field
ID_TABLES = (
    ("string_ids", 0x38, 4),
    ("type_ids", 0x40, 4),
    ("proto_ids", 0x48, 12),
    ("field_ids", 0x50, 8),
    ("method_ids", 0x58, 8),
)
CLASS_DEFS = ("class_defs", 0x60, 32)
DATA_FIELD = 0x68

REGIONS = ("header", "identifiers", "class_defs", "data")
# canonical label per byte; lower value wins where declared ranges overlap
HEADER, IDENTIFIERS, CLASS_DEFS_LABEL, DATA = range(4)

Range = Tuple[int, int]


def _u32(buf: bytes, off: int) -> int:
    return struct.unpack_from("<I", buf, off)[0]


@dataclass(frozen=True)
class DexSectionMap:
    """Half-open byte ranges of the four DEX regions of one file.

    Empty regions are stored as ``(0, 0)``. Declared ranges may overlap in a
    malformed file; :meth:`labels` gives the canonical one-region-per-byte
    assignment (header > identifiers > class_defs > data, with unclaimed
    bytes going to data).
    """

    header: Range
    identifiers: Range
    class_defs: Range
    data: Range
    file_len: int
    tables: Dict[str, Range] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in REGIONS:
            start, end = getattr(self, name)
            if not (0 <= start <= end <= self.file_len):
                raise InconsistentOffsets(
                    f"{name} range [{start:#x}, {end:#x}) outside file of "
                    f"{self.file_len:#x} bytes"
                )

    def labels(self) -> np.ndarray:
        """Region label (0..3, see ``REGIONS``) for every byte of the file."""
        out = np.full(self.file_len, DATA, dtype=np.uint8)
        # paint lowest priority first so higher-priority regions overwrite
        for label, name in ((CLASS_DEFS_LABEL, "class_defs"),
                            (IDENTIFIERS, "identifiers"),
                            (HEADER, "header")):
            start, end = getattr(self, name)
            out[start:end] = label
        return out

    def region_lengths(self) -> Dict[str, int]:
        counts = np.bincount(self.labels(), minlength=len(REGIONS))
        return {name: int(c) for name, c in zip(REGIONS, counts)}

    def to_dict(self) -> dict:
        return {
            "file_len": self.file_len,
            **{name: list(getattr(self, name)) for name in REGIONS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DexSectionMap":
        return cls(file_len=int(d["file_len"]),
                   **{name: tuple(int(v) for v in d[name]) for name in REGIONS})

    @classmethod
    def whole_file(cls, file_len: int, region: str = "data") -> "DexSectionMap":
        """Map assigning every byte to a single region."""
        ranges = {name: (0, 0) for name in REGIONS}
        ranges[region] = (0, file_len)
        return cls(file_len=file_len, **ranges)


def _table(buf: bytes, size_field: int, item_size: int, file_len: int, name: str) -> Range:
    count = _u32(buf, size_field)
    off = _u32(buf, size_field + 4)
    if count == 0:
        return (0, 0)
    end = off + count * item_size
    if end > file_len:
        raise InconsistentOffsets(
            f"{name}: {count} items at {off:#x} end at {end:#x}, past file end {file_len:#x}"
        )
    return (off, end)


def parse_dex(data: bytes) -> DexSectionMap:
    """Derive the header / identifier / class-definition / data map of a DEX file.

    Raises
    ------
    TruncatedHeader
        Fewer than 0x70 bytes.
    MalformedMagic
        The stream does not start with ``b"dex\\n"``.
    InconsistentOffsets
        A declared table extends past the end of the input.
    """
    buf = bytes(data)
    n = len(buf)
    if n < HEADER_SIZE:
        raise TruncatedHeader(f"need at least {HEADER_SIZE:#x} bytes, got {n:#x}")
    if buf[:4] != DEX_MAGIC:
        raise MalformedMagic(f"bad magic {buf[:4]!r}")

    tables = {name: _table(buf, sf, item, n, name) for name, sf, item in ID_TABLES}
    present = [r for r in tables.values() if r[1] > r[0]]
    if present:
        identifiers = (min(r[0] for r in present), max(r[1] for r in present))
    else:
        identifiers = (0, 0)

    name, sf, item = CLASS_DEFS
    class_defs = tables[name] = _table(buf, sf, item, n, name)

    data_size = _u32(buf, DATA_FIELD)
    data_off = _u32(buf, DATA_FIELD + 4)
    if data_size == 0:
        data_range = (0, 0)
    else:
        if data_off + data_size > n:
            raise InconsistentOffsets(
                f"data section [{data_off:#x}, {data_off + data_size:#x}) past file end {n:#x}"
            )
        data_range = (data_off, data_off + data_size)

    return DexSectionMap(
        header=(0, HEADER_SIZE),
        identifiers=identifiers,
        class_defs=class_defs,
        data=data_range,
        file_len=n,
        tables=tables,
    )


def build_dex(
    tables: Dict[str, Tuple[int, int]] | None = None,
    data: Tuple[int, int] = (0, 0),
    file_len: int = HEADER_SIZE,
    body: bytes | None = None,
    version: bytes = b"035\x00",
) -> bytes:
    """Assemble a DEX-shaped byte string with the given header fields.

    ``tables`` maps table names (``string_ids`` ... ``class_defs``) to
    ``(count, offset)``; ``data`` is ``(size, offset)``. ``body`` fills the
    bytes after the header (zero-filled / truncated to ``file_len``). Only the
    header fields this module reads are populated; checksum and signature are
    left zero.
    """
    if file_len < HEADER_SIZE:
        raise ValueError("file_len must cover the header")
    buf = bytearray(file_len)
    if body is not None:
        chunk = bytes(body)[: file_len - HEADER_SIZE]
        buf[HEADER_SIZE:HEADER_SIZE + len(chunk)] = chunk
    buf[0:8] = DEX_MAGIC + version
    struct.pack_into("<I", buf, 0x20, file_len)
    struct.pack_into("<I", buf, 0x24, HEADER_SIZE)
    struct.pack_into("<I", buf, 0x28, 0x12345678)
    fields = {name: sf for name, sf, _ in ID_TABLES + (CLASS_DEFS,)}
    for name, (count, off) in (tables or {}).items():
        struct.pack_into("<II", buf, fields[name], count, off)
    struct.pack_into("<II", buf, DATA_FIELD, *data)
    return bytes(buf)
