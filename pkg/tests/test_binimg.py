import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from malimg.binimg import (
    DexFallbackWarning,
    DexSectionMap,
    WidthRule,
    build_dex,
    bytes_to_grid,
    colorize,
    convert,
    convert_path,
    convert_with_meta,
    lanczos_resize,
    load_png,
    parse_dex,
    save_png,
    to_uint8,
)
from malimg.exceptions import (
    EmptyInput,
    InconsistentOffsets,
    MalformedMagic,
    ShapeMismatch,
    TruncatedHeader,
)
from oracles import lanczos_resize_direct

KB = 1024


# -- DEX parsing --------------------------------------------------------------

def _hexdump_u32(data: bytes, off: int) -> int:
    return data[off] | data[off + 1] << 8 | data[off + 2] << 16 | data[off + 3] << 24


def test_fixture_header_fields_by_hexdump(minimal_dex_bytes):
    d = minimal_dex_bytes
    assert d[:4] == b"dex\n"
    assert len(d) == 0x300
    assert (_hexdump_u32(d, 0x38), _hexdump_u32(d, 0x3C)) == (4, 0x70)
    assert (_hexdump_u32(d, 0x58), _hexdump_u32(d, 0x5C)) == (2, 0x9C)
    assert (_hexdump_u32(d, 0x60), _hexdump_u32(d, 0x64)) == (2, 0xAC)
    assert (_hexdump_u32(d, 0x68), _hexdump_u32(d, 0x6C)) == (0x100, 0x200)


def test_parse_minimal_fixture(minimal_dex_bytes):
    m = parse_dex(minimal_dex_bytes)
    assert m.file_len == 0x300
    assert m.header == (0, 0x70)
    # string_ids at 0x70 through the end of method_ids (2 x 8 bytes at 0x9C)
    assert m.identifiers == (0x70, 0x9C + 16)
    assert m.class_defs == (0xAC, 0xAC + 2 * 32)
    assert m.data == (0x200, 0x300)


def test_region_lengths_cover_file(minimal_dex_bytes):
    lengths = parse_dex(minimal_dex_bytes).region_lengths()
    assert lengths == {"header": 0x70, "identifiers": 0x3C, "class_defs": 0x40,
                       "data": 0x300 - 0xEC}
    assert sum(lengths.values()) == 0x300


def test_truncated_header():
    with pytest.raises(TruncatedHeader):
        parse_dex(b"dex\n035\x00" + bytes(8))


def test_zip_magic_rejected():
    with pytest.raises(MalformedMagic):
        parse_dex(b"PK\x03\x04" + bytes(0x200))


def test_table_past_end_rejected():
    blob = build_dex(tables={"class_defs": (10, 0x80)}, file_len=0x100)
    with pytest.raises(InconsistentOffsets):
        parse_dex(blob)


def test_data_past_end_rejected():
    blob = build_dex(data=(0x200, 0x80), file_len=0x100)
    with pytest.raises(InconsistentOffsets):
        parse_dex(blob)


def test_section_map_dict_roundtrip(minimal_dex_bytes):
    m = parse_dex(minimal_dex_bytes)
    assert DexSectionMap.from_dict(json.loads(json.dumps(m.to_dict()))) == m


@given(st.binary(min_size=0, max_size=400))
def test_parse_never_reads_out_of_bounds(blob):
    try:
        m = parse_dex(blob)
    except (TruncatedHeader, MalformedMagic, InconsistentOffsets):
        return
    assert m.file_len == len(blob)


@given(st.binary(min_size=0x70 - 4, max_size=600), st.lists(st.integers(0, 2**32 - 1), min_size=14, max_size=14))
def test_parse_fuzzed_headers_with_valid_magic(tail, fields):
    buf = bytearray(b"dex\n" + tail)
    if len(buf) >= 0x70:
        struct.pack_into("<14I", buf, 0x38, *fields)
    try:
        m = parse_dex(bytes(buf))
    except (TruncatedHeader, InconsistentOffsets):
        return
    labels = m.labels()
    assert labels.shape == (len(buf),)
    for name in ("header", "identifiers", "class_defs", "data"):
        start, end = getattr(m, name)
        assert 0 <= start <= end <= len(buf)


# -- width rule and grid -----------------------------------------------------

def test_standard_width_table():
    rule = WidthRule.standard()
    assert rule.width_for(1) == 32
    assert rule.width_for(10 * KB - 1) == 32
    assert rule.width_for(10 * KB) == 64
    assert rule.width_for(99 * KB) == 256
    assert rule.width_for(999 * KB) == 768
    assert rule.width_for(1000 * KB) == 1024
    assert rule.width_for(50 * 1024 * KB) == 1024


@given(st.integers(0, 5 * 1024 * KB))
def test_width_rule_total(n):
    rule = WidthRule.standard()
    w = rule.width_for(n)
    assert w in {32, 64, 128, 256, 384, 512, 768, 1024}
    matches = [wd for size, wd in rule.thresholds if n < size]
    assert w == (matches[0] if matches else rule.default)


def test_width_rule_rejects_unsorted():
    with pytest.raises(ValueError):
        WidthRule(thresholds=((100, 32), (50, 64)), default=128)


def test_width_rule_file(tmp_path):
    p = tmp_path / "w.json"
    p.write_text(json.dumps({"thresholds": [[100, 8]], "default": 16}))
    rule = WidthRule.from_file(p)
    assert rule.width_for(99) == 8 and rule.width_for(100) == 16


def test_grid_1024_bytes():
    g = bytes_to_grid(bytes(range(256)) * 4, WidthRule.standard())
    assert g.shape == (1, math.ceil(1024 / 32), 32) == (1, 32, 32)


def test_grid_padding():
    g = bytes_to_grid(bytes([7]) * 33, WidthRule.fixed(32))
    assert g.shape == (1, 2, 32)
    assert np.all(g[0, 1, 1:] == 0.0)
    assert np.count_nonzero(g) == 33


def test_grid_all_ff_is_one():
    assert np.all(bytes_to_grid(b"\xff" * 100, WidthRule.fixed(10)) == 1.0)


def test_grid_empty():
    with pytest.raises(EmptyInput):
        bytes_to_grid(b"", WidthRule.standard())


@given(st.integers(1, 64), st.integers(1, 40), st.randoms())
def test_grid_inversion_unpadded(width, rows, rnd):
    data = bytes(rnd.getrandbits(8) for _ in range(width * rows))
    g = bytes_to_grid(data, WidthRule.fixed(width))
    assert bytes(np.rint(g.ravel() * 255).astype(np.uint8)) == data


# -- colorize -----------------------------------------------------------------

def test_colorize_all_data():
    data = bytes(range(200))
    rule = WidthRule.fixed(16)
    g = bytes_to_grid(data, rule)
    c = colorize(g, DexSectionMap.whole_file(len(data), "data"), rule)
    np.testing.assert_array_equal(c[2], g[0])
    assert not c[0].any() and not c[1].any()


def test_colorize_all_header():
    data = bytes([5]) * 90
    rule = WidthRule.fixed(16)
    g = bytes_to_grid(data, rule)
    c = colorize(g, DexSectionMap.whole_file(len(data), "header"), rule)
    assert c[0].any() and not c[1].any() and not c[2].any()


def test_colorize_fixture_occupancy(minimal_dex_bytes):
    rule = WidthRule.standard()
    g = bytes_to_grid(minimal_dex_bytes, rule)
    m = parse_dex(minimal_dex_bytes)
    c = colorize(np.ones_like(g), m, rule)
    # with an all-ones grid every in-file position lights up exactly one channel
    counts = c.reshape(3, -1).sum(axis=1)
    assert counts.tolist() == [0x70 + 0x3C, 0x40, 0x300 - 0xEC]


def test_colorize_shape_mismatch(minimal_dex_bytes):
    rule = WidthRule.standard()
    g = bytes_to_grid(minimal_dex_bytes[:0x100], rule)
    with pytest.raises(ShapeMismatch):
        colorize(g, parse_dex(minimal_dex_bytes), rule)


def _random_dex(rnd, n_body):
    n = 0x70 + n_body
    tables = {}
    off = 0x70
    for name, item in (("string_ids", 4), ("type_ids", 4), ("proto_ids", 12),
                       ("field_ids", 8), ("method_ids", 8), ("class_defs", 32)):
        count = rnd.randint(0, 3)
        if off + count * item > n:
            count = 0
        tables[name] = (count, off)
        off += count * item
    data_off = rnd.randint(0x70, n)
    data = (rnd.randint(0, n - data_off), data_off)
    body = bytes(rnd.getrandbits(8) for _ in range(n_body))
    return build_dex(tables=tables, data=data, file_len=n, body=body)


@given(st.integers(0, 600), st.randoms())
def test_colorize_partition_fuzzed(n_body, rnd):
    blob = _random_dex(rnd, n_body)
    rule = WidthRule.fixed(rnd.choice([8, 16, 32]))
    g = bytes_to_grid(blob, rule)
    c = colorize(g, parse_dex(blob), rule)
    np.testing.assert_array_equal(c.sum(axis=0), g[0])
    occupied = colorize(np.ones_like(g), parse_dex(blob), rule)
    flat = occupied.reshape(3, -1)
    assert np.all(flat[:, :len(blob)].sum(axis=0) == 1)
    assert np.all(flat[:, len(blob):] == 0)


# -- lanczos ------------------------------------------------------------------

@pytest.mark.parametrize("shape,out", [((1, 7, 5), (13, 3)), ((3, 32, 32), (256, 256)),
                                       ((1, 300, 32), (64, 64))])
def test_lanczos_constant(shape, out):
    r = lanczos_resize(np.full(shape, 0.5), *out)
    assert r.shape == (shape[0],) + out
    assert np.max(np.abs(r - 0.5)) < 1e-6


def test_lanczos_identity(rng):
    img = rng.random((3, 17, 23))
    np.testing.assert_allclose(lanczos_resize(img, 17, 23), img, atol=1e-6)


def test_lanczos_checkerboard_matches_direct_oracle():
    board = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    np.testing.assert_allclose(lanczos_resize(board, 4, 4), lanczos_resize_direct(board, 4, 4), atol=1e-6)


@pytest.mark.parametrize("src,dst", [((1, 9, 6), (4, 11)), ((2, 5, 5), (12, 3))])
def test_lanczos_random_matches_direct_oracle(rng, src, dst):
    img = rng.random(src)
    np.testing.assert_allclose(lanczos_resize(img, *dst), lanczos_resize_direct(img, *dst), atol=1e-12)


def test_lanczos_output_clamped(rng):
    img = (rng.random((1, 8, 8)) > 0.5).astype(float)
    r = lanczos_resize(img, 31, 29)
    assert r.min() >= 0.0 and r.max() <= 1.0


def test_lanczos_rejects_bad_target():
    with pytest.raises(ValueError):
        lanczos_resize(np.zeros((1, 4, 4)), 0, 4)


# -- full conversion ----------------------------------------------------------

def test_convert_output_shape(minimal_dex_bytes):
    assert convert(minimal_dex_bytes, 1).shape == (1, 256, 256)
    assert convert(minimal_dex_bytes, 3).shape == (3, 256, 256)


def test_convert_constant_file():
    # 5024 = 157 full rows of 32: no padding row to break constancy
    img = convert(b"\x40" * 5024, 1)
    assert np.max(np.abs(img - 0x40 / 255)) < 1e-6


def test_convert_k3_fallback_warns():
    with pytest.warns(DexFallbackWarning):
        img, meta = convert_with_meta(bytes(range(256)) * 3, 3)
    assert meta["fallback"] and img.shape == (3, 256, 256)
    np.testing.assert_array_equal(img[0], img[1])


def test_convert_meta_records_section_map(minimal_dex_bytes):
    _, meta = convert_with_meta(minimal_dex_bytes, 3)
    assert meta["file_len"] == 0x300 and meta["width"] == 32
    assert meta["section_map"]["data"] == [0x200, 0x300]


GOLDEN_CASES = [("minimal.dex", 1), ("noise.bin", 1), ("constant.bin", 1), ("minimal.dex", 3)]


@pytest.mark.parametrize("name,channels", GOLDEN_CASES)
def test_golden_png_byte_exact(golden_dir, tmp_path, name, channels):
    img = convert((golden_dir / name).read_bytes(), channels)
    out = tmp_path / "out.png"
    save_png(img, out)
    assert out.read_bytes() == (golden_dir / f"{name}.k{channels}.png").read_bytes()


def test_png_roundtrip(rng, tmp_path):
    img = rng.random((3, 8, 8))
    save_png(img, tmp_path / "a.png")
    back = load_png(tmp_path / "a.png")
    assert back.shape == (3, 8, 8)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-6


def test_to_uint8_rounds_half_up():
    assert to_uint8(np.array([[[0.5 / 255, 1.5 / 255]]])).tolist() == [[1, 2]]


def test_convert_path_writes_png_and_sidecar(tmp_path, minimal_dex_bytes):
    src = tmp_path / "in"
    (src / "sub").mkdir(parents=True)
    (src / "sub" / "a.dex").write_bytes(minimal_dex_bytes)
    (src / "b.bin").write_bytes(b"\x01" * 100)
    with pytest.warns(DexFallbackWarning):
        written = convert_path(src, tmp_path / "out", channels=3, size=64)
    assert sorted(p.name for p in written) == ["a.dex.png", "b.bin.png"]
    meta = json.loads((tmp_path / "out" / "sub" / "a.dex.json").read_text())
    assert meta["file_len"] == 0x300 and meta["width"] == 32 and meta["section_map"] is not None
    with Image.open(tmp_path / "out" / "sub" / "a.dex.png") as im:
        assert im.mode == "RGB" and im.size == (64, 64)


def _interior(n_in, n_out):
    s = n_in / n_out
    f = max(s, 1.0)
    c = (np.arange(n_out) + 0.5) * s - 0.5
    return (c - 3 * f >= 0) & (c + 3 * f <= n_in - 1)


@pytest.mark.parametrize("h,w", [(10, 32), (94, 32), (300, 64), (500, 700)])
def test_lanczos_interior_matches_pillow(h, w):
    # Pillow truncates the kernel at borders while we clamp coordinates, so
    # only pixels whose footprint stays inside the source are comparable.
    a = np.random.default_rng(h).random((h, w)).astype(np.float32)
    ref = np.asarray(Image.fromarray(a, mode="F").resize((256, 256), Image.Resampling.LANCZOS))
    ours = lanczos_resize(a[None].astype(np.float64), 256, 256)[0]
    mask = np.outer(_interior(h, 256), _interior(w, 256))
    assert mask.sum() > 10_000
    assert np.abs(np.clip(ref, 0, 1) - ours)[mask].max() < 1e-6
