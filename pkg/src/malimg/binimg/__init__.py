"""Binary-to-image conversion: DEX section maps, byte grids, Lanczos resizing."""
from .convert import (
    DEFAULT_SIZE,
    DexFallbackWarning,
    convert,
    convert_path,
    convert_with_meta,
    load_png,
    save_png,
    to_uint8,
)
from .dex import HEADER_SIZE, REGIONS, DexSectionMap, build_dex, parse_dex
from .grid import DEFAULT_CHANNEL_MAP, WidthRule, bytes_to_grid, colorize, validate_image
from .lanczos import lanczos_kernel, lanczos_resize, resample_matrix

__all__ = [
    "DEFAULT_CHANNEL_MAP",
    "DEFAULT_SIZE",
    "DexFallbackWarning",
    "DexSectionMap",
    "HEADER_SIZE",
    "REGIONS",
    "WidthRule",
    "build_dex",
    "bytes_to_grid",
    "colorize",
    "convert",
    "convert_path",
    "convert_with_meta",
    "lanczos_kernel",
    "lanczos_resize",
    "load_png",
    "parse_dex",
    "resample_matrix",
    "save_png",
    "to_uint8",
    "validate_image",
]
