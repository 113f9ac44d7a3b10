"""Lossless raster IO: 8-bit RGB / single-band PNG and float32 single-band TIFF."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from drdg.errors import DataError, MissingFileError


def read_raster(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"raster not found: {path}")
    try:
        with Image.open(path) as im:
            if im.mode == "F":
                return np.asarray(im, dtype=np.float32).copy()
            if im.mode in ("RGB", "L", "I", "I;16"):
                return np.asarray(im).copy()
            return np.asarray(im.convert("RGB")).copy()
    except (OSError, ValueError) as e:
        raise DataError(f"unreadable raster {path}: {e}") from e


def write_rgb(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"RGB raster must be HxWx3 uint8, got {rgb.shape} {rgb.dtype}")
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def write_band8(path: str | Path, band: np.ndarray) -> None:
    band = np.asarray(band)
    if band.ndim != 2 or band.min(initial=0) < 0 or band.max(initial=0) > 255:
        raise DataError(f"8-bit band must be HxW within [0, 255], got {band.shape}")
    Image.fromarray(band.astype(np.uint8), mode="L").save(path, format="PNG")


def write_float(path: str | Path, band: np.ndarray) -> None:
    band = np.asarray(band, dtype=np.float32)
    if band.ndim == 3 and band.shape[2] == 1:
        band = band[..., 0]
    if band.ndim != 2:
        raise DataError(f"float band must be HxW, got {band.shape}")
    Image.fromarray(band, mode="F").save(path, format="TIFF")
