"""Raster I/O helpers.

Rasters are numpy uint8 arrays, shape (H, W, 3) for RGB or (H, W) for
single-channel masks and edge maps. PNG is the only on-disk format; the
wire format for HTTP backends is base64-encoded PNG.
"""

from __future__ import annotations

import base64
import hashlib
import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ValidationError


def as_raster(array: np.ndarray) -> np.ndarray:
    """Validate and canonicalize an array into a uint8 raster."""
    arr = np.asarray(array)
    if arr.ndim == 2:
        pass
    elif arr.ndim == 3 and arr.shape[2] in (1, 3):
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
    else:
        raise ValueError(f"raster must be HxW or HxWx3, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating):
            arr = np.clip(np.rint(arr), 0, 255)
        arr = arr.astype(np.uint8)
    return np.ascontiguousarray(arr)


def load_png(path) -> np.ndarray:
    """Load a PNG as an RGB uint8 raster."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValidationError(f"cannot decode image {path}: {exc}") from exc


def load_png_gray(path) -> np.ndarray:
    """Load a PNG as a single-channel uint8 raster (masks, edge maps)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValidationError(f"cannot decode image {path}: {exc}") from exc


def save_png(path, raster: np.ndarray) -> None:
    """Write a raster to disk as PNG. Byte-deterministic for equal input."""
    arr = as_raster(raster)
    mode = "L" if arr.ndim == 2 else "RGB"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode=mode).save(str(path), format="PNG")


def encode_png_bytes(raster: np.ndarray) -> bytes:
    arr = as_raster(raster)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def decode_png_bytes(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValidationError(f"cannot decode PNG payload: {exc}") from exc


def raster_to_base64(raster: np.ndarray) -> str:
    return base64.b64encode(encode_png_bytes(raster)).decode("ascii")


def raster_from_base64(payload: str) -> np.ndarray:
    return decode_png_bytes(base64.b64decode(payload))


def raster_digest(raster: np.ndarray) -> str:
    """Content digest of a raster, independent of PNG encoder details."""
    arr = as_raster(raster)
    h = hashlib.sha256()
    h.update(f"{arr.shape}:{arr.dtype}".encode())
    h.update(arr.tobytes())
    return h.hexdigest()
