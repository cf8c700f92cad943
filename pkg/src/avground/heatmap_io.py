"""Raw heatmap file format and overlay rendering.

A heatmap file is: magic bytes ``AVH1``, unsigned 32-bit height, unsigned
32-bit width (both little-endian), then height*width float32 values in
row-major order.  The overlay renderer blends a colormapped heatmap onto the
source image and writes a PNG of identical dimensions.
"""

from __future__ import annotations

import struct
from pathlib import Path

import matplotlib
import numpy as np
from PIL import Image

from .errors import InputError

MAGIC = b"AVH1"
HEADER = struct.Struct("<4sII")


def write_heatmap(path: str | Path, heatmap: np.ndarray) -> None:
    if heatmap.ndim != 2:
        raise InputError("heatmap must be a 2-D array")
    height, width = heatmap.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(HEADER.pack(MAGIC, height, width))
        handle.write(heatmap.astype("<f4").tobytes())


def read_heatmap(path: str | Path) -> np.ndarray:
    with open(path, "rb") as handle:
        header = handle.read(HEADER.size)
        if len(header) != HEADER.size:
            raise InputError(f"{path} is truncated")
        magic, height, width = HEADER.unpack(header)
        if magic != MAGIC:
            raise InputError(f"{path} does not start with the {MAGIC!r} magic")
        payload = handle.read(4 * height * width)
    if len(payload) != 4 * height * width:
        raise InputError(f"{path} payload is truncated")
    return np.frombuffer(payload, dtype="<f4").reshape(height, width).copy()


def write_overlay(path: str | Path, image: np.ndarray, heatmap: np.ndarray,
                  alpha: float = 0.5) -> None:
    """Blend a colormapped heatmap over an RGB uint8 image and save a PNG."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError("overlay expects an RGB image [H, W, 3]")
    if heatmap.shape != image.shape[:2]:
        raise InputError("heatmap and image dimensions must agree")
    colored = matplotlib.colormaps["viridis"](np.clip(heatmap, 0.0, 1.0))[..., :3]
    blended = (1 - alpha) * image.astype(np.float64) / 255.0 + alpha * colored
    out = np.clip(np.round(blended * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out, mode="RGB").save(path, format="PNG")
