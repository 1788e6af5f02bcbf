"""8-bit RGB PNG reading/writing and the [-1, 1] <-> [0, 255] pixel mapping."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_unit_range(raw: np.ndarray) -> np.ndarray:
    """Map bytes 0..255 linearly onto [-1, 1] (float32)."""
    return (np.asarray(raw, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def to_bytes(pixels: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_unit_range`, rounding half up and saturating."""
    scaled = (np.asarray(pixels, dtype=np.float64) + 1.0) * 127.5
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def read_rgb(path) -> np.ndarray:
    """``H x W x 3`` uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_mask(path) -> np.ndarray:
    """Boolean ``H x W`` foreground mask (any non-zero pixel is foreground)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def write_rgb(path, chw: np.ndarray) -> Path:
    """Write a ``[3, H, W]`` image in [-1, 1] as an 8-bit RGB PNG."""
    path = Path(path)
    hwc = to_bytes(np.asarray(chw).transpose(1, 2, 0))
    Image.fromarray(hwc).save(path, format="PNG")
    return path


def tile_grid(images: np.ndarray, cols: int, pad: int = 1) -> np.ndarray:
    """Tile ``[N, 3, H, W]`` images row-major into one ``[3, rows*H', cols*W']`` image."""
    n, c, h, w = images.shape
    rows = -(-n // cols)
    grid = np.full((c, rows * (h + pad) + pad, cols * (w + pad) + pad), -1.0, dtype=np.float32)
    for i in range(n):
        r, q = divmod(i, cols)
        y0, x0 = pad + r * (h + pad), pad + q * (w + pad)
        grid[:, y0:y0 + h, x0:x0 + w] = images[i]
    return grid
