"""Image file io: 8-bit PNG for renders/masks, PFM for float depth maps.

PFM is the plain portable-float-map format: a short ASCII header (``PF`` for
3-channel, ``Pf`` for grayscale, then width/height, then a scale whose sign
encodes endianness) followed by rows of raw float32, bottom row first.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

__all__ = [
    "to_uint8",
    "save_png",
    "load_png",
    "save_mask_png",
    "load_mask_png",
    "save_pfm",
    "load_pfm",
]


def to_uint8(img):
    """Float image in [0, 1] to uint8 with round-half-away clipping."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def save_png(path, img):
    """Write a grayscale (H, W) or color (H, W, 3) image as 8-bit PNG."""
    arr = to_uint8(img)
    if arr.ndim not in (2, 3):
        raise ValueError("expected (H, W) or (H, W, 3) image")
    Image.fromarray(arr).save(path)


def load_png(path):
    """Read a PNG back as float32 in [0, 1]."""
    return np.asarray(Image.open(path), dtype=np.float32) / 255.0


def save_mask_png(path, mask):
    """Write a boolean (H, W) mask as a 1-bit PNG."""
    mask = np.asarray(mask, dtype=bool)
    Image.fromarray(mask).convert("1").save(path)


def load_mask_png(path):
    return np.asarray(Image.open(path).convert("L")) > 127


def save_pfm(path, data):
    """Write float32 (H, W) or (H, W, 3) data as little-endian PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError("expected (H, W) or (H, W, 3) float data")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale: little-endian
        f.write(np.flipud(data).astype("<f4").tobytes())


def load_pfm(path):
    """Read a PFM file back to float32 (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: header {header!r}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        data = np.frombuffer(f.read(count * 4), dtype=dtype, count=count)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(data.reshape(shape)).astype(np.float32)
