"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only.

Images are float arrays in [0, 1]: shape (H, W) for gray, (H, W, 3) for color.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")

# luminance weights for RGB -> gray
LUMA = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    pass


def decode_pnm(data: bytes) -> np.ndarray:
    m = _HEADER.match(data)
    if not m:
        raise ImageFormatError("not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit images are supported (maxval {maxval})")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    body = data[m.end():m.end() + need]
    if len(body) != need:
        raise ImageFormatError(f"pixel data truncated: {len(body)} of {need} bytes")
    arr = np.frombuffer(body, dtype=np.uint8).reshape((h, w, 3) if channels == 3 else (h, w))
    return arr.astype(np.float64) / 255.0


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode image of shape {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_image(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def write_image(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(img))


def read_labels(path) -> np.ndarray:
    """8-bit PGM as integer class ids (no scaling)."""
    img = decode_pnm(Path(path).read_bytes())
    if img.ndim != 2:
        raise ImageFormatError("label image must be a gray PGM")
    return np.rint(img * 255.0).astype(np.uint8)


def write_labels(path, labels: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(np.asarray(labels, dtype=np.uint8)))


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., :3] @ LUMA
