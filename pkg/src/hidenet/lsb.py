"""Least-significant-bit embedding, the classical non-learned baseline.

One bit per 8-bit sample, written in raster order of the array as given
(row-major, channels innermost for H x W x 3 images).
"""

from __future__ import annotations

import numpy as np


def capacity(image: np.ndarray) -> int:
    return int(np.asarray(image).size)


def lsb_encode(image: np.ndarray, bits) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise TypeError("LSB embedding works on uint8 images")
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size > image.size:
        raise ValueError(f"message of {bits.size} bits exceeds capacity {image.size}")
    if np.any(bits > 1):
        raise ValueError("message must contain only 0/1")
    flat = image.ravel().copy()
    flat[:bits.size] = (flat[:bits.size] & 0xFE) | bits
    return flat.reshape(image.shape)


def lsb_decode(image: np.ndarray, length: int | None = None) -> np.ndarray:
    flat = np.asarray(image, dtype=np.uint8).ravel()
    if length is None:
        length = flat.size
    if length > flat.size:
        raise ValueError(f"requested {length} bits from an image holding {flat.size}")
    return flat[:length] & 1
