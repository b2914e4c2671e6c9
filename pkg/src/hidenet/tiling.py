"""Encode long messages into large images one model-sized patch at a time.

Patches are visited in raster order (left to right, then top to bottom);
patch ``k`` carries message bits ``[k*L, (k+1)*L)``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .networks import ModelParams, decoder_forward, encoder_forward


def patch_grid(mp: ModelParams, shape: tuple[int, ...]) -> tuple[int, int]:
    c, h, w = shape
    ph, pw = mp.header.height, mp.header.width
    if c != mp.header.channels:
        raise ValueError(f"image has {c} channels, model expects {mp.header.channels}")
    if h % ph or w % pw:
        raise ValueError(f"image extent {h}x{w} is not a multiple of the {ph}x{pw} patch size")
    return h // ph, w // pw


def capacity(mp: ModelParams, shape: tuple[int, ...]) -> int:
    rows, cols = patch_grid(mp, shape)
    return rows * cols * mp.header.message_length


def to_patches(image: np.ndarray, ph: int, pw: int) -> np.ndarray:
    c, h, w = image.shape
    return (image.reshape(c, h // ph, ph, w // pw, pw)
            .transpose(1, 3, 0, 2, 4).reshape(-1, c, ph, pw))


def from_patches(patches: np.ndarray, rows: int, cols: int) -> np.ndarray:
    _, c, ph, pw = patches.shape
    return patches.reshape(rows, cols, c, ph, pw).transpose(2, 0, 3, 1, 4).reshape(c, rows * ph, cols * pw)


def tiled_encode(mp: ModelParams, image: np.ndarray, bits) -> np.ndarray:
    image = np.asarray(image, dtype=np.float32)
    rows, cols = patch_grid(mp, image.shape)
    length = mp.header.message_length
    bits = np.asarray(bits, dtype=np.float32).ravel()
    if bits.size != rows * cols * length:
        raise ValueError(f"message has {bits.size} bits; this image holds exactly {rows * cols * length}")
    patches = to_patches(image, mp.header.height, mp.header.width)
    with ad.no_grad():
        encoded = encoder_forward(mp, patches, bits.reshape(rows * cols, length), mode="eval").data
    return from_patches(encoded, rows, cols)


def tiled_decode(mp: ModelParams, image: np.ndarray) -> np.ndarray:
    """Real-valued predictions for every patch, concatenated in raster order."""
    image = np.asarray(image, dtype=np.float32)
    rows, cols = patch_grid(mp, image.shape)
    patches = to_patches(image, mp.header.height, mp.header.width)
    with ad.no_grad():
        return decoder_forward(mp, patches, mode="eval").data.reshape(-1)
