"""Color conversion and the mapping between 8-bit pixels and model space.

Model space is planar C x H x W float in [-1, 1]. Grayscale maps 0 -> -1 and
255 -> +1. Color images are held as BT.601 full-range YUV with Y mapped the
same way as gray and U, V (each in [-0.5, 0.5]) scaled by 2, so zero chroma
stays at zero.
"""

from __future__ import annotations

import numpy as np

# BT.601 full range (JFIF) analysis matrix, rows Y, U(Cb), V(Cr)
RGB_TO_YUV = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)


def _apply(matrix: np.ndarray, image: np.ndarray) -> np.ndarray:
    out = np.einsum("ij,jhw->ihw", matrix, image.astype(np.float64))
    return out.astype(image.dtype) if image.dtype.kind == "f" else out


def rgb_to_yuv(rgb: np.ndarray) -> np.ndarray:
    """3 x H x W RGB in [0, 1] -> 3 x H x W YUV, Y in [0, 1], U/V centred on 0."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W image, got {rgb.shape}")
    return _apply(RGB_TO_YUV, rgb)


def yuv_to_rgb(yuv: np.ndarray) -> np.ndarray:
    yuv = np.asarray(yuv)
    if yuv.ndim != 3 or yuv.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W image, got {yuv.shape}")
    return _apply(YUV_TO_RGB, yuv)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(unit: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 with round-half-away-from-zero and saturation."""
    return np.clip(_round_half_away(np.asarray(unit, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def model_to_pixels(image: np.ndarray) -> np.ndarray:
    """Model-space C x H x W -> uint8 pixels (H x W for gray, H x W x 3 RGB for color).

    Values are clamped to [-1, 1] first.
    """
    x = np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0)
    if x.shape[0] == 1:
        return to_uint8((x[0] + 1.0) / 2.0)
    if x.shape[0] == 3:
        yuv = np.stack([(x[0] + 1.0) / 2.0, x[1] / 2.0, x[2] / 2.0])
        return to_uint8(yuv_to_rgb(yuv)).transpose(1, 2, 0)
    raise ValueError(f"unsupported channel count {x.shape[0]}")


def pixels_to_model(pixels: np.ndarray, channels: int | None = None) -> np.ndarray:
    """uint8 pixels (H x W or H x W x 3) -> float32 model-space C x H x W."""
    px = np.asarray(pixels)
    if channels is None:
        channels = 1 if px.ndim == 2 else 3
    if channels == 1:
        if px.ndim == 3:
            px = to_uint8(np.einsum("hwc,c->hw", px[..., :3] / 255.0, RGB_TO_YUV[0]))
        return (px.astype(np.float32) / np.float32(127.5) - 1.0)[None].astype(np.float32)
    if channels != 3:
        raise ValueError(f"unsupported channel count {channels}")
    if px.ndim == 2:
        px = np.repeat(px[..., None], 3, axis=2)
    yuv = rgb_to_yuv(px[..., :3].transpose(2, 0, 1).astype(np.float64) / 255.0)
    return np.stack([yuv[0] * 2.0 - 1.0, yuv[1] * 2.0, yuv[2] * 2.0]).astype(np.float32)


def yuv_planes_uint8(image: np.ndarray) -> np.ndarray:
    """Model-space image -> 8-bit planes used for PSNR (Y; or Y, Cb, Cr offset by 128)."""
    x = np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0)
    if x.shape[0] == 1:
        return to_uint8((x[0] + 1.0) / 2.0)[None]
    if x.shape[0] == 3:
        return np.stack([to_uint8((x[0] + 1.0) / 2.0),
                         to_uint8(x[1] / 2.0 + 128.0 / 255.0),
                         to_uint8(x[2] / 2.0 + 128.0 / 255.0)])
    raise ValueError(f"unsupported channel count {x.shape[0]}")
