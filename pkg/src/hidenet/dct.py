"""8x8 blockwise DCT expressed as a fixed strided convolution.

The 64 orthonormal DCT-II basis images form the filters of an 8x8 stride-8
convolution; channel ``k`` of the output holds coefficient ``ZIGZAG[k]`` of
every block. The inverse is the matching transpose convolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BLOCK = 8

# ITU-T T.81 Annex K, tables K.1 and K.2
LUMA_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
])
CHROMA_QTABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
])


def zigzag_order(n: int = BLOCK) -> list[tuple[int, int]]:
    """JPEG zigzag scan of an n x n block as (row, col) = (u, v) pairs."""
    order = []
    for s in range(2 * n - 1):
        diag = [(i, s - i) for i in range(n) if 0 <= s - i < n]
        order.extend(diag if s % 2 else diag[::-1])
    return order


ZIGZAG = zigzag_order()


def dct_matrix(n: int = BLOCK) -> np.ndarray:
    """Orthonormal DCT-II matrix; row u is the u-th 1-D basis vector."""
    k = np.arange(n)
    m = np.cos(np.pi * (2 * k[None, :] + 1) * k[:, None] / (2 * n))
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    return m


@dataclass(frozen=True)
class DctBank:
    filters: np.ndarray  # (64, 8, 8), filter k is the basis image for ZIGZAG[k]
    order: tuple[tuple[int, int], ...]

    @property
    def matrix(self) -> np.ndarray:
        """64 x 64 matrix whose columns are the flattened filters."""
        return self.filters.reshape(len(self.order), -1).T

    def weight(self, dtype=np.float32) -> np.ndarray:
        return self.filters[:, None].astype(dtype)


@lru_cache(maxsize=None)
def dct_bank() -> DctBank:
    c = dct_matrix()
    filters = np.stack([np.outer(c[u], c[v]) for u, v in ZIGZAG])
    return DctBank(filters, tuple(ZIGZAG))


def coefficient_grid(values: np.ndarray) -> np.ndarray:
    """Per-channel (zigzag) vector of 64 values -> 8x8 grid indexed by (u, v)."""
    grid = np.zeros((BLOCK, BLOCK), dtype=np.asarray(values).dtype)
    for k, (u, v) in enumerate(ZIGZAG):
        grid[u, v] = values[k]
    return grid


def zigzag_vector(grid: np.ndarray) -> np.ndarray:
    """8x8 grid indexed by (u, v) -> 64-vector in zigzag channel order."""
    return np.array([grid[u, v] for u, v in ZIGZAG])


def dct_blocks(x: Tensor) -> Tensor:
    """(N, C, H, W) with H, W multiples of 8 -> (N, C, 64, H/8, W/8) coefficients."""
    n, c, h, w = x.shape
    if h % BLOCK or w % BLOCK:
        raise ValueError(f"extent {h}x{w} is not a multiple of {BLOCK}")
    bank = Tensor(dct_bank().weight(x.dtype), dtype=x.dtype)
    coeffs = ad.conv2d(ad.reshape(x, (n * c, 1, h, w)), bank, None, stride=BLOCK)
    return ad.reshape(coeffs, (n, c, BLOCK * BLOCK, h // BLOCK, w // BLOCK))


def idct_blocks(coeffs: Tensor) -> Tensor:
    """Inverse of :func:`dct_blocks`."""
    n, c, k, hb, wb = coeffs.shape
    bank = Tensor(dct_bank().weight(coeffs.dtype), dtype=coeffs.dtype)
    img = ad.conv2d_transpose(ad.reshape(coeffs, (n * c, k, hb, wb)), bank, stride=BLOCK)
    return ad.reshape(img, (n, c, hb * BLOCK, wb * BLOCK))


def blockwise_dct(plane: np.ndarray, pad: bool = False) -> np.ndarray:
    """H x W plane -> 64 x H/8 x W/8 coefficients (numpy convenience wrapper).

    With ``pad=True`` extents that are not multiples of 8 are zero-padded
    symmetrically first.
    """
    plane = np.asarray(plane)
    if pad:
        plane = np.pad(plane, padding_for(plane.shape))
    dt = plane.dtype if plane.dtype == np.float64 else np.float32
    with ad.no_grad():
        out = dct_blocks(Tensor(plane[None, None], dtype=dt))
    return out.data[0, 0]


def blockwise_idct(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    dt = coeffs.dtype if coeffs.dtype == np.float64 else np.float32
    with ad.no_grad():
        out = idct_blocks(Tensor(coeffs[None, None], dtype=dt))
    return out.data[0, 0]


def padding_for(shape: tuple[int, int]) -> tuple[tuple[int, int], tuple[int, int]]:
    """Symmetric zero padding bringing each extent up to the next multiple of 8."""
    pads = []
    for extent in shape[-2:]:
        extra = -extent % BLOCK
        pads.append((extra // 2, extra - extra // 2))
    return tuple(pads)
