"""Distortion channels placed between the encoder and the decoder.

Every channel except real JPEG is built from autodiff ops, so gradients flow
from the noised image back to the encoded image. Channels that mix pixels
(dropout, cropout) take the untouched cover image as their second input.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import autodiff as ad
from . import color, dct
from .autodiff import Tensor


class NoiseKind(str, enum.Enum):
    IDENTITY = "identity"
    DROPOUT = "dropout"
    CROPOUT = "cropout"
    CROP = "crop"
    GAUSSIAN = "gaussian"
    JPEG_MASK = "jpeg_mask"
    JPEG_DROP = "jpeg_drop"
    REAL_JPEG = "jpeg"


_ALIASES = {
    "jpegmask": NoiseKind.JPEG_MASK, "jpeg-mask": NoiseKind.JPEG_MASK,
    "jpegdrop": NoiseKind.JPEG_DROP, "jpeg-drop": NoiseKind.JPEG_DROP,
    "real_jpeg": NoiseKind.REAL_JPEG, "realjpeg": NoiseKind.REAL_JPEG,
    "blur": NoiseKind.GAUSSIAN, "none": NoiseKind.IDENTITY,
}
_FRACTION_KINDS = (NoiseKind.DROPOUT, NoiseKind.CROPOUT, NoiseKind.CROP)
_NO_INTENSITY = (NoiseKind.IDENTITY, NoiseKind.JPEG_MASK, NoiseKind.JPEG_DROP)


def parse_kind(name: str) -> NoiseKind:
    name = name.strip().lower()
    try:
        return _ALIASES.get(name) or NoiseKind(name)
    except ValueError:
        raise ValueError(f"unknown noise kind {name!r}") from None


@dataclass(frozen=True)
class NoiseSpec:
    """A channel kind plus its intensity: keep-fraction p, blur sigma or JPEG quality Q."""

    kind: NoiseKind
    intensity: float | None = None

    def __post_init__(self):
        kind = NoiseKind(self.kind)
        object.__setattr__(self, "kind", kind)
        x = self.intensity
        if kind in _NO_INTENSITY:
            if x is not None:
                raise ValueError(f"{kind.value} takes no intensity")
            return
        if x is None:
            raise ValueError(f"{kind.value} needs an intensity")
        x = float(x)
        object.__setattr__(self, "intensity", x)
        if kind in _FRACTION_KINDS and not 0.0 < x <= 1.0:
            raise ValueError(f"{kind.value} keep fraction must lie in (0, 1], got {x}")
        if kind is NoiseKind.GAUSSIAN and not x > 0.0:
            raise ValueError(f"gaussian sigma must be positive, got {x}")
        if kind is NoiseKind.REAL_JPEG and not 0.0 < x <= 100.0:
            raise ValueError(f"jpeg quality must lie in (0, 100], got {x}")

    @property
    def differentiable(self) -> bool:
        return self.kind is not NoiseKind.REAL_JPEG

    @classmethod
    def parse(cls, text: str) -> NoiseSpec:
        """Parse ``kind`` or ``kind:intensity`` (e.g. ``dropout:0.3``, ``jpeg_mask``)."""
        name, _, value = text.strip().partition(":")
        return cls(parse_kind(name), float(value) if value.strip() else None)

    def with_intensity(self, value: float | None) -> NoiseSpec:
        return NoiseSpec(self.kind, None if self.kind in _NO_INTENSITY else value)

    def __str__(self) -> str:
        if self.intensity is None:
            return self.kind.value
        return f"{self.kind.value}:{self.intensity:g}"


# ---------------------------------------------------------------------------
# geometry helpers


def window_side(p: float, extent: int) -> int:
    """Side of a square window covering a fraction ``p`` of an extent x extent image."""
    side = int(round(math.sqrt(p) * extent))
    if side < 1:
        raise ValueError(f"keep fraction {p} leaves an empty window on extent {extent}")
    return min(side, extent)


def _windows(rng: np.random.Generator, n: int, h: int, w: int, sh: int, sw: int) -> list[tuple[int, int]]:
    tops = rng.integers(0, h - sh + 1, size=n)
    lefts = rng.integers(0, w - sw + 1, size=n)
    return [(int(t), int(l)) for t, l in zip(tops, lefts)]


def _mix(keep: np.ndarray, cover: Tensor, encoded: Tensor) -> Tensor:
    """keep * encoded + (1 - keep) * cover with a constant 0/1 mask."""
    keep = keep.astype(encoded.dtype)
    return ad.add(ad.mul(encoded, keep), ad.mul(cover, 1 - keep))


# ---------------------------------------------------------------------------
# gaussian blur


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    r = int(math.ceil(3 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Square normalized kernel of side 2*ceil(3*sigma)+1."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    r = int(math.ceil(3 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(x: Tensor, sigma: float) -> Tensor:
    """Blur each channel with replicate edges; applied as two 1-D passes (the kernel is separable)."""
    n, c, h, w = x.shape
    k1 = gaussian_kernel_1d(sigma)
    r = (len(k1) - 1) // 2
    flat = ad.reshape(x, (n * c, 1, h, w))
    padded = ad.pad(flat, (r, r), mode="edge")
    rows = Tensor(k1.reshape(1, 1, 1, -1), dtype=x.dtype)
    cols = Tensor(k1.reshape(1, 1, -1, 1), dtype=x.dtype)
    out = ad.conv2d(ad.conv2d(padded, rows), cols)
    return ad.reshape(out, (n, c, h, w))


# ---------------------------------------------------------------------------
# JPEG approximations


def _plane_rules(channels: int) -> list[str]:
    if channels == 1:
        return ["luma"]
    if channels == 3:
        return ["luma", "chroma", "chroma"]
    raise ValueError(f"JPEG channels need 1 (Y) or 3 (YUV) channels, got {channels}")


def jpeg_mask_vector(rule: str) -> np.ndarray:
    """0/1 keep flags in zigzag channel order: a 5x5 (luma) or 3x3 (chroma) low-frequency corner."""
    keep = 5 if rule == "luma" else 3
    return np.array([1.0 if u < keep and v < keep else 0.0 for u, v in dct.ZIGZAG])


def jpeg_drop_probabilities(rule: str) -> np.ndarray:
    """Zigzag-ordered drop probability min(1, q/q_max - q_min/q_max), DC never dropped."""
    table = dct.LUMA_QTABLE if rule == "luma" else dct.CHROMA_QTABLE
    q = dct.zigzag_vector(table).astype(np.float64)
    p = np.minimum(1.0, q / q.max() - q.min() / q.max())
    p[0] = 0.0
    return p


def _pad_to_blocks(x: Tensor) -> tuple[Tensor, tuple]:
    pads = dct.padding_for(x.shape)
    if pads == ((0, 0), (0, 0)):
        return x, pads
    (pt, pb), (pl, pr) = pads
    return ad.pad(x, (pt, pl), (pb, pr)), pads


def _unpad(x: Tensor, pads, h: int, w: int) -> Tensor:
    if pads == ((0, 0), (0, 0)):
        return x
    return ad.crop(x, pads[0][0], pads[1][0], h, w)


def _dct_filter(x: Tensor, keep_fn) -> Tensor:
    n, c, h, w = x.shape
    rules = _plane_rules(c)
    xp, pads = _pad_to_blocks(x)
    coeffs = dct.dct_blocks(xp)
    keep = keep_fn(rules, coeffs.shape).astype(x.dtype)
    out = dct.idct_blocks(ad.mul(coeffs, keep))
    return _unpad(out, pads, h, w)


def jpeg_mask(x: Tensor) -> Tensor:
    """Zero every DCT coefficient outside the low-frequency corner of its plane."""
    def keep(rules, shape):
        vec = np.stack([jpeg_mask_vector(r) for r in rules])
        return vec[None, :, :, None, None]
    return _dct_filter(x, keep)


def jpeg_drop(x: Tensor, rng: np.random.Generator) -> Tensor:
    """Zero each coefficient of each block independently with its quantization-derived probability."""
    def keep(rules, shape):
        probs = np.stack([jpeg_drop_probabilities(r) for r in rules])[None, :, :, None, None]
        return (rng.random(shape) >= probs).astype(np.float64)
    return _dct_filter(x, keep)


# ---------------------------------------------------------------------------
# real JPEG


def real_jpeg_roundtrip(pixels: np.ndarray, quality: float, subsampling: int = 0) -> np.ndarray:
    """Encode then decode 8-bit pixels (H x W gray or H x W x 3 RGB) with libjpeg via Pillow."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise TypeError("real JPEG needs uint8 pixels")
    if not 0 < quality <= 100:
        raise ValueError(f"jpeg quality must lie in (0, 100], got {quality}")
    mode = "L" if pixels.ndim == 2 else "RGB"
    buf = io.BytesIO()
    try:
        Image.fromarray(pixels, mode=mode).save(buf, format="JPEG", quality=int(round(quality)),
                                                subsampling=subsampling)
        buf.seek(0)
        with Image.open(buf) as im:
            out = np.asarray(im.convert(mode))
    except (OSError, ValueError) as exc:
        raise RuntimeError(f"JPEG codec failed: {exc}") from exc
    return out


def real_jpeg(x: Tensor, quality: float) -> Tensor:
    """Model-space batch -> 8-bit -> JPEG at ``quality`` -> model space. Not differentiable."""
    if ad.is_grad_enabled() and x.requires_grad:
        raise RuntimeError("real JPEG is not differentiable; call it under no_grad on detached images")
    c = x.shape[1]
    out = [color.pixels_to_model(real_jpeg_roundtrip(color.model_to_pixels(img), quality), c)
           for img in x.data]
    return Tensor(np.stack(out), dtype=x.dtype)


# ---------------------------------------------------------------------------
# dispatch


def apply_noise(spec: NoiseSpec, cover, encoded, rng: np.random.Generator) -> Tensor:
    """Noise a batch of encoded images (N, C, H, W); ``cover`` supplies replacement pixels."""
    encoded = encoded if isinstance(encoded, Tensor) else Tensor(encoded)
    cover = cover if isinstance(cover, Tensor) else Tensor(cover, dtype=encoded.dtype)
    if cover.shape != encoded.shape:
        raise ValueError(f"cover {cover.shape} and encoded {encoded.shape} differ in shape")
    n, c, h, w = encoded.shape
    kind, p = spec.kind, spec.intensity

    if kind is NoiseKind.IDENTITY:
        return encoded
    if kind is NoiseKind.DROPOUT:
        keep = rng.random((n, 1, h, w)) < p
        return _mix(np.broadcast_to(keep, encoded.shape), cover, encoded)
    if kind is NoiseKind.CROPOUT:
        sh, sw = window_side(p, h), window_side(p, w)
        keep = np.zeros((n, 1, h, w), dtype=bool)
        for i, (t, l) in enumerate(_windows(rng, n, h, w, sh, sw)):
            keep[i, :, t:t + sh, l:l + sw] = True
        return _mix(np.broadcast_to(keep, encoded.shape), cover, encoded)
    if kind is NoiseKind.CROP:
        sh, sw = window_side(p, h), window_side(p, w)
        return ad.crop_windows(encoded, _windows(rng, n, h, w, sh, sw), sh, sw)
    if kind is NoiseKind.GAUSSIAN:
        return gaussian_blur(encoded, p)
    if kind is NoiseKind.JPEG_MASK:
        return jpeg_mask(encoded)
    if kind is NoiseKind.JPEG_DROP:
        return jpeg_drop(encoded, rng)
    return real_jpeg(encoded, p)
