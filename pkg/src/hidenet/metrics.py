"""Capacity, quality and robustness measurements."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import color
from .networks import ModelParams, decoder_forward, encoder_forward
from .noise import NoiseKind, NoiseSpec, apply_noise

PSNR_INF = math.inf
SUCCESS_THRESHOLD = 0.95


def decode_bits(m_out) -> np.ndarray:
    """Clamp predictions to [0, 1] and round to hard bits."""
    return np.rint(np.clip(np.asarray(m_out, dtype=np.float64), 0.0, 1.0)).astype(np.uint8)


def bit_accuracy(m_in, m_out) -> float:
    """Fraction of bits of ``m_in`` recovered by the rounded prediction ``m_out``."""
    m_in = np.asarray(m_in)
    m_out = np.asarray(m_out)
    if m_in.shape != m_out.shape:
        raise ValueError(f"message shapes differ: {m_in.shape} vs {m_out.shape}")
    return float(np.mean(decode_bits(m_out) == np.rint(m_in).astype(np.uint8)))


def per_image_accuracy(m_in, m_out) -> np.ndarray:
    m_in = np.asarray(m_in)
    m_out = np.asarray(m_out)
    if m_in.shape != m_out.shape:
        raise ValueError(f"message shapes differ: {m_in.shape} vs {m_out.shape}")
    return np.mean(decode_bits(m_out) == np.rint(m_in).astype(np.uint8), axis=-1)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """PSNR in dB between two 8-bit planes; identical inputs give ``math.inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_INF
    return float(10.0 * np.log10(peak * peak / mse))


def psnr_planes(cover: np.ndarray, encoded: np.ndarray) -> list[float]:
    """Per-plane PSNR (Y, or Y/U/V) of two model-space images after 8-bit quantization."""
    pa = color.yuv_planes_uint8(cover)
    pb = color.yuv_planes_uint8(encoded)
    return [psnr(x, y) for x, y in zip(pa, pb)]


def psnr_image(cover: np.ndarray, encoded: np.ndarray) -> float:
    return psnr(color.yuv_planes_uint8(cover), color.yuv_planes_uint8(encoded))


def bits_per_pixel(length: int, channels: int, height: int, width: int) -> float:
    if min(length, channels, height, width) < 1:
        raise ValueError("bits_per_pixel needs positive arguments")
    return length / (height * width * channels)


def success_rate(accuracies: Sequence[float], threshold: float = SUCCESS_THRESHOLD) -> float:
    """Fraction of images whose bit accuracy reaches ``threshold`` (full-message recovery proxy).

    Accuracies in the ambiguous 0.90-0.95 band count as failures.
    """
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        return 0.0
    if np.any((acc < 0) | (acc > 1)):
        raise ValueError("accuracies must lie in [0, 1]")
    return float(np.mean(acc >= threshold))


# ---------------------------------------------------------------------------
# robustness sweeps


@dataclass
class SweepResult:
    kind: str
    intensities: list[float | None] = field(default_factory=list)
    mean_acc: list[float] = field(default_factory=list)
    std_acc: list[float] = field(default_factory=list)
    n: int = 0
    model: str = ""

    def rows(self):
        for x, m, s in zip(self.intensities, self.mean_acc, self.std_acc):
            yield {"kind": self.kind, "intensity": "" if x is None else x, "mean_acc": m, "std_acc": s, "n": self.n}


def write_sweep_csv(path, results: Sequence[SweepResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["kind", "intensity", "mean_acc", "std_acc", "n"])
        writer.writeheader()
        for res in results:
            writer.writerows(res.rows())


def encode_images(mp: ModelParams, covers: np.ndarray, messages: np.ndarray, batch: int = 64) -> np.ndarray:
    out = []
    with ad.no_grad():
        for i in range(0, len(covers), batch):
            out.append(encoder_forward(mp, covers[i:i + batch], messages[i:i + batch], mode="eval").data)
    return np.concatenate(out)


def decode_images(mp: ModelParams, images, batch: int = 64) -> np.ndarray:
    """Decode a batch array, or a list of differently-sized images one at a time."""
    with ad.no_grad():
        if isinstance(images, np.ndarray):
            return np.concatenate([decoder_forward(mp, images[i:i + batch], mode="eval").data
                                   for i in range(0, len(images), batch)])
        return np.concatenate([decoder_forward(mp, img, mode="eval").data for img in images])


def noised_accuracy(mp: ModelParams, covers: np.ndarray, encoded: np.ndarray, messages: np.ndarray,
                    spec: NoiseSpec, seed: int) -> np.ndarray:
    """Per-image bit accuracy after noising each encoded image with its own rng stream."""
    noised = []
    with ad.no_grad():
        for i in range(len(encoded)):
            rng = np.random.default_rng([seed, i])
            noised.append(apply_noise(spec, covers[i:i + 1], encoded[i:i + 1], rng).data)
    if len({x.shape for x in noised}) == 1:
        preds = decode_images(mp, np.concatenate(noised))
    else:
        preds = decode_images(mp, noised)
    return per_image_accuracy(messages, preds)


def sweep_robustness(mp: ModelParams, covers: np.ndarray, kind, intensities: Sequence[float | None],
                     seed: int = 0, model_name: str = "") -> SweepResult:
    """Bit accuracy of ``mp`` on ``covers`` under ``kind`` at each intensity (BN in eval mode).

    Every image carries one random message, encoded once; noise is drawn from
    a fresh stream per (image, intensity).
    """
    covers = np.asarray(covers, dtype=np.float32)
    if len(covers) == 0:
        raise ValueError("empty evaluation set")
    if len(intensities) == 0:
        raise ValueError("empty intensity grid")
    kind = NoiseKind(kind)
    numeric = [x for x in intensities if x is not None]
    if any(b <= a for a, b in zip(numeric, numeric[1:])):
        raise ValueError("intensities must be strictly increasing")
    rng = np.random.default_rng([seed, 101])
    messages = rng.integers(0, 2, size=(len(covers), mp.header.message_length)).astype(np.float32)
    encoded = encode_images(mp, covers, messages)
    res = SweepResult(kind.value, n=len(covers), model=model_name)
    for j, x in enumerate(intensities):
        spec = NoiseSpec(kind, None if kind in (NoiseKind.IDENTITY, NoiseKind.JPEG_MASK, NoiseKind.JPEG_DROP) else x)
        acc = noised_accuracy(mp, covers, encoded, messages, spec, seed=seed * 1000 + j)
        res.intensities.append(x)
        res.mean_acc.append(float(acc.mean()))
        res.std_acc.append(float(acc.std()))
    return res
