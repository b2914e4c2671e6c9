"""Joint training of encoder/decoder against a noise schedule and an adversary.

Each step first updates the adversary on cover vs. encoded images, then
updates encoder and decoder on

    total = L_M + lambda_i * L_I + lambda_g * L_G

GAN convention: the adversary outputs P(encoded). It minimizes the binary
cross-entropy of labelling covers 0 and encoded images 1; the encoder
minimizes -log(1 - A(I_en)), pushing its output toward the "cover" label.
"""

from __future__ import annotations

import csv
import os
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import metrics
from .autodiff import Tensor
from .networks import (ArchHeader, ModelParams, adversary_logits, decoder_forward, encoder_forward,
                       init_parameters)
from .noise import NoiseKind, NoiseSpec, apply_noise
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

# rng stream ids, combined with the run seed
_SPLIT, _SHUFFLE, _MESSAGE, _SCHEDULE, _NOISE, _EVAL = range(6)

COMBINED_SCHEDULE = tuple(NoiseSpec.parse(s) for s in (
    "dropout:0.3", "dropout:0.7", "cropout:0.3", "cropout:0.7", "crop:0.3", "crop:0.7",
    "gaussian:2", "gaussian:4", "jpeg_drop", "jpeg_mask", "identity",
))


@dataclass
class TrainConfig:
    header: ArchHeader
    lambda_i: float = 0.7
    lambda_g: float = 0.001
    lr: float = 1e-3
    batch_size: int = 12
    epochs: int = 200
    schedule: tuple[NoiseSpec, ...] = (NoiseSpec(NoiseKind.IDENTITY),)
    seed: int = 0
    max_steps: int | None = None
    holdout_fraction: float = 0.1
    checkpoint_every: int = 0
    train_adversary: bool = True
    grad_clip: float | None = None

    def __post_init__(self):
        self.schedule = tuple(s if isinstance(s, NoiseSpec) else NoiseSpec.parse(s) for s in self.schedule)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.schedule:
            raise ValueError("noise schedule must not be empty")
        if any(not s.differentiable for s in self.schedule):
            raise ValueError("real JPEG is not differentiable and cannot be used for training")
        if self.lambda_i < 0 or self.lambda_g < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")

    def schedule_digest(self) -> str:
        text = ";".join(str(s) for s in self.schedule)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class LossBreakdown:
    """Per-batch losses. Fields are scalar Tensors from :func:`compute_losses`, floats after :meth:`item`."""

    l_m: object
    l_i: object
    l_g: object
    l_a: object
    total: object

    def item(self) -> LossBreakdown:
        def f(x):
            return float(x.item()) if isinstance(x, Tensor) else float(x)
        return LossBreakdown(f(self.l_m), f(self.l_i), f(self.l_g), f(self.l_a), f(self.total))


def _pick(logp: Tensor, column: int) -> Tensor:
    """Mean over the batch of ``logp[:, column]``."""
    onehot = np.zeros(logp.shape, dtype=logp.dtype)
    onehot[:, column] = 1
    return ad.scale(ad.tensor_sum(ad.mul(logp, onehot)), 1.0 / logp.shape[0])


def generator_adversarial_loss(logits_encoded: Tensor) -> Tensor:
    """-log(1 - A(I_en)), averaged over the batch."""
    return ad.neg(_pick(ad.log_softmax(logits_encoded), 0))


def adversary_loss(logits_cover: Tensor, logits_encoded: Tensor) -> Tensor:
    """BCE of labelling covers 0 and encoded images 1, averaged over the batch."""
    return ad.neg(ad.add(_pick(ad.log_softmax(logits_cover), 0), _pick(ad.log_softmax(logits_encoded), 1)))


def compute_losses(cover, encoded: Tensor, m_in, m_out: Tensor, logits_encoded: Tensor | None,
                   logits_cover: Tensor | None, cfg: TrainConfig) -> LossBreakdown:
    """Assemble all loss terms; adversary logits may be ``None`` (terms become zero)."""
    cover = cover if isinstance(cover, Tensor) else Tensor(cover, dtype=encoded.dtype)
    m_in = m_in if isinstance(m_in, Tensor) else Tensor(m_in, dtype=m_out.dtype)
    l_i = ad.mean(ad.square(ad.sub(encoded, cover)))
    l_m = ad.mean(ad.square(ad.sub(m_out, m_in)))
    zero = Tensor(np.zeros((), dtype=encoded.dtype), dtype=encoded.dtype)
    l_g = generator_adversarial_loss(logits_encoded) if logits_encoded is not None else zero
    l_a = adversary_loss(logits_cover, logits_encoded) if logits_cover is not None and logits_encoded is not None else zero
    total = ad.add(l_m, ad.scale(l_i, cfg.lambda_i))
    if cfg.lambda_g:
        total = ad.add(total, ad.scale(l_g, cfg.lambda_g))
    return LossBreakdown(l_m, l_i, l_g, l_a, total)


def sample_message(length: int, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """I.i.d. fair bits as float32, shape (L,) or (batch, L)."""
    if length < 1:
        raise ValueError("message length must be >= 1")
    shape = (length,) if batch is None else (batch, length)
    return rng.integers(0, 2, size=shape).astype(np.float32)


@dataclass
class Optimizers:
    generator: AdamState
    adversary: AdamState

    @classmethod
    def create(cls, lr: float) -> Optimizers:
        return cls(AdamState(lr=lr), AdamState(lr=lr))


def _clip(params: dict[str, Tensor], max_norm: float) -> None:
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm


def _clear(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def train_step(mp: ModelParams, cover: np.ndarray, messages: np.ndarray, spec: NoiseSpec,
               cfg: TrainConfig, opts: Optimizers, rng: np.random.Generator) -> LossBreakdown:
    """One adversary update followed by one encoder/decoder update; returns float losses."""
    if not spec.differentiable:
        raise ValueError(f"cannot train through non-differentiable channel {spec}")
    gen_params = {**mp.encoder, **mp.decoder}
    adv_params = mp.adversary
    cover_t = Tensor(cover)
    msg_t = Tensor(messages)
    try:
        encoded = encoder_forward(mp, cover_t, msg_t, mode="train")
        l_a = l_g_value = 0.0
        if cfg.train_adversary:
            _clear(adv_params)
            logits_co = adversary_logits(mp, cover_t, mode="train")
            logits_en = adversary_logits(mp, encoded.detach(), mode="train")
            loss_a = adversary_loss(logits_co, logits_en)
            ad.backward(loss_a, adv_params.values())
            adam_step(adv_params, opts.adversary)
            _clear(adv_params)
            l_a = loss_a.item()
            with ad.no_grad():
                l_g_value = generator_adversarial_loss(logits_en).item()

        _clear(gen_params)
        noised = apply_noise(spec, cover_t, encoded, rng)
        m_out = decoder_forward(mp, noised, mode="train")
        logits = None
        if cfg.lambda_g and cfg.train_adversary:
            logits = adversary_logits(mp, encoded, mode="train")
        losses = compute_losses(cover_t, encoded, msg_t, m_out, logits, None, cfg)
        ad.backward(losses.total, gen_params.values())
        _clear(adv_params)
        if cfg.grad_clip:
            _clip(gen_params, cfg.grad_clip)
        adam_step(gen_params, opts.generator)
        _clear(gen_params)
    except FloatingPointError as exc:
        raise FloatingPointError(f"training diverged (noise={spec}, adam step {opts.generator.t}): {exc}") from exc
    out = losses.item()
    out.l_a = l_a
    if logits is None:
        out.l_g = l_g_value
    return out


class ScheduleSampler:
    """Uniform random choice of one noise spec per minibatch."""

    def __init__(self, schedule: Sequence[NoiseSpec], seed: int):
        self.schedule = tuple(schedule)
        self.rng = np.random.default_rng([seed, _SCHEDULE])

    def next(self) -> NoiseSpec:
        if len(self.schedule) == 1:
            return self.schedule[0]
        return self.schedule[int(self.rng.integers(len(self.schedule)))]

    def draw(self, n: int) -> list[NoiseSpec]:
        return [self.next() for _ in range(n)]


@dataclass
class EpochLog:
    epoch: int
    steps: int
    l_m: float
    l_i: float
    l_g: float
    l_a: float
    total: float
    bit_acc_holdout: float
    psnr_holdout: float
    noise_histogram: dict[str, int] = field(default_factory=dict)

    def csv_row(self) -> dict:
        hist = ";".join(f"{k}={v}" for k, v in sorted(self.noise_histogram.items()))
        return {"epoch": self.epoch, "L_M": f"{self.l_m:.8f}", "L_I": f"{self.l_i:.8f}",
                "L_G": f"{self.l_g:.8f}", "L_A": f"{self.l_a:.8f}",
                "bit_acc_holdout": f"{self.bit_acc_holdout:.6f}", "psnr_holdout": f"{self.psnr_holdout:.4f}",
                "noise_kind_histogram": hist}


METRICS_COLUMNS = ["epoch", "L_M", "L_I", "L_G", "L_A", "bit_acc_holdout", "psnr_holdout", "noise_kind_histogram"]


def append_metrics_row(path, row: EpochLog) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        if new:
            writer.writeheader()
        writer.writerow(row.csv_row())


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochLog]
    train_idx: np.ndarray
    holdout_idx: np.ndarray
    steps: int


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train, holdout) split; holdout takes ``fraction`` of the images (at least one if n > 1)."""
    perm = np.random.default_rng([seed, _SPLIT]).permutation(n)
    k = int(round(n * fraction))
    if fraction > 0 and n > 1:
        k = max(k, 1)
    return np.sort(perm[k:]), np.sort(perm[:k])


def evaluate_holdout(mp: ModelParams, covers: np.ndarray, schedule: Sequence[NoiseSpec], seed: int) -> tuple[float, float]:
    """(bit accuracy averaged over the distinct schedule entries, mean cover/encoded PSNR)."""
    if len(covers) == 0:
        return float("nan"), float("nan")
    rng = np.random.default_rng([seed, _EVAL])
    msgs = sample_message(mp.header.message_length, rng, len(covers))
    encoded = metrics.encode_images(mp, covers, msgs)
    specs = list(dict.fromkeys(schedule))
    accs = [metrics.noised_accuracy(mp, covers, encoded, msgs, s, seed=seed + 7919 * k).mean()
            for k, s in enumerate(specs)]
    psnrs = [metrics.psnr_image(c, e) for c, e in zip(covers, encoded)]
    return float(np.mean(accs)), float(np.mean(psnrs))


def train_loop(cfg: TrainConfig, images: np.ndarray, params: ModelParams | None = None,
               metrics_path=None, checkpoint_fn: Callable[[int, ModelParams], None] | None = None,
               progress: bool = False) -> TrainResult:
    """Train on ``images`` (N, C, H, W, model space) for ``cfg.epochs`` or ``cfg.max_steps``."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or len(images) == 0:
        raise ValueError("images must be a non-empty (N, C, H, W) array")
    if images.shape[1:] != cfg.header.image_shape:
        raise ValueError(f"images are {images.shape[1:]} but the header says {cfg.header.image_shape}")
    mp = params if params is not None else init_parameters(cfg.header, cfg.seed)
    train_idx, holdout_idx = split_indices(len(images), cfg.holdout_fraction, cfg.seed)
    opts = Optimizers.create(cfg.lr)
    shuffle_rng = np.random.default_rng([cfg.seed, _SHUFFLE])
    msg_rng = np.random.default_rng([cfg.seed, _MESSAGE])
    sampler = ScheduleSampler(cfg.schedule, cfg.seed)
    history: list[EpochLog] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(train_idx)
        sums = np.zeros(5)
        batches = 0
        hist: Counter = Counter()
        for start in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            idx = order[start:start + cfg.batch_size]
            spec = sampler.next()
            hist[str(spec)] += 1
            msgs = sample_message(cfg.header.message_length, msg_rng, len(idx))
            noise_rng = np.random.default_rng([cfg.seed, _NOISE, step])
            lb = train_step(mp, images[idx], msgs, spec, cfg, opts, noise_rng)
            sums += (lb.l_m, lb.l_i, lb.l_g, lb.l_a, lb.total)
            batches += 1
            step += 1
        if batches == 0:
            break
        means = sums / batches
        acc, psnr_h = evaluate_holdout(mp, images[holdout_idx], cfg.schedule, cfg.seed)
        entry = EpochLog(epoch, step, *means, bit_acc_holdout=acc, psnr_holdout=psnr_h,
                         noise_histogram=dict(hist))
        history.append(entry)
        if metrics_path is not None:
            append_metrics_row(metrics_path, entry)
        if progress:
            log.info("epoch %d step %d L_M %.4f L_I %.5f acc %.3f psnr %.2f", epoch, step, entry.l_m,
                     entry.l_i, acc, psnr_h)
        if checkpoint_fn is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            checkpoint_fn(epoch, mp)
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return TrainResult(mp, history, train_idx, holdout_idx, step)
