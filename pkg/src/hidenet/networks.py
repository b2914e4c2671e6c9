"""Encoder, decoder and adversary networks built from Conv-BN-ReLU blocks.

All forward functions take batched NCHW tensors; a single C x H x W image is
promoted to a batch of one. Parameters live in one flat name -> Tensor map,
prefixed ``encoder.``, ``decoder.`` or ``adversary.``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Tensor

FILTERS = 64
ENCODER_BLOCKS = 4
DECODER_BLOCKS = 7
ADVERSARY_BLOCKS = 3


@dataclass(frozen=True)
class ArchHeader:
    channels: int
    height: int
    width: int
    message_length: int

    def __post_init__(self):
        for name in ("channels", "height", "width", "message_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass
class ModelParams:
    header: ArchHeader
    params: dict[str, Tensor] = field(default_factory=dict)
    stats: dict[str, RunningStats] = field(default_factory=dict)

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    @property
    def encoder(self) -> dict[str, Tensor]:
        return self.group("encoder")

    @property
    def decoder(self) -> dict[str, Tensor]:
        return self.group("decoder")

    @property
    def adversary(self) -> dict[str, Tensor]:
        return self.group("adversary")

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every persistent array (weights and running statistics), sorted by name."""
        out = {k: v.data for k, v in self.params.items()}
        for k, s in self.stats.items():
            out[k + ".running_mean"] = s.mean
            out[k + ".running_var"] = s.var
        return dict(sorted(out.items()))


def block_names(header: ArchHeader) -> list[tuple[str, int, int]]:
    """(prefix, in_channels, out_channels) for every Conv-BN-ReLU block."""
    c, length = header.channels, header.message_length
    blocks = []
    for i in range(ENCODER_BLOCKS):
        blocks.append((f"encoder.block{i}", c if i == 0 else FILTERS, FILTERS))
    blocks.append(("encoder.fuse", FILTERS + length + c, FILTERS))
    for i in range(DECODER_BLOCKS):
        blocks.append((f"decoder.block{i}", c if i == 0 else FILTERS, FILTERS))
    blocks.append((f"decoder.block{DECODER_BLOCKS}", FILTERS, length))
    for i in range(ADVERSARY_BLOCKS):
        blocks.append((f"adversary.block{i}", c if i == 0 else FILTERS, FILTERS))
    return blocks


def init_parameters(header: ArchHeader, seed: int, dtype=np.float32) -> ModelParams:
    """He-normal convolution weights, unit BN scale, zero BN shift, all from ``seed``."""
    rng = np.random.default_rng(seed)
    mp = ModelParams(header)

    def he(shape, fan_in, gain=2.0):
        return Tensor(rng.standard_normal(shape) * np.sqrt(gain / fan_in), requires_grad=True, dtype=dtype)

    def const(shape, value):
        return Tensor(np.full(shape, value), requires_grad=True, dtype=dtype)

    c, length = header.channels, header.message_length
    for prefix, cin, cout in block_names(header):
        mp.params[prefix + ".conv.weight"] = he((cout, cin, 3, 3), cin * 9)
        mp.params[prefix + ".bn.scale"] = const((cout,), 1.0)
        mp.params[prefix + ".bn.shift"] = const((cout,), 0.0)
        mp.stats[prefix + ".bn"] = RunningStats.fresh(cout, dtype)
    mp.params["encoder.final.weight"] = he((c, FILTERS, 1, 1), FILTERS, gain=1.0)
    mp.params["encoder.final.bias"] = const((c,), 0.0)
    mp.params["decoder.linear.weight"] = he((length, length), length, gain=1.0)
    mp.params["decoder.linear.bias"] = const((length,), 0.0)
    mp.params["adversary.linear.weight"] = he((FILTERS, 2), FILTERS, gain=1.0)
    mp.params["adversary.linear.bias"] = const((2,), 0.0)
    return mp


def conv_bn_relu(mp: ModelParams, prefix: str, x: Tensor, mode: str) -> Tensor:
    p = mp.params
    y = ad.conv2d(x, p[prefix + ".conv.weight"], None, stride=1, padding=1)
    y = ad.batchnorm(y, p[prefix + ".bn.scale"], p[prefix + ".bn.shift"], mp.stats[prefix + ".bn"], mode)
    return ad.relu(y)


def _batched(x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    return ad.reshape(x, (1,) + x.shape) if x.ndim == 3 else x


def encoder_forward(mp: ModelParams, cover, message, mode: str = "train", trace: dict | None = None) -> Tensor:
    """Embed ``message`` (N, L) bits in ``cover`` (N, C, H, W); returns the encoded image batch."""
    h = mp.header
    cover = _batched(cover)
    message = message if isinstance(message, Tensor) else Tensor(message, dtype=cover.dtype)
    if message.ndim == 1:
        message = ad.reshape(message, (1, -1))
    if message.shape[1] != h.message_length:
        raise ValueError(f"message length {message.shape[1]} != model L={h.message_length}")
    if cover.shape[1:] != h.image_shape:
        raise ValueError(f"cover shape {cover.shape[1:]} != model shape {h.image_shape}")
    if message.shape[0] != cover.shape[0]:
        raise ValueError("one message per cover image required")

    x = cover
    for i in range(ENCODER_BLOCKS):
        x = conv_bn_relu(mp, f"encoder.block{i}", x, mode)
    volume = ad.broadcast_channels(message, (h.height, h.width))
    joined = ad.concat([x, volume, cover], axis=1)
    if trace is not None:
        trace["message_volume"] = volume.data
        trace["concat"] = joined.data
    x = conv_bn_relu(mp, "encoder.fuse", joined, mode)
    return ad.conv2d(x, mp.params["encoder.final.weight"], mp.params["encoder.final.bias"])


def decoder_forward(mp: ModelParams, noised, mode: str = "train") -> Tensor:
    """Predict the (N, L) real-valued message from a noised batch of any spatial size."""
    x = _batched(noised)
    if x.shape[1] != mp.header.channels:
        raise ValueError(f"decoder expects {mp.header.channels} channels, got {x.shape[1]}")
    for i in range(DECODER_BLOCKS + 1):
        x = conv_bn_relu(mp, f"decoder.block{i}", x, mode)
    x = ad.global_avg_pool(x)
    return ad.linear(x, mp.params["decoder.linear.weight"], mp.params["decoder.linear.bias"])


def adversary_logits(mp: ModelParams, image, mode: str = "train") -> Tensor:
    """(N, 2) logits; column 1 is the "encoded" class."""
    x = _batched(image)
    if x.shape[1:] != mp.header.image_shape:
        raise ValueError(f"adversary expects {mp.header.image_shape}, got {x.shape[1:]}")
    for i in range(ADVERSARY_BLOCKS):
        x = conv_bn_relu(mp, f"adversary.block{i}", x, mode)
    x = ad.global_avg_pool(x)
    return ad.linear(x, mp.params["adversary.linear.weight"], mp.params["adversary.linear.bias"])


def adversary_forward(mp: ModelParams, image, mode: str = "train") -> Tensor:
    """Probability that each image in the batch is an encoded image."""
    probs = ad.softmax(adversary_logits(mp, image, mode))
    n = probs.shape[0]
    return ad.reshape(ad.crop(probs, 0, 1, n, 1), (n,))
