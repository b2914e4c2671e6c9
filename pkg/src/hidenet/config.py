"""Run configuration files: ``key = value`` lines, ``#`` comments.

Example::

    data_dir = ./covers
    image_size = 16          # or 16x24
    color = gray             # gray | yuv
    message_length = 8
    lambda_i = 0.7
    lambda_g = 0.001
    lr = 0.001
    batch = 12
    epochs = 200
    seed = 0
    noise = dropout:0.3, identity
    checkpoint_every = 10
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .networks import ArchHeader
from .noise import NoiseSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_dir: str = ""
    image_size: tuple[int, int] = (16, 16)
    color: str = "gray"
    message_length: int = 8
    lambda_i: float = 0.7
    lambda_g: float = 0.001
    lr: float = 1e-3
    batch: int = 12
    epochs: int = 200
    seed: int = 0
    noise: list[NoiseSpec] = field(default_factory=lambda: [NoiseSpec.parse("identity")])
    checkpoint_every: int = 0
    max_steps: int | None = None
    max_images: int | None = None

    @property
    def channels(self) -> int:
        return 1 if self.color == "gray" else 3

    def header(self) -> ArchHeader:
        return ArchHeader(self.channels, self.image_size[0], self.image_size[1], self.message_length)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.header(), lambda_i=self.lambda_i, lambda_g=self.lambda_g, lr=self.lr,
                           batch_size=self.batch, epochs=self.epochs, schedule=tuple(self.noise),
                           seed=self.seed, max_steps=self.max_steps, checkpoint_every=self.checkpoint_every)


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().replace(" ", "").split("x")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"bad image size {text!r}")
    h, w = int(parts[0]), int(parts[1])
    if h < 1 or w < 1:
        raise ValueError("image size must be positive")
    return h, w


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise ValueError("must be >= 0")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise ValueError("must be >= 0")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise ValueError("must be > 0")
    return v


def _color(text: str) -> str:
    if text not in ("gray", "yuv"):
        raise ValueError("must be gray or yuv")
    return text


def _noise(text: str) -> list[NoiseSpec]:
    specs = [NoiseSpec.parse(t) for t in text.split(",") if t.strip()]
    if not specs:
        raise ValueError("noise schedule must not be empty")
    if any(not s.differentiable for s in specs):
        raise ValueError("real JPEG cannot be used for training")
    return specs


_PARSERS = {
    "data_dir": str,
    "image_size": _size,
    "color": _color,
    "message_length": _positive_int,
    "lambda_i": _nonneg_float,
    "lambda_g": _nonneg_float,
    "lr": _positive_float,
    "batch": _positive_int,
    "epochs": _positive_int,
    "seed": _nonneg_int,
    "noise": _noise,
    "checkpoint_every": _nonneg_int,
    "max_steps": _positive_int,
    "max_images": _positive_int,
}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            setattr(cfg, key, _PARSERS[key](value))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: invalid {key}: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
