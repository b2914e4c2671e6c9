"""Learned data hiding: encoder/decoder/adversary networks trained through image distortions.

The package is self-contained on top of numpy: :mod:`hidenet.autodiff`
provides the tensor engine the networks are built from.
"""

from .autodiff import Tensor, backward, no_grad
from .metrics import bit_accuracy, bits_per_pixel, psnr, success_rate, sweep_robustness
from .networks import (ArchHeader, ModelParams, adversary_forward, decoder_forward, encoder_forward,
                       init_parameters)
from .noise import NoiseKind, NoiseSpec, apply_noise
from .training import TrainConfig, compute_losses, sample_message, train_loop, train_step

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "no_grad",
    "ArchHeader", "ModelParams", "init_parameters",
    "encoder_forward", "decoder_forward", "adversary_forward",
    "NoiseKind", "NoiseSpec", "apply_noise",
    "TrainConfig", "compute_losses", "sample_message", "train_step", "train_loop",
    "bit_accuracy", "bits_per_pixel", "psnr", "success_rate", "sweep_robustness",
]
