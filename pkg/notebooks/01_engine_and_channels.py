# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Engine and noise channels
#
# A tour of the pieces below the networks: the autodiff engine checked
# against central differences, the blockwise DCT as a strided convolution,
# and what each noise channel does to an image.

# %%
import numpy as np

from hidenet import autodiff as ad
from hidenet import dct
from hidenet.autodiff import Tensor
from hidenet.datasets import desk_images
from hidenet.metrics import psnr
from hidenet.noise import NoiseSpec, apply_noise, jpeg_mask_vector

rng = np.random.default_rng(0)

# %% [markdown]
# ## Gradient check on a convolution
#
# Perturb one weight by +-h and compare the slope with what backward reports.

# %%
x = Tensor(rng.normal(size=(2, 3, 6, 6)), dtype=np.float64)
w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True, dtype=np.float64)
probe = rng.normal(size=(2, 4, 6, 6))


def objective(weights):
    return float((ad.conv2d(x, Tensor(weights, dtype=np.float64), padding=1).data * probe).sum())


ad.backward(ad.tensor_sum(ad.mul(ad.conv2d(x, w, padding=1), Tensor(probe, dtype=np.float64))))
h = 1e-3
for idx in [(0, 0, 0, 0), (3, 2, 1, 2), (1, 1, 2, 0)]:
    plus, minus = w.data.copy(), w.data.copy()
    plus[idx] += h
    minus[idx] -= h
    fd = (objective(plus) - objective(minus)) / (2 * h)
    print(idx, f"autodiff {w.grad[idx]:+.6f}  central difference {fd:+.6f}")

# %% [markdown]
# ## DCT filter bank
#
# 64 filters of size 8x8 applied with stride 8; the bank is orthonormal so
# its transpose convolution inverts it.

# %%
g = dct.dct_bank().matrix
print("max |G^T G - I| =", np.abs(g.T @ g - np.eye(64)).max())
plane = rng.uniform(-1, 1, (16, 24))
print("roundtrip error =", np.abs(dct.blockwise_idct(dct.blockwise_dct(plane)) - plane).max())
print("mask keeps", int(jpeg_mask_vector("luma").sum()), "luma and", int(jpeg_mask_vector("chroma").sum()),
      "chroma coefficients per block")

# %% [markdown]
# ## Channels on a real image
#
# Mixing channels replace part of the encoded image with the cover. Here the
# "encoded" image is the cover plus a faint checkerboard. The PSNR against
# the cover rises when a channel strips the checkerboard; blur and the JPEG
# variants also smooth the picture itself, which pulls it down.

# %%
cover = desk_images(1, 64, 1, seed=2)
checker = 0.05 * ((np.indices((64, 64)).sum(axis=0) % 2) * 2 - 1)
encoded = (cover + checker).astype(np.float32)


def to_px(a):
    return np.round((np.clip(a, -1, 1) + 1) * 127.5)


for text in ("identity", "dropout:0.3", "cropout:0.3", "gaussian:2", "jpeg_mask", "jpeg_drop", "jpeg:50"):
    spec = NoiseSpec.parse(text)
    with ad.no_grad():
        out = apply_noise(spec, cover, encoded, np.random.default_rng(1)).data
    print(f"{text:12s} psnr vs cover {psnr(to_px(cover[0]), to_px(out[0])):6.2f} dB")

# %%
crop = apply_noise(NoiseSpec.parse("crop:0.035"), np.zeros((1, 1, 128, 128)), np.zeros((1, 1, 128, 128)), rng)
print("crop 0.035 of 128x128 ->", crop.shape[2:])
