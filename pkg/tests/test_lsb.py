import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hidenet.lsb import capacity, lsb_decode, lsb_encode
from hidenet.metrics import psnr
from hidenet.noise import real_jpeg_roundtrip


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 24), st.integers(1, 24), st.sampled_from([None, 3]), st.integers(0, 2 ** 31 - 1))
def test_roundtrip_exact(h, w, c, seed):
    rng = np.random.default_rng(seed)
    shape = (h, w) if c is None else (h, w, c)
    img = rng.integers(0, 256, shape, dtype=np.uint8)
    bits = rng.integers(0, 2, rng.integers(1, capacity(img) + 1)).astype(np.uint8)
    enc = lsb_encode(img, bits)
    assert np.array_equal(lsb_decode(enc, bits.size), bits)
    assert np.array_equal(enc.ravel()[bits.size:], img.ravel()[bits.size:])


def test_psnr_bound():
    rng = np.random.default_rng(0)
    for _ in range(100):
        img = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        enc = lsb_encode(img, rng.integers(0, 2, img.size))
        assert psnr(img, enc) >= 48.13


def test_errors():
    img = np.zeros((2, 2), np.uint8)
    with pytest.raises(ValueError):
        lsb_encode(img, np.zeros(5))
    with pytest.raises(ValueError):
        lsb_encode(img, [2])
    with pytest.raises(TypeError):
        lsb_encode(img.astype(float), [1])
    with pytest.raises(ValueError):
        lsb_decode(img, 5)


def test_jpeg_destroys_lsb_message():
    from skimage import data
    img = data.camera()[:128, :128]
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, img.size).astype(np.uint8)
    out = real_jpeg_roundtrip(lsb_encode(img, bits), 50)
    acc = np.mean(lsb_decode(out, bits.size) == bits)
    assert 0.45 <= acc <= 0.55
