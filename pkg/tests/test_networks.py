import copy

import numpy as np
import pytest

from hidenet import autodiff as ad
from hidenet.networks import (ArchHeader, adversary_forward, adversary_logits, block_names, decoder_forward,
                              encoder_forward, init_parameters)

from fd import frozen_relu, recorded_relu, rel_error

H16 = ArchHeader(1, 16, 16, 52)


@pytest.fixture(scope="module")
def mp16():
    return init_parameters(H16, seed=0)


def test_architecture_block_counts():
    names = [b[0] for b in block_names(H16)]
    assert sum(n.startswith("encoder.block") for n in names) == 4
    assert sum(n.startswith("decoder.block") for n in names) == 8
    assert sum(n.startswith("adversary.block") for n in names) == 3
    assert dict((b[0], b[2]) for b in block_names(H16))["decoder.block7"] == 52


def test_encoder_shapes_and_concat_width(mp16):
    rng = np.random.default_rng(0)
    cover = rng.uniform(-1, 1, (2, 1, 16, 16))
    msg = rng.integers(0, 2, (2, 52))
    trace = {}
    out = encoder_forward(mp16, cover, msg, mode="train", trace=trace)
    assert out.shape == (2, 1, 16, 16)
    assert trace["concat"].shape[1] == 64 + 52 + 1
    assert np.all(np.isfinite(out.data))


def test_message_volume_replicated(mp16):
    msg = np.random.default_rng(1).integers(0, 2, (1, 52))
    trace = {}
    encoder_forward(mp16, np.zeros((1, 16, 16)), msg, mode="eval", trace=trace)
    vol = trace["message_volume"][0]
    assert np.array_equal(vol, np.broadcast_to(msg[0][:, None, None], vol.shape))


def test_encoder_errors(mp16):
    with pytest.raises(ValueError):
        encoder_forward(mp16, np.zeros((1, 1, 16, 16)), np.zeros((1, 51)))
    with pytest.raises(ValueError):
        encoder_forward(mp16, np.zeros((1, 1, 16, 8)), np.zeros((1, 52)))


def test_decoder_any_spatial_size():
    mp = init_parameters(ArchHeader(3, 128, 128, 30), seed=0)
    rng = np.random.default_rng(0)
    for size in (128, 24, 1):
        out = decoder_forward(mp, rng.uniform(-1, 1, (1, 3, size, size)), mode="eval")
        assert out.shape == (1, 30)
    with pytest.raises(ValueError):
        decoder_forward(mp, np.zeros((1, 1, 8, 8)))


def test_decoder_deterministic_on_zero_image():
    a = decoder_forward(init_parameters(H16, seed=3), np.zeros((1, 1, 16, 16)), mode="eval").data
    b = decoder_forward(init_parameters(H16, seed=3), np.zeros((1, 1, 16, 16)), mode="eval").data
    assert a.tobytes() == b.tobytes()


def test_adversary_probability(mp16):
    img = np.random.default_rng(2).uniform(-1, 1, (3, 1, 16, 16))
    p = adversary_forward(mp16, img, mode="eval").data
    assert p.shape == (3,) and np.all((p > 0) & (p < 1))
    probs = ad.softmax(adversary_logits(mp16, img, mode="eval")).data
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert adversary_forward(mp16, img, mode="eval").data.tobytes() == p.tobytes()


def test_init_determinism_and_seed_variation():
    a, b, c = init_parameters(H16, 7), init_parameters(H16, 7), init_parameters(H16, 8)
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()
    weights = [k for k in a.params if k.endswith("weight")]
    va = np.concatenate([a.params[k].data.ravel() for k in weights])
    vc = np.concatenate([c.params[k].data.ravel() for k in weights])
    assert np.mean(va != vc) > 0.99
    for k in a.params:
        if k.endswith("bn.scale"):
            assert np.all(a.params[k].data == 1)
        if k.endswith("bn.shift"):
            assert np.all(a.params[k].data == 0)


def test_post_init_activation_magnitudes(mp16):
    x = np.random.default_rng(0).normal(size=(4, 1, 16, 16))
    x /= np.linalg.norm(x.reshape(4, -1), axis=1).reshape(4, 1, 1, 1)
    msg = np.random.default_rng(0).integers(0, 2, (4, 52))
    for out in (encoder_forward(mp16, x, msg, "train").data, decoder_forward(mp16, x, "train").data,
                adversary_logits(mp16, x, "train").data):
        rms = float(np.sqrt(np.mean(out ** 2)))
        assert 1e-3 <= rms <= 1e3


def test_eval_mode_pure(mp16):
    x = np.random.default_rng(5).uniform(-1, 1, (2, 1, 16, 16))
    before = copy.deepcopy(mp16.stats)
    a = decoder_forward(mp16, x, "eval").data
    b = decoder_forward(mp16, x, "eval").data
    assert a.tobytes() == b.tobytes()
    for k, s in mp16.stats.items():
        assert np.array_equal(s.mean, before[k].mean)


def test_every_encoder_weight_gets_gradient():
    h = ArchHeader(1, 8, 8, 4)
    mp = init_parameters(h, seed=0)
    rng = np.random.default_rng(0)
    cover = ad.Tensor(rng.uniform(-1, 1, (4, 1, 8, 8)))
    msg = ad.Tensor(rng.integers(0, 2, (4, 4)))
    out = decoder_forward(mp, encoder_forward(mp, cover, msg, "train"), "train")
    loss = ad.mean(ad.square(ad.sub(out, msg)))
    ad.backward(loss, mp.encoder.values())
    for name, p in mp.encoder.items():
        assert np.any(p.grad != 0), name


def test_full_stack_gradient_on_five_parameters():
    h = ArchHeader(1, 8, 8, 4)
    mp = init_parameters(h, seed=1, dtype=np.float64)
    rng = np.random.default_rng(0)
    cover = rng.uniform(-1, 1, (3, 1, 8, 8))
    msg = rng.integers(0, 2, (3, 4)).astype(np.float64)

    def loss():
        saved = mp.stats
        mp.stats = copy.deepcopy(saved)
        c = ad.Tensor(cover, dtype=np.float64)
        en = encoder_forward(mp, c, ad.Tensor(msg, dtype=np.float64), "train")
        out = decoder_forward(mp, en, "train")
        mp.stats = saved
        return ad.add(ad.mean(ad.square(ad.sub(out, msg))), ad.scale(ad.mean(ad.square(ad.sub(en, c))), 0.7))

    masks = []
    with recorded_relu(masks):
        value = loss()
    ad.backward(value, mp.params.values())
    names = sorted(k for k in mp.params if not k.startswith("adversary"))
    picks = rng.choice(len(names), 5, replace=False)
    for k in picks:
        p = mp.params[names[k]]
        i = int(rng.integers(p.data.size))
        old = p.data.flat[i]
        p.data.flat[i] = old + 1e-3
        with frozen_relu(masks):
            lp = loss().item()
        p.data.flat[i] = old - 1e-3
        with frozen_relu(masks):
            lm = loss().item()
        p.data.flat[i] = old
        assert rel_error(p.grad.flat[i], (lp - lm) / 2e-3) < 1e-2, names[k]
