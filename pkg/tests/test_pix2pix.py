import math

import numpy as np
import pytest

from cganse import nn
from cganse.checkpoint import CheckpointError, ModelCheckpoint
from cganse.corpus import Waveform
from cganse.dsp import NormState, SpectroChunk
from cganse.nn import functional as F
from cganse.pix2pix import (
    GanTrainer, Pix2PixError, TrainConfig, build_discriminator, build_unet,
    enhance_pix2pix, gan_losses, generator_from_checkpoint, init_weights,
    total_g_loss, train,
)


def rand_img(rng, n=1, c=1, side=64, dtype=np.float32):
    return nn.Tensor(rng.uniform(-1, 1, (n, c, side, side)).astype(dtype))


# ---------------------------------------------------------------- shapes

def test_unet_side_256_shape_and_range():
    rng = np.random.default_rng(0)
    g = build_unet(256)
    assert g.levels == 8
    init_weights(g, rng)
    out = g.eval()(rand_img(rng, side=256))
    assert out.shape == (1, 1, 256, 256)
    assert np.all(np.abs(out.data) < 1)
    # 512-channel up-path meets a 512-channel skip
    assert 1024 in g.block_inputs()


def test_unet_side_64_levels_and_shape():
    rng = np.random.default_rng(1)
    g = build_unet(64, cap=128)
    assert g.levels == 6
    assert g.channels == [64, 128, 128, 128, 128, 128]
    init_weights(g, rng)
    assert g(rand_img(rng, 2)).shape == (2, 1, 64, 64)


@pytest.mark.parametrize("side", [0, 4, 48, 100])
def test_unet_rejects_bad_side(side):
    with pytest.raises(Pix2PixError):
        build_unet(side)


def test_discriminator_range_and_flatten_dim():
    rng = np.random.default_rng(2)
    d = build_discriminator(64, cap=128)
    assert d.flat_dim == 128 * (64 // 2 ** 4) ** 2
    init_weights(d, rng)
    p = d(rand_img(rng, 3), rand_img(rng, 3))
    assert p.shape == (3, 1)
    assert np.all((p.data > 0) & (p.data < 1))


def test_discriminator_sensitive_to_candidate():
    rng = np.random.default_rng(3)
    d = build_discriminator(16, cap=16, dtype=np.float64)
    init_weights(d, rng, std=0.2)
    cond = rand_img(rng, side=16, dtype=np.float64)
    cand = rand_img(rng, side=16, dtype=np.float64)
    cand.requires_grad = True
    with nn.Tape() as tape:
        p = d(cond, cand)
    tape.backward(F.sum(p) if p.size > 1 else p)
    assert np.any(cand.grad != 0)


# ---------------------------------------------------------------- losses

def test_gan_loss_anchors():
    out = gan_losses(np.array(0.5), np.array(0.5))
    assert abs(float(out["d_loss"].data) - 2 * math.log(2)) < 1e-12
    assert abs(float(out["g_adv_loss"].data) - math.log(2)) < 1e-12
    perfect = gan_losses(np.array(1.0), np.array(0.0))
    assert float(perfect["d_loss"].data) < 1e-10
    assert np.isfinite(float(gan_losses(np.array(0.0), np.array(1.0))["d_loss"].data))


def test_g_adv_monotone():
    vals = [float(gan_losses(np.array(0.5), np.array(p))["g_adv_loss"].data) for p in np.linspace(0.01, 0.99, 50)]
    assert np.all(np.diff(vals) < 0)


def test_total_g_loss():
    adv = nn.Tensor(np.array(0.3))
    x = nn.Tensor(np.zeros((1, 1, 8, 8)))
    same, _ = total_g_loss(adv, x, x)
    assert float(same.data) == 0.3
    off, l1 = total_g_loss(nn.Tensor(np.array(0.0)), nn.Tensor(np.full((1, 1, 8, 8), 0.01)), x)
    assert abs(float(off.data) - 1.0) < 1e-12
    pure, _ = total_g_loss(adv, nn.Tensor(np.ones((1, 1, 8, 8))), x, l1_weight=0.0)
    assert float(pure.data) == 0.3


# ---------------------------------------------------------------- gradients

def _reseed_dropout(g):
    for blk in g.dec:
        if blk.drop is not None:
            blk.drop.rng = np.random.default_rng(7)


def test_end_to_end_gradients_tiny_instance():
    rng = np.random.default_rng(4)
    g = build_unet(8, cap=8, dtype=np.float64)
    d = build_discriminator(8, cap=8, dtype=np.float64)
    init_weights(g, rng, std=0.3)
    init_weights(d, rng, std=0.3)
    y = rand_img(rng, side=8, dtype=np.float64)
    x = rand_img(rng, side=8, dtype=np.float64)

    def g_loss(y_in):
        _reseed_dropout(g)
        fake = g(y_in)
        adv = gan_losses(np.ones(()), d(y_in, fake))["g_adv_loss"]
        return total_g_loss(adv, fake, x)[0]

    rep = nn.grad_check(g_loss, [y], params=g.parameters() + d.parameters(), max_entries=12, seed=1, atol=1e-6)
    assert rep.max_rel_error < 1e-3, rep.per_tensor

    _reseed_dropout(g)
    fake = g(y).detach()

    def d_loss(y_in):
        return gan_losses(d(y_in, x), d(y_in, fake))["d_loss"]

    rep = nn.grad_check(d_loss, [y], params=d.parameters(), max_entries=12, seed=2, atol=1e-6)
    assert rep.max_rel_error < 1e-3, rep.per_tensor


# ---------------------------------------------------------------- training

def toy_pairs(n, side=8, seed=0, norm=NormState(1.0)):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        x = rng.uniform(-1, 1, (side, side))
        y = np.clip(x + rng.normal(0, 0.2, x.shape), -1, 1)
        out.append((SpectroChunk(y, norm, 0, i), SpectroChunk(x, norm, 0, i)))
    return out


def test_step_counters():
    norm = NormState(1.0)
    cfg = TrainConfig(epochs=3, side=8, cap=8, seed=1)
    recs = []
    ck = train(toy_pairs(5, norm=norm), cfg, norm, log=recs.append)
    assert ck.extra["d_steps"] == 15
    assert ck.extra["g_steps"] == 30
    assert [r.iteration for r in recs] == list(range(1, 16))
    assert all(np.isfinite([r.d_loss, r.g_adv, r.g_l1]).all() for r in recs)


def test_training_deterministic_bytes():
    norm = NormState(1.0)
    cfg = TrainConfig(epochs=2, side=8, cap=8, seed=3)
    a = train(toy_pairs(4, norm=norm), cfg, norm).to_bytes()
    b = train(toy_pairs(4, norm=norm), cfg, norm).to_bytes()
    assert a == b
    c = train(toy_pairs(4, norm=norm), TrainConfig(epochs=2, side=8, cap=8, seed=4), norm).to_bytes()
    assert a != c


def test_training_reduces_l1():
    norm = NormState(1.0)
    cfg = TrainConfig(epochs=30, side=8, cap=16, seed=0, lr=1e-3)
    recs = []
    train(toy_pairs(6, norm=norm), cfg, norm, log=recs.append)
    assert np.mean([r.g_l1 for r in recs[-6:]]) < 0.5 * np.mean([r.g_l1 for r in recs[:6]])


def test_train_errors():
    norm = NormState(1.0)
    cfg = TrainConfig(epochs=1, side=8, cap=8)
    with pytest.raises(Pix2PixError):
        train([], cfg, norm)
    with pytest.raises(Pix2PixError):
        train(toy_pairs(2, norm=NormState(2.0)), cfg, norm)
    with pytest.raises(Pix2PixError):
        train(toy_pairs(2, side=16, norm=norm), cfg, norm)
    with pytest.raises(Pix2PixError):
        TrainConfig(front_end_kind="other")
    with pytest.raises(Pix2PixError):
        TrainConfig(epochs=0)


# ---------------------------------------------------------------- checkpoint

def small_checkpoint(side=8):
    trainer = GanTrainer(TrainConfig(epochs=1, side=side, cap=8, seed=5))
    return trainer.checkpoint(NormState(3.5))


def test_checkpoint_round_trip_bytes(tmp_path):
    ck = small_checkpoint()
    ck.save(tmp_path / "a.ckpt")
    again = ModelCheckpoint.load(tmp_path / "a.ckpt")
    again.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert again.norm_scale == 3.5
    assert again.arch == {"kind": "pix2pix", "side": 8, "cap": 8}
    g = generator_from_checkpoint(again)
    assert not g.training


def test_checkpoint_corruption(tmp_path):
    blob = small_checkpoint().to_bytes()
    with pytest.raises(CheckpointError):
        ModelCheckpoint.from_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError):
        ModelCheckpoint.from_bytes(blob[:-4])
    with pytest.raises(CheckpointError):
        ModelCheckpoint.from_bytes(blob + b"\0")


def test_checkpoint_architecture_mismatch():
    ck = small_checkpoint()
    ck.arch = {"kind": "pix2pix", "side": 16, "cap": 8}
    with pytest.raises(CheckpointError):
        generator_from_checkpoint(ck)


# ---------------------------------------------------------------- enhancement

def test_enhance_length_determinism_and_range():
    ck = small_checkpoint(side=64)
    rng = np.random.default_rng(6)
    w = Waveform(rng.standard_normal(9000) * 0.1)
    a = enhance_pix2pix(w, ck)
    b = enhance_pix2pix(w, ck)
    assert len(a) == len(w)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert np.all(np.isfinite(a.samples))
    with pytest.raises(Pix2PixError):
        enhance_pix2pix(Waveform(w.samples, 8000), ck)
