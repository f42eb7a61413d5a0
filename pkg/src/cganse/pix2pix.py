"""Conditional GAN spectrogram enhancer: U-Net generator, flattened PatchGAN
discriminator, adversarial + L1 objective and the training loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .checkpoint import CheckpointError, ModelCheckpoint, load_module_state, module_state
from .corpus import SAMPLE_RATE
from .dsp import NormState, analyze, chunk_for_gan, chunk_for_training, synthesize, unchunk
from .nn import functional as F

PROB_CLAMP = 1e-12
LEAK = 0.2
DROPOUT_BLOCKS = 3
D_BLOCKS = 4


class Pix2PixError(ValueError):
    pass


def channel_schedule(n, cap):
    return [min(64 * 2 ** i, cap) for i in range(n)]


# ---------------------------------------------------------------- networks

class EncoderBlock(nn.Module):
    def __init__(self, c_in, c_out, norm, dtype):
        self.conv = nn.Conv2d(c_in, c_out, dtype=dtype)
        self.bn = nn.BatchNorm(c_out, dtype=dtype) if norm else None

    def forward(self, x):
        h = self.conv(x)
        if self.bn is not None:
            h = self.bn(h)
        return F.leaky_relu(h, LEAK)


class DecoderBlock(nn.Module):
    def __init__(self, c_in, c_out, norm, dropout, final, dtype, rng=None):
        self.conv = nn.ConvTranspose2d(c_in, c_out, dtype=dtype)
        self.bn = nn.BatchNorm(c_out, dtype=dtype) if norm else None
        self.drop = nn.Dropout(0.5, rng) if dropout else None
        self.final = final

    def forward(self, x):
        h = self.conv(x)
        if self.bn is not None:
            h = self.bn(h)
        if self.drop is not None:
            h = self.drop(h)
        return F.tanh(h) if self.final else F.relu(h)


class UNet(nn.Module):
    """Encoder of log2(side) stride-2 blocks down to 1x1, mirrored decoder
    with skip concatenations, tanh output.

    Batch norm is skipped on the first encoder block, on blocks whose output
    is 1x1 (a single value per channel normalizes to zero) and on the output
    block.
    """

    def __init__(self, side=256, cap=512, dtype=np.float32, seed=0):
        if side < 8 or side & (side - 1):
            raise Pix2PixError(f"side must be a power of two >= 8, got {side}")
        self.side, self.cap = side, cap
        levels = int(math.log2(side))
        self.levels = levels
        ch = channel_schedule(levels, cap)
        self.channels = ch
        self.enc = []
        c_in = 1
        for i in range(levels):
            out_side = side >> (i + 1)
            self.enc.append(EncoderBlock(c_in, ch[i], norm=0 < i and out_side > 1, dtype=dtype))
            c_in = ch[i]
        drop_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(DROPOUT_BLOCKS)]
        self.dec = []
        for j in range(levels):
            final = j == levels - 1
            c_out = 1 if final else ch[levels - 2 - j]
            dec_in = ch[levels - 1] if j == 0 else self.dec[j - 1].conv.weight.shape[1] + ch[levels - 1 - j]
            self.dec.append(DecoderBlock(dec_in, c_out, norm=not final, dropout=j < DROPOUT_BLOCKS and not final,
                                         final=final, dtype=dtype,
                                         rng=drop_rngs[j] if j < DROPOUT_BLOCKS else None))

    def block_inputs(self):
        return [d.conv.weight.shape[0] for d in self.dec]

    def forward(self, x):
        skips = []
        h = x
        for blk in self.enc:
            h = blk(h)
            skips.append(h)
        h = self.dec[0](skips[-1])
        for j in range(1, self.levels):
            h = self.dec[j](F.concat([h, skips[self.levels - 1 - j]], axis=1))
        return h


class PatchDiscriminator(nn.Module):
    """Four stride-2 conv blocks on the 2-channel (condition, candidate)
    image, flattened into one sigmoid unit."""

    def __init__(self, side=256, cap=512, dtype=np.float32):
        if side < 8 or side & (side - 1):
            raise Pix2PixError(f"side must be a power of two >= 8, got {side}")
        self.side, self.cap = side, cap
        ch = channel_schedule(D_BLOCKS, cap)
        self.blocks = []
        c_in, s = 2, side
        for i in range(D_BLOCKS):
            s = F.conv_output_size(s, 5, 2, 2)
            self.blocks.append(EncoderBlock(c_in, ch[i], norm=i > 0 and s > 1, dtype=dtype))
            c_in = ch[i]
        self.flat_dim = c_in * s * s
        self.out = nn.Dense(self.flat_dim, 1, dtype=dtype)

    def forward(self, cond, cand):
        h = F.concat([cond, cand], axis=1)
        for blk in self.blocks:
            h = blk(h)
        return F.sigmoid(self.out(F.flatten(h)))


def build_unet(side=256, cap=512, dtype=np.float32, seed=0):
    return UNet(side, cap, dtype, seed)


def build_discriminator(side=256, cap=512, dtype=np.float32):
    return PatchDiscriminator(side, cap, dtype)


def init_weights(module, rng, std=0.02):
    """Conv/dense weights ~ N(0, std^2); biases and batch-norm shift at 0, scale at 1."""
    for name, p in module.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "weight":
            nn.init_normal(p, 0.0, std, rng=rng)
        elif leaf == "gamma":
            p.data[...] = 1.0
        else:
            p.data[...] = 0.0


# ---------------------------------------------------------------- losses

def _clamped(p):
    return F.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def gan_losses(d_real, d_fake):
    """D objective (negated log-likelihood of the real/fake labels) and the
    non-saturating generator term, both averaged over the batch."""
    d_real, d_fake = nn.as_tensor(d_real), nn.as_tensor(d_fake)
    one = np.ones((), dtype=d_fake.dtype)
    d_loss = F.mul(F.add(F.mean(F.log(_clamped(d_real))), F.mean(F.log(_clamped(F.sub(one, d_fake))))), -1.0)
    g_adv = F.mul(F.mean(F.log(_clamped(d_fake))), -1.0)
    return {"d_loss": d_loss, "g_adv_loss": g_adv}


def total_g_loss(g_adv_loss, g_output, target, l1_weight=100.0):
    l1 = F.l1(g_output, target)
    return F.add(g_adv_loss, F.mul(l1, l1_weight)), l1


# ---------------------------------------------------------------- training

FRONT_END_KINDS = ("noise-specific", "noise-general")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 1
    g_steps_per_iter: int = 2
    l1_weight: float = 100.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    front_end_kind: str = "noise-general"
    side: int = 64
    cap: int = 128

    def __post_init__(self):
        for k in ("epochs", "batch_size", "g_steps_per_iter", "side", "cap"):
            if getattr(self, k) <= 0:
                raise Pix2PixError(f"{k} must be positive")
        if self.l1_weight < 0 or self.lr <= 0:
            raise Pix2PixError("l1_weight must be >= 0 and lr > 0")
        if self.front_end_kind not in FRONT_END_KINDS:
            raise Pix2PixError(f"front_end_kind must be one of {FRONT_END_KINDS}")


@dataclass
class LossRecord:
    iteration: int
    d_loss: float
    g_adv: float
    g_l1: float

    def line(self):
        return f"{self.iteration} {self.d_loss:.6f} {self.g_adv:.6f} {self.g_l1:.6f}"


class GanTrainer:
    """Owns G, D and their optimizers; counts optimizer steps."""

    def __init__(self, cfg, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        self.rng = np.random.default_rng(seeds[0])
        init_rng = np.random.default_rng(seeds[1])
        self.G = build_unet(cfg.side, cfg.cap, dtype, seed=int(seeds[2].generate_state(1)[0]))
        self.D = build_discriminator(cfg.side, cfg.cap, dtype)
        init_weights(self.G, init_rng)
        init_weights(self.D, init_rng)
        self.opt_g = nn.Adam(self.G.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
        self.opt_d = nn.Adam(self.D.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
        self.d_steps = 0
        self.g_steps = 0
        self.iteration = 0

    def d_step(self, y, x):
        fake = self.G(y).detach()
        self.opt_d.zero_grad()
        with nn.Tape() as tape:
            losses = gan_losses(self.D(y, x), self.D(y, fake))
        tape.backward(losses["d_loss"])
        self.opt_d.step()
        self.d_steps += 1
        return float(losses["d_loss"].data)

    def g_step(self, y, x):
        self.opt_g.zero_grad()
        with nn.Tape() as tape:
            fake = self.G(y)
            g_adv = gan_losses(np.ones((), self.dtype), self.D(y, fake))["g_adv_loss"]
            total, l1 = total_g_loss(g_adv, fake, x, self.cfg.l1_weight)
        tape.backward(total)
        self.opt_g.step()
        self.D.zero_grad()
        self.g_steps += 1
        return float(g_adv.data), float(l1.data)

    def iterate(self, y, x):
        y = nn.Tensor(y.astype(self.dtype, copy=False))
        x = nn.Tensor(x.astype(self.dtype, copy=False))
        d = self.d_step(y, x)
        for _ in range(self.cfg.g_steps_per_iter):
            g_adv, l1 = self.g_step(y, x)
        self.iteration += 1
        return LossRecord(self.iteration, d, g_adv, l1)

    def checkpoint(self, norm, history=()):
        tensors = module_state(self.G, "G.")
        tensors.update(module_state(self.D, "D."))
        ck = ModelCheckpoint(
            arch={"kind": "pix2pix", "side": self.cfg.side, "cap": self.cfg.cap},
            tensors=tensors, norm_scale=float(norm.scale), seed=self.cfg.seed, config=asdict(self.cfg),
            extra={"d_steps": self.d_steps, "g_steps": self.g_steps},
        )
        ck.history = list(history)
        return ck


def prepare_pairs(waves, side, norm=None):
    """Chunk (noisy, clean) waveform pairs for training. The normalization
    is fitted on both sides of the training data unless given."""
    if not waves:
        raise Pix2PixError("no training utterances")
    ym = [analyze(y).mag for y, _ in waves]
    xm = [analyze(x).mag for _, x in waves]
    norm = norm or NormState.fit(ym + xm)
    pairs = list(zip(chunk_for_training(ym, norm, side), chunk_for_training(xm, norm, side)))
    return pairs, norm


def train(pairs, cfg, norm, log=None):
    """Train on (noisy_chunk, clean_chunk) pairs and return a checkpoint.

    Each iteration is one discriminator step on the real pair (y, x) against
    the detached fake pair (y, G(y)), then ``g_steps_per_iter`` generator
    steps with fresh forward passes. Pairs are reshuffled every epoch by the
    seeded RNG. ``log`` receives one LossRecord per iteration.
    """
    if not pairs:
        raise Pix2PixError("empty training set")
    for y, x in pairs:
        if y.norm != norm or x.norm != norm:
            raise Pix2PixError("chunk normalization does not match the training NormState")
        if y.data.shape != (cfg.side, cfg.side) or x.data.shape != (cfg.side, cfg.side):
            raise Pix2PixError(f"chunks must be {cfg.side}x{cfg.side}")
    trainer = GanTrainer(cfg)
    history = []
    n, bs = len(pairs), cfg.batch_size
    for _ in range(cfg.epochs):
        order = trainer.rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            y = np.stack([pairs[i][0].data for i in idx])[:, None]
            x = np.stack([pairs[i][1].data for i in idx])[:, None]
            rec = trainer.iterate(y, x)
            history.append(rec)
            if log is not None:
                log(rec)
    return trainer.checkpoint(norm, history)


# ---------------------------------------------------------------- inference

def generator_from_checkpoint(ck):
    if ck.arch.get("kind") != "pix2pix":
        raise CheckpointError(f"not a pix2pix checkpoint: {ck.arch}")
    G = build_unet(ck.arch["side"], ck.arch["cap"], np.float32)
    load_module_state(G, {k: v for k, v in ck.tensors.items() if k.startswith("G.")}, "G.")
    return G.eval()


def discriminator_from_checkpoint(ck):
    D = build_discriminator(ck.arch["side"], ck.arch["cap"], np.float32)
    load_module_state(D, {k: v for k, v in ck.tensors.items() if k.startswith("D.")}, "D.")
    return D.eval()


def run_generator(G, chunks, batch=64):
    """Eval-mode forward over chunk data; returns arrays with the same shapes."""
    G.eval()
    data = np.stack([c.data for c in chunks]).astype(np.float32)[:, None]
    out = [G(nn.Tensor(data[i:i + batch])).data[:, 0] for i in range(0, len(data), batch)]
    return np.concatenate(out).astype(np.float64)


def enhance_pix2pix(w, ck, G=None):
    """STFT, chunk, run G, reassemble and resynthesize with the noisy phase."""
    if w.sample_rate != SAMPLE_RATE:
        raise Pix2PixError(f"expected {SAMPLE_RATE} Hz input, got {w.sample_rate}")
    if ck.norm_scale is None:
        raise CheckpointError("checkpoint lacks a normalization scale")
    G = generator_from_checkpoint(ck) if G is None else G
    norm = NormState(ck.norm_scale)
    spec = analyze(w)
    chunks = chunk_for_gan(spec.mag, norm, ck.arch["side"])
    out = run_generator(G, chunks)
    enhanced = [type(c)(o, norm, c.band, c.index) for c, o in zip(chunks, out)]
    mag = unchunk(enhanced, spec.n_frames, norm, ck.arch["side"])
    return synthesize(spec.with_mag(mag), len(w))
