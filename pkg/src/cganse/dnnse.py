"""IRM-target DNN enhancer: gammatone-domain ideal ratio masks, a
feed-forward mask estimator and mask-applied resynthesis."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .checkpoint import CheckpointError, ModelCheckpoint, load_module_state, module_state
from .corpus import Waveform
from .dsp import (
    HOP, NFFT, DspError, FeatureMatrix, analyze, deltas, mel_gammatone_bank, mfcc,
    subband_energies, synthesize,
)
from .nn import functional as F

IRM_BETA = 0.5
CONTEXT = 2
N_BANDS = 64
LOG_FLOOR = 1e-10
BANK = mel_gammatone_bank(N_BANDS)


class DnnSeError(ValueError):
    pass


@dataclass(frozen=True)
class TfEnergyPair:
    clean_e: np.ndarray
    noise_e: np.ndarray

    def __post_init__(self):
        if self.clean_e.shape != self.noise_e.shape:
            raise DnnSeError("clean and noise energies differ in shape")
        if np.any(self.clean_e < 0) or np.any(self.noise_e < 0):
            raise DnnSeError("energies must be non-negative")


def irm(pair, beta=IRM_BETA):
    total = pair.clean_e + pair.noise_e
    ratio = np.divide(pair.clean_e, total, out=np.zeros_like(total, dtype=np.float64), where=total > 0)
    return ratio ** beta


def _padded(w):
    """Zero-pad the tail exactly as :func:`dsp.analyze` does, so every
    feature stream shares its frame grid."""
    n = len(w)
    if n < NFFT:
        raise DspError(f"signal of {n} samples is shorter than one {NFFT}-sample frame")
    extra = (-(n - NFFT)) % HOP
    return Waveform(np.concatenate([w.samples, np.zeros(extra)]), w.sample_rate)


def energy_pair(clean, noise):
    return TfEnergyPair(subband_energies(analyze(clean), BANK).frames,
                        subband_energies(analyze(noise), BANK).frames)


def stack_context(frames, context=CONTEXT):
    """Concatenate frames t-context .. t+context (edges replicated)."""
    t = len(frames)
    padded = np.concatenate([np.repeat(frames[:1], context, 0), frames, np.repeat(frames[-1:], context, 0)])
    return np.hstack([padded[i:i + t] for i in range(2 * context + 1)])


def extract_features(w):
    """[MFCC(57) | gammatone log-energy(64) + deltas(128)] per frame, stacked
    over a +-2 frame context: 5 * 249 = 1245 dimensions."""
    pw = _padded(w)
    ceps = mfcc(pw).frames
    loge = np.log(subband_energies(analyze(w), BANK).frames + LOG_FLOOR)
    d = deltas(loge)
    base = np.hstack([ceps, loge, d, deltas(d)])
    return FeatureMatrix(stack_context(base), "dnnse", mfcc(pw).frame_times)


FEATURE_DIM = 5 * (57 + 3 * N_BANDS)


def mask_to_bins(mask, bank=BANK):
    """Response-weighted interpolation of T x 64 band gains onto F x T bins."""
    resp = bank.responses
    return (resp.T @ mask.T) / resp.sum(axis=0)[:, None]


def apply_mask(w, mask):
    spec = analyze(w)
    if mask.shape != (spec.n_frames, N_BANDS):
        raise DnnSeError(f"mask shape {mask.shape} != ({spec.n_frames}, {N_BANDS})")
    return synthesize(spec.with_mag(mask_to_bins(mask) * spec.mag), len(w))


# ---------------------------------------------------------------- network

class DnnSeNet(nn.Module):
    def __init__(self, d_in=FEATURE_DIM, hidden=(1024, 1024, 1024), n_out=N_BANDS, dtype=np.float32):
        self.d_in, self.hidden, self.n_out = d_in, tuple(hidden), n_out
        dims = [d_in, *hidden]
        self.layers = [nn.Dense(a, b, dtype) for a, b in zip(dims[:-1], dims[1:])]
        self.out = nn.Dense(dims[-1], n_out, dtype)

    def forward(self, x):
        h = x
        for layer in self.layers:
            h = F.relu(layer(h))
        return F.sigmoid(self.out(h))

    def arch(self):
        return {"kind": "dnnse", "d_in": self.d_in, "hidden": list(self.hidden), "n_out": self.n_out,
                "context": CONTEXT}


@dataclass
class DnnSeConfig:
    epochs: int = 30
    batch_size: int = 1024
    lr: float = 0.1
    momentum: float = 0.9
    val_fraction: float = 0.1
    seed: int = 0
    hidden: int = 1024

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr <= 0 or self.hidden <= 0:
            raise DnnSeError("epochs, batch_size, lr and hidden must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise DnnSeError("val_fraction must be in [0, 1)")


@dataclass
class DnnSeData:
    features: list  # per-utterance T x D arrays
    targets: list  # per-utterance T x 64 IRMs


def prepare_data(pairs):
    """Features of each noisy mix and IRM targets from its clean reference."""
    feats, targets = [], []
    for noisy, clean in pairs:
        n = min(len(noisy), len(clean))
        noisy = Waveform(noisy.samples[:n], noisy.sample_rate)
        clean = Waveform(clean.samples[:n], clean.sample_rate)
        noise = Waveform(noisy.samples - clean.samples, noisy.sample_rate)
        feats.append(extract_features(noisy).frames)
        targets.append(irm(energy_pair(clean, noise)))
    return DnnSeData(feats, targets)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float


def _mse(net, x, y, batch=4096):
    total = 0.0
    for i in range(0, len(x), batch):
        p = net(nn.Tensor(x[i:i + batch])).data
        total += float(np.sum((p - y[i:i + batch]) ** 2))
    return total / y.size


def train_dnnse(data, cfg, log=None):
    """Mini-batch SGD on the MSE between sigmoid outputs and IRM targets.

    Utterances are split into training and validation sets by the seeded
    RNG. Features are standardized with training-set statistics, which are
    stored in the checkpoint. The learning rate halves whenever an epoch
    fails to improve the best validation loss.
    """
    if not data.features:
        raise DnnSeError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    n_utt = len(data.features)
    order = rng.permutation(n_utt)
    n_val = int(round(cfg.val_fraction * n_utt)) if n_utt > 1 else 0
    val_idx, tr_idx = sorted(order[:n_val]), sorted(order[n_val:])
    xtr = np.concatenate([data.features[i] for i in tr_idx])
    ytr = np.concatenate([data.targets[i] for i in tr_idx]).astype(np.float32)
    mean = xtr.mean(axis=0)
    std = np.maximum(xtr.std(axis=0), 1e-5)
    xtr = ((xtr - mean) / std).astype(np.float32)
    if n_val:
        xva = ((np.concatenate([data.features[i] for i in val_idx]) - mean) / std).astype(np.float32)
        yva = np.concatenate([data.targets[i] for i in val_idx]).astype(np.float32)

    net = DnnSeNet(xtr.shape[1], (cfg.hidden,) * 3)
    for p in net.parameters():
        if p.data.ndim == 2:
            nn.init_normal(p, 0.0, 0.02, rng=rng)
        else:
            p.data[...] = 0.0
    opt = nn.SGD(net.parameters(), cfg.lr, cfg.momentum)
    best = np.inf
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(xtr))
        for s in range(0, len(perm), cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            opt.zero_grad()
            with nn.Tape() as tape:
                loss = F.mse(net(nn.Tensor(xtr[idx])), nn.Tensor(ytr[idx]))
            tape.backward(loss)
            opt.step()
        rec = EpochRecord(epoch + 1, _mse(net, xtr, ytr), _mse(net, xva, yva) if n_val else float("nan"), opt.lr)
        history.append(rec)
        if log is not None:
            log(rec)
        monitor = rec.val_mse if n_val else rec.train_mse
        if monitor < best:
            best = monitor
        else:
            opt.lr *= 0.5
    tensors = module_state(net, "net.")
    tensors["norm.mean"] = mean.astype(np.float32)
    tensors["norm.std"] = std.astype(np.float32)
    ck = ModelCheckpoint(net.arch(), tensors, None, cfg.seed, asdict(cfg))
    ck.history = history
    return ck


def net_from_checkpoint(ck):
    a = ck.arch
    if a.get("kind") != "dnnse":
        raise CheckpointError(f"not a DNN-SE checkpoint: {a}")
    if a["d_in"] != FEATURE_DIM or a["context"] != CONTEXT:
        raise CheckpointError("checkpoint feature configuration does not match the extractor")
    net = DnnSeNet(a["d_in"], a["hidden"], a["n_out"])
    load_module_state(net, {k: v for k, v in ck.tensors.items() if k.startswith("net.")}, "net.")
    return net, ck.tensors["norm.mean"], ck.tensors["norm.std"]


def predict_mask(w, ck, loaded=None):
    net, mean, std = net_from_checkpoint(ck) if loaded is None else loaded
    x = ((extract_features(w).frames - mean) / std).astype(np.float32)
    return net(nn.Tensor(x)).data.astype(np.float64)


def enhance_dnnse(w, ck, loaded=None):
    return apply_mask(w, predict_mask(w, ck, loaded))
