"""STFT analysis/synthesis, GAN chunking, and auditory front-ends."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .corpus import SAMPLE_RATE, Waveform

NFFT = 512
HOP = 256
N_BINS = NFFT // 2 + 1
GAN_ROWS = NFFT // 2  # rows kept after dropping the Nyquist bin


class DspError(ValueError):
    pass


def hamming(n=NFFT, periodic=True):
    m = n if periodic else n - 1
    return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(n) / m)


WINDOW = hamming(NFFT)


@dataclass(frozen=True)
class Spectrogram:
    mag: np.ndarray
    phase: np.ndarray
    sample_rate: int = SAMPLE_RATE
    nfft: int = NFFT
    hop: int = HOP

    @property
    def n_frames(self):
        return self.mag.shape[1]

    @property
    def bin_width(self):
        return self.sample_rate / self.nfft

    def with_mag(self, mag):
        return Spectrogram(np.asarray(mag, dtype=np.float64), self.phase, self.sample_rate, self.nfft, self.hop)


def n_frames_for(n_samples, nfft=NFFT, hop=HOP):
    return (n_samples - nfft) // hop + 1


def stft(w, nfft=NFFT, hop=HOP):
    """Magnitude/phase STFT with a periodic Hamming window, no edge padding."""
    if w.sample_rate != SAMPLE_RATE:
        raise DspError(f"expected {SAMPLE_RATE} Hz input, got {w.sample_rate}")
    x = w.samples
    if len(x) < nfft:
        raise DspError(f"signal of {len(x)} samples is shorter than one {nfft}-sample frame")
    t = n_frames_for(len(x), nfft, hop)
    idx = np.arange(nfft)[None, :] + hop * np.arange(t)[:, None]
    frames = x[idx] * hamming(nfft)
    spec = np.fft.rfft(frames, axis=1).T
    phase = np.angle(spec)
    phase[phase <= -np.pi] += 2 * np.pi
    return Spectrogram(np.abs(spec), phase, w.sample_rate, nfft, hop)


def istft(spec):
    """Weighted overlap-add inverse; output length is (T-1)*hop + nfft."""
    nfft, hop = spec.nfft, spec.hop
    t = spec.n_frames
    win = hamming(nfft)
    frames = np.fft.irfft((spec.mag * np.exp(1j * spec.phase)).T, n=nfft, axis=1)
    n = (t - 1) * hop + nfft
    out = np.zeros(n)
    env = np.zeros(n)
    for i in range(t):
        out[i * hop:i * hop + nfft] += frames[i] * win
        env[i * hop:i * hop + nfft] += win * win
    assert np.all(env > 1e-8), "window envelope vanished"
    return Waveform(out / env, spec.sample_rate)


def analyze(w):
    """STFT after zero-padding the tail so frames cover every input sample."""
    n = len(w)
    if n < NFFT:
        raise DspError(f"signal of {n} samples is shorter than one {NFFT}-sample frame")
    extra = (-(n - NFFT)) % HOP
    padded = Waveform(np.concatenate([w.samples, np.zeros(extra)]), w.sample_rate)
    return stft(padded)


def synthesize(spec, n_samples):
    """Inverse of :func:`analyze`, trimmed to ``n_samples``."""
    y = istft(spec)
    return Waveform(y.samples[:n_samples], y.sample_rate)


def spectral_energy(spec):
    """Signal energy implied by a spectrogram (Parseval with window compensation)."""
    weights = np.full(spec.mag.shape[0], 2.0)
    weights[0] = 1.0
    if spec.nfft % 2 == 0:
        weights[-1] = 1.0
    win = hamming(spec.nfft)
    per_frame = (weights[:, None] * spec.mag ** 2).sum(axis=0) / spec.nfft
    return float(per_frame.sum() * spec.hop / np.sum(win ** 2))


# ---------------------------------------------------------------- GAN chunking

@dataclass(frozen=True)
class NormState:
    scale: float

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise DspError("normalization scale must be positive and finite")

    @classmethod
    def fit(cls, mags):
        """Global scale = largest magnitude seen across the training spectrograms."""
        return cls(float(max(np.max(m) for m in mags)))


def normalize(v, norm):
    return 2.0 * np.minimum(np.asarray(v) / norm.scale, 1.0) - 1.0


def denormalize(u, norm):
    return np.maximum((np.asarray(u) + 1.0) / 2.0 * norm.scale, 0.0)


@dataclass(frozen=True)
class SpectroChunk:
    data: np.ndarray
    norm: NormState
    band: int = 0
    index: int = 0


def _check_rows(mag):
    if mag.shape[0] != N_BINS:
        raise DspError(f"expected {N_BINS} frequency rows, got {mag.shape[0]}")


def chunk_for_gan(mag, norm, side=GAN_ROWS):
    """Drop the Nyquist row, zero-pad time to a multiple of ``side`` and tile.

    For ``side`` below 256 the 256 kept rows are also split into
    ``256 // side`` stacked frequency bands, so every chunk is side x side.
    Chunks are ordered band-major within each time block.
    """
    _check_rows(mag)
    if GAN_ROWS % side:
        raise DspError(f"side {side} must divide {GAN_ROWS}")
    m = mag[:GAN_ROWS]
    t = m.shape[1]
    n_blocks = max(1, -(-t // side))
    padded = np.zeros((GAN_ROWS, n_blocks * side))
    padded[:, :t] = m
    u = normalize(padded, norm)
    chunks = []
    for b in range(n_blocks):
        for band in range(GAN_ROWS // side):
            tile = u[band * side:(band + 1) * side, b * side:(b + 1) * side]
            chunks.append(SpectroChunk(np.ascontiguousarray(tile), norm, band, b))
    return chunks


def unchunk(chunks, n_frames, norm, side=None):
    """Reassemble chunk data into a 257 x ``n_frames`` magnitude (zero top row)."""
    if side is None:
        side = chunks[0].data.shape[0]
    n_bands = GAN_ROWS // side
    n_blocks = len(chunks) // n_bands
    u = np.empty((GAN_ROWS, n_blocks * side))
    for c in chunks:
        u[c.band * side:(c.band + 1) * side, c.index * side:(c.index + 1) * side] = c.data
    mag = np.zeros((N_BINS, n_frames))
    mag[:GAN_ROWS] = denormalize(u[:, :n_frames], norm)
    return mag


def chunk_for_training(mags, norm, side=GAN_ROWS):
    """Training variant: concatenate spectrograms in time, split every ``side``
    frames without padding (the remainder is dropped)."""
    for m in mags:
        _check_rows(m)
    m = np.concatenate([x[:GAN_ROWS] for x in mags], axis=1)
    n_blocks = m.shape[1] // side
    u = normalize(m[:, :n_blocks * side], norm)
    chunks = []
    for b in range(n_blocks):
        for band in range(GAN_ROWS // side):
            tile = u[band * side:(band + 1) * side, b * side:(b + 1) * side]
            chunks.append(SpectroChunk(np.ascontiguousarray(tile), norm, band, b))
    return chunks


# ---------------------------------------------------------------- auditory front-ends

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def erb(fc):
    return 24.7 * (4.37 * np.asarray(fc) / 1000.0 + 1.0)


@dataclass(frozen=True)
class FilterBank:
    center_freqs: np.ndarray
    responses: np.ndarray  # n_filters x n_bins magnitude responses

    @property
    def n_filters(self):
        return len(self.center_freqs)


def mel_gammatone_bank(n=64, f_lo=50.0, f_hi=8000.0, sample_rate=SAMPLE_RATE, nfft=NFFT, order=4):
    """Gammatone magnitude responses sampled on the STFT bins, centers uniform in mel."""
    if not (0 < f_lo < f_hi <= sample_rate / 2):
        raise DspError("need 0 < f_lo < f_hi <= sample_rate / 2")
    centers = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    # 1.019 maps the ERB to the bandwidth parameter of a 4th-order gammatone
    b = 1.019 * erb(centers)
    resp = (1.0 + ((freqs[None, :] - centers[:, None]) / b[:, None]) ** 2) ** (-order / 2.0)
    return FilterBank(centers, resp)


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray
    feature_kind: str
    frame_times: np.ndarray

    @property
    def dim(self):
        return self.frames.shape[1]


def _frame_times(t, hop=HOP, nfft=NFFT, sr=SAMPLE_RATE):
    return (np.arange(t) * hop + nfft / 2) / sr


def subband_energies(spec, bank):
    e = (spec.mag.T ** 2) @ (bank.responses.T ** 2)
    return FeatureMatrix(e, "gammatone_energy", _frame_times(spec.n_frames, spec.hop, spec.nfft))


def mel_triangles(n_filters=26, sample_rate=SAMPLE_RATE, nfft=NFFT, f_lo=0.0, f_hi=None):
    f_hi = sample_rate / 2 if f_hi is None else f_hi
    edges = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    fb = np.zeros((n_filters, len(freqs)))
    for i in range(n_filters):
        lo, c, hi = edges[i:i + 3]
        up = (freqs - lo) / (c - lo)
        down = (hi - freqs) / (hi - c)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def deltas(feat, width=2):
    """Regression deltas over +-``width`` frames with edge replication."""
    t = feat.shape[0]
    padded = np.concatenate([np.repeat(feat[:1], width, 0), feat, np.repeat(feat[-1:], width, 0)])
    num = np.zeros_like(feat)
    for k in range(1, width + 1):
        num += k * (padded[width + k:width + k + t] - padded[width - k:width - k + t])
    return num / (2 * sum(k * k for k in range(1, width + 1)))


_MEL_FB = mel_triangles()
_SYM_WINDOW = hamming(NFFT, periodic=False)
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10


def mfcc(w, n_static=19, with_deltas=True, n_mels=26):
    """Cepstra from 26 log mel energies, C0 included, plus delta / delta-delta.

    Frames use the STFT grid (512 samples, hop 256) with a symmetric Hamming
    window; pre-emphasis is applied as its power response on each frame's
    spectrum so features are exactly invariant to time reversal of a frame.
    """
    if w.sample_rate != SAMPLE_RATE:
        raise DspError(f"expected {SAMPLE_RATE} Hz input")
    x = w.samples
    if len(x) < NFFT:
        raise DspError("signal shorter than one frame")
    t = n_frames_for(len(x))
    idx = np.arange(NFFT)[None, :] + HOP * np.arange(t)[:, None]
    power = np.abs(np.fft.rfft(x[idx] * _SYM_WINDOW, axis=1)) ** 2
    omega = np.pi * np.arange(N_BINS) / (N_BINS - 1)
    power *= 1.0 + PREEMPHASIS ** 2 - 2 * PREEMPHASIS * np.cos(omega)
    fb = _MEL_FB if n_mels == 26 else mel_triangles(n_mels)
    logmel = np.log(power @ fb.T + LOG_FLOOR)
    ceps = dct(logmel, type=2, norm="ortho", axis=1)[:, :n_static]
    feats = [ceps]
    if with_deltas:
        d = deltas(ceps)
        feats += [d, deltas(d)]
    return FeatureMatrix(np.hstack(feats), "mfcc", _frame_times(t))
