"""Objective evaluation: STOI, segmental SNR, log-spectral distance and the
per-condition report."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .corpus import SAMPLE_RATE, Waveform
from .dsp import analyze

STOI_RATE = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30  # 384 ms at 10 kHz / hop 128
STOI_BETA = -15.0
DYN_RANGE = 40.0
EPS = np.finfo(np.float64).eps


class MetricsError(ValueError):
    pass


def _third_octave_matrix(fs=STOI_RATE, nfft=STOI_NFFT, n_bands=STOI_BANDS, f_min=STOI_MIN_FREQ):
    f = np.linspace(0, fs, nfft + 1)[:nfft // 2 + 1]
    k = np.arange(n_bands, dtype=np.float64)
    lo = f_min * 2.0 ** ((2 * k - 1) / 6)
    hi = f_min * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((n_bands, len(f)))
    for i in range(n_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


_OBM = _third_octave_matrix()
_STOI_WIN = np.hanning(STOI_FRAME + 2)[1:-1]


def _frames(x, n=STOI_FRAME, hop=STOI_FRAME // 2):
    starts = np.arange(0, len(x) - n, hop)
    return x[starts[:, None] + np.arange(n)[None, :]] * _STOI_WIN


def _overlap_add(frames, hop=STOI_FRAME // 2):
    n = frames.shape[1]
    out = np.zeros((len(frames) - 1) * hop + n) if len(frames) else np.zeros(0)
    for i, fr in enumerate(frames):
        out[i * hop:i * hop + n] += fr
    return out


def _remove_silence(x, y):
    """Drop frames more than 40 dB below the loudest clean frame, then
    re-synthesize both signals from the kept frames."""
    fx, fy = _frames(x), _frames(y)
    energy = 20 * np.log10(np.linalg.norm(fx, axis=1) + EPS)
    keep = energy > np.max(energy) - DYN_RANGE
    return _overlap_add(fx[keep]), _overlap_add(fy[keep])


def _band_envelopes(x):
    fr = _frames(x)
    spec = np.abs(np.fft.rfft(fr, n=STOI_NFFT, axis=1)) ** 2
    return np.sqrt(spec @ _OBM.T).T  # bands x frames


def _prep(w):
    if w.sample_rate != SAMPLE_RATE:
        raise MetricsError(f"expected {SAMPLE_RATE} Hz input")
    return resample_poly(w.samples, 5, 8)


def stoi(clean, processed):
    """Short-time objective intelligibility of ``processed`` against ``clean``."""
    n = min(len(clean), len(processed))
    x = _prep(Waveform(clean.samples[:n], clean.sample_rate))
    y = _prep(Waveform(processed.samples[:n], processed.sample_rate))
    x, y = _remove_silence(x, y)
    if len(x) < STOI_FRAME * 2:
        raise MetricsError("active speech region too short for STOI")
    X, Y = _band_envelopes(x), _band_envelopes(y)
    t = X.shape[1]
    if t < STOI_SEGMENT:
        raise MetricsError(f"need {STOI_SEGMENT} active frames (384 ms), got {t}")
    clip = 1.0 + 10.0 ** (-STOI_BETA / 20.0)
    # all segments at once: (segments, bands, frames)
    idx = np.arange(STOI_SEGMENT)[None, :] + np.arange(t - STOI_SEGMENT + 1)[:, None]
    xs = X[:, idx].transpose(1, 0, 2)
    ys = Y[:, idx].transpose(1, 0, 2)
    scale = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + EPS)
    yp = np.minimum(ys * scale, xs * clip)
    xc = xs - xs.mean(axis=2, keepdims=True)
    yc = yp - yp.mean(axis=2, keepdims=True)
    xc /= np.linalg.norm(xc, axis=2, keepdims=True) + EPS
    yc /= np.linalg.norm(yc, axis=2, keepdims=True) + EPS
    return float(np.mean(np.sum(xc * yc, axis=2)))


SEG_FRAME = 512  # 32 ms
SEG_CLAMP = (-10.0, 35.0)


def _active_frames(energy):
    top = np.max(energy)
    if top <= 0:
        return np.zeros(len(energy), dtype=bool)
    return energy > top * 10 ** (-DYN_RANGE / 10)


def seg_snr(clean, processed):
    n = min(len(clean), len(processed))
    t = n // SEG_FRAME
    if t < 1:
        raise MetricsError("signal shorter than one 32 ms frame")
    c = clean.samples[:t * SEG_FRAME].reshape(t, SEG_FRAME)
    p = processed.samples[:t * SEG_FRAME].reshape(t, SEG_FRAME)
    sig = np.sum(c ** 2, axis=1)
    err = np.sum((c - p) ** 2, axis=1)
    active = _active_frames(sig)
    if not active.any():
        raise MetricsError("clean signal is silent")
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(sig[active] / err[active])
    return float(np.mean(np.clip(snr, *SEG_CLAMP)))


def lsd(clean, processed, eps=1e-8):
    n = min(len(clean), len(processed))
    mc = analyze(Waveform(clean.samples[:n], clean.sample_rate)).mag
    mp = analyze(Waveform(processed.samples[:n], processed.sample_rate)).mag
    active = _active_frames(np.sum(mc ** 2, axis=0))
    if not active.any():
        raise MetricsError("clean signal is silent")
    d = 20 * np.log10((mc[:, active] + eps) / (mp[:, active] + eps))
    return float(np.sqrt(np.mean(d ** 2)))


# ---------------------------------------------------------------- report

REPORT_COLUMNS = ("front_end", "noise", "snr", "stoi", "seg_snr", "lsd")
METRICS = ("stoi", "seg_snr", "lsd")


@dataclass
class EvalReport:
    """Cells keyed by (front_end, noise_type, snr_db) holding mean metrics."""

    cells: dict = field(default_factory=dict)

    def keys(self):
        return sorted(self.cells)

    def means(self, front_end, noise):
        rows = [v for (f, n, _), v in self.cells.items() if f == front_end and n == noise]
        return {m: float(np.mean([r[m] for r in rows])) for m in METRICS}

    def blocks(self):
        return sorted({(f, n) for f, n, _ in self.cells})

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(REPORT_COLUMNS)
        for f, n in self.blocks():
            for snr in sorted(s for ff, nn, s in self.cells if (ff, nn) == (f, n)):
                c = self.cells[(f, n, snr)]
                wr.writerow([f, n, f"{snr:g}"] + [f"{c[m]:.6f}" for m in METRICS])
            mean = self.means(f, n)
            wr.writerow([f, n, "mean"] + [f"{mean[m]:.6f}" for m in METRICS])
        return buf.getvalue()

    def to_table(self, metric="stoi"):
        """Aligned text table: one row per front-end/noise, SNR columns plus mean."""
        snrs = sorted({s for _, _, s in self.cells})
        head = ["front_end", "noise"] + [f"{s:g}" for s in snrs] + ["mean"]
        rows = []
        for f, n in self.blocks():
            vals = [self.cells.get((f, n, s), {}).get(metric) for s in snrs]
            rows.append([f, n] + ["-" if v is None else f"{v:.3f}" for v in vals]
                        + [f"{self.means(f, n)[metric]:.3f}"])
        widths = [max(len(str(r[i])) for r in [head] + rows) for i in range(len(head))]
        lines = ["  ".join(str(c).rjust(w) for c, w in zip(r, widths)) for r in [head] + rows]
        return "\n".join(lines) + "\n"


def _score_one(args):
    enhancer, clean_path, noisy_path = args
    from .corpus import load_wav
    clean, noisy = load_wav(clean_path), load_wav(noisy_path)
    out = noisy if enhancer is None else enhancer(noisy)
    return {"stoi": stoi(clean, out), "seg_snr": seg_snr(clean, out), "lsd": lsd(clean, out)}


def build_report(noisy, clean, enhancers, jobs=1):
    """Score every noisy entry of ``noisy`` with every enhancer.

    ``enhancers`` maps front-end names to picklable callables Waveform ->
    Waveform; ``None`` means no enhancement. Work fans out over ``jobs``
    processes; results are merged in a fixed order so the report does not
    depend on scheduling.
    """
    by_id = clean.by_id()
    entries = [e for e in noisy if e.condition is not None]
    tasks, keys = [], []
    for name in sorted(enhancers):
        for e in entries:
            if e.clean_id not in by_id:
                raise MetricsError(f"{e.utterance_id}: clean reference {e.clean_id!r} not found")
            tasks.append((enhancers[name], str(clean.path(by_id[e.clean_id])), str(noisy.path(e))))
            keys.append((name, e.noise_type, float(e.snr_db)))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            scores = list(ex.map(_score_one, tasks))
    else:
        scores = [_score_one(t) for t in tasks]
    grouped = {}
    for k, s in zip(keys, scores):
        grouped.setdefault(k, []).append(s)
    cells = {k: {m: float(np.mean([s[m] for s in v])) for m in METRICS} for k, v in grouped.items()}
    return EvalReport(cells)
