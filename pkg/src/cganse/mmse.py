"""STSA-MMSE enhancement: noise PSD tracking, decision-directed a priori SNR,
and the Ephraim-Malah amplitude gain."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .corpus import SAMPLE_RATE, Waveform
from .dsp import HOP, NFFT, N_BINS, analyze, synthesize

ALPHA = 0.98
XI_MIN = 10.0 ** (-25.0 / 10.0)
GAIN_CAP = 10.0
PSD_FLOOR = 1e-10
INIT_SAMPLES = 1000

# noise tracker
BETA = 0.8
SAFETY_WINDOW_S = 1.5
XI_H1 = 10.0 ** (15.0 / 10.0)  # fixed a priori SNR under speech presence
SPP_SMOOTH = 0.9
SPP_STUCK = 0.99
PERIODOGRAM_SMOOTH = 0.8
# E[min] of the smoothed periodogram over the window is ~0.45 of the mean for
# noise-only input; the safety net undoes that bias
MIN_BIAS = 2.2


class MmseError(ValueError):
    pass


# ---------------------------------------------------------------- Bessel

_SERIES_MAX = 15.0


def _ie_series(x, order):
    """exp(-x) * I_order(x) by the ascending series (all terms positive)."""
    h = x / 2.0
    term = np.ones_like(x) if order == 0 else h.copy()
    total = term.copy()
    q = h * h
    for k in range(1, 80):
        term = term * q / (k * (k + order))
        total += term
    return total * np.exp(-x)


def _ie_asymptotic(x, order):
    """exp(-x) * I_order(x) by the Hankel expansion, valid for large x."""
    mu = 4.0 * order * order
    term = np.ones_like(x)
    total = term.copy()
    for k in range(1, 30):
        term = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        total += term
    return total / np.sqrt(2.0 * np.pi * x)


def bessel_ie(order, x):
    """Exponentially scaled modified Bessel function exp(-x) I_order(x), order 0 or 1."""
    if order not in (0, 1):
        raise ValueError("only orders 0 and 1 are implemented")
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("argument must be non-negative")
    out = np.empty_like(x)
    small = x <= _SERIES_MAX
    out[small] = _ie_series(x[small], order)
    out[~small] = _ie_asymptotic(x[~small], order)
    return out


def bessel_i(order, x):
    x = np.asarray(x, dtype=np.float64)
    return bessel_ie(order, x) * np.exp(x)


# ---------------------------------------------------------------- gain

def stsa_gain(xi, gamma):
    """MMSE short-time spectral amplitude gain, capped at ``GAIN_CAP``.

    The exp(-v/2) factor is folded into the scaled Bessel functions so large
    arguments never overflow.
    """
    xi = np.asarray(xi, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(xi <= 0) or np.any(gamma <= 0):
        raise MmseError("xi and gamma must be positive")
    nu = xi * gamma / (1.0 + xi)
    half = nu / 2.0
    g = (np.sqrt(np.pi) / 2.0) * (np.sqrt(nu) / gamma) * (
        (1.0 + nu) * bessel_ie(0, half) + nu * bessel_ie(1, half)
    )
    return np.minimum(g, GAIN_CAP)


# ---------------------------------------------------------------- state

@dataclass
class MmseState:
    noise_psd: np.ndarray
    prev_gain: np.ndarray
    prev_gamma: np.ndarray
    alpha: float = ALPHA
    spp_avg: np.ndarray = None
    smoothed: np.ndarray = None
    history: deque = field(default_factory=deque)
    window_frames: int = int(round(SAFETY_WINDOW_S * SAMPLE_RATE / HOP))

    @classmethod
    def start(cls, noise_psd, alpha=ALPHA):
        if not 0.0 <= alpha < 1.0:
            raise MmseError("alpha must be in [0, 1)")
        f = len(noise_psd)
        return cls(np.asarray(noise_psd, dtype=np.float64).copy(), np.zeros(f), np.zeros(f), alpha,
                   np.zeros(f), None, deque())


def init_noise_psd(w, n_samples=INIT_SAMPLES):
    """Average periodogram over the frames lying entirely in the first ``n_samples``."""
    if len(w) < n_samples:
        raise MmseError(f"utterance shorter than {n_samples} samples")
    n_frames = (n_samples - NFFT) // HOP + 1
    if n_frames < 1:
        raise MmseError("initialization region shorter than one frame")
    x = w.samples[:(n_frames - 1) * HOP + NFFT]
    spec = analyze(Waveform(x, w.sample_rate))
    psd = np.mean(spec.mag[:, :n_frames] ** 2, axis=1)
    return np.maximum(psd, PSD_FLOOR)


def update_noise_psd(state, periodogram):
    """One frame of the speech-presence-weighted noise tracker.

    The posterior probability of speech presence (fixed 15 dB prior SNR)
    blends the current periodogram with the previous estimate into an MMSE
    estimate of the noise power, which is smoothed recursively. The result
    may not drop below the bias-compensated minimum of the smoothed
    periodogram over the last 1.5 s.
    """
    prev = state.noise_psd
    gamma = periodogram / prev
    # P(H1 | y) with equal priors
    expo = np.minimum(gamma * XI_H1 / (1.0 + XI_H1), 700.0)
    p1 = 1.0 / (1.0 + (1.0 + XI_H1) * np.exp(-expo))
    state.spp_avg = SPP_SMOOTH * state.spp_avg + (1.0 - SPP_SMOOTH) * p1
    p1 = np.where(state.spp_avg > SPP_STUCK, np.minimum(p1, SPP_STUCK), p1)
    noise_power = (1.0 - p1) * periodogram + p1 * prev
    est = BETA * prev + (1.0 - BETA) * noise_power

    if state.smoothed is None:
        state.smoothed = periodogram.copy()
    else:
        state.smoothed = PERIODOGRAM_SMOOTH * state.smoothed + (1.0 - PERIODOGRAM_SMOOTH) * periodogram
    state.history.append(state.smoothed.copy())
    if len(state.history) > state.window_frames:
        state.history.popleft()
    if len(state.history) == state.window_frames:
        floor = MIN_BIAS * np.min(np.stack(state.history), axis=0)
        est = np.maximum(est, floor)
    state.noise_psd = np.maximum(est, PSD_FLOOR)
    return state.noise_psd


def decision_directed_xi(state, gamma):
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma < 0):
        raise MmseError("gamma must be non-negative")
    xi = state.alpha * state.prev_gain ** 2 * state.prev_gamma + (1.0 - state.alpha) * np.maximum(gamma - 1.0, 0.0)
    return np.maximum(xi, XI_MIN)


def mmse_gains(w, track_noise=True):
    """Per-bin gains (F x T) for ``w`` together with its spectrogram."""
    spec = analyze(w)
    state = MmseState.start(init_noise_psd(w))
    power = spec.mag ** 2
    gains = np.empty_like(power)
    for t in range(spec.n_frames):
        if track_noise:
            update_noise_psd(state, power[:, t])
        gamma = np.maximum(power[:, t] / state.noise_psd, 1e-12)
        xi = decision_directed_xi(state, gamma)
        g = stsa_gain(xi, gamma)
        gains[:, t] = g
        state.prev_gain, state.prev_gamma = g, gamma
    return gains, spec


def enhance_mmse(w):
    """Enhance with STSA-MMSE gains and the noisy phase; length is preserved."""
    gains, spec = mmse_gains(w)
    return synthesize(spec.with_mag(gains * spec.mag), len(w))
