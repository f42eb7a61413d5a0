"""Waveform I/O, a synthetic speech-like corpus, noise synthesis and SNR mixing."""

from __future__ import annotations

import json
import os
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter, resample_poly

SAMPLE_RATE = 16000
NOISE_TYPES = ("babble", "white", "cantine_like", "market_like", "airplane_like")
TEST_SNRS = (0, 5, 10, 15, 20)
TRAIN_SNRS = (10, 20)
BABBLE_TALKERS = 6
# long enough for the 1000-sample noise-only lead plus a 384 ms STOI segment
MIN_UTTERANCE = 20000


class CorpusError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise CorpusError("waveform must be mono (1-D)")
        if self.sample_rate <= 0:
            raise CorpusError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise CorpusError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


# ---------------------------------------------------------------- WAV I/O

def load_wav(path, resample=False, target_rate=SAMPLE_RATE):
    """Read a 16-bit PCM mono RIFF/WAVE file into a :class:`Waveform`.

    Files at another rate are rejected unless ``resample`` is set.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            comp = fh.getcomptype()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise CorpusError(f"{path}: unsupported WAV encoding ({exc})") from exc
    if comp != "NONE" or width != 2:
        raise CorpusError(f"{path}: only linear PCM 16-bit is supported")
    if channels != 1:
        raise CorpusError(f"{path}: expected mono, got {channels} channels")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if rate != target_rate:
        if not resample:
            raise CorpusError(f"{path}: sample rate {rate} Hz != {target_rate} Hz (pass resample=True)")
        g = np.gcd(rate, target_rate)
        samples = resample_poly(samples, target_rate // g, rate // g)
        rate = target_rate
    return Waveform(samples, rate)


def save_wav(path, w):
    """Write ``w`` as 16-bit PCM; amplitudes are clamped to [-1, 1] here only."""
    x = np.clip(w.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())
    return path


# ---------------------------------------------------------------- noise

def white_noise(length, seed):
    if length <= 0:
        raise CorpusError("length must be positive")
    rng = np.random.default_rng(seed)
    return Waveform(rng.standard_normal(length))


# one-pole low-pass coefficient, slow amplitude modulation depth and rate (Hz)
_COLORED = {
    "cantine_like": (0.55, 0.3, 3.0),
    "market_like": (0.75, 0.4, 1.3),
    "airplane_like": (0.95, 0.05, 0.2),
}


def colored_noise(noise_type, length, seed):
    """Low-pass filtered Gaussian noise with a type-specific tilt, unit RMS."""
    if noise_type not in _COLORED:
        raise CorpusError(f"unknown colored noise type {noise_type!r}")
    a, depth, rate = _COLORED[noise_type]
    rng = np.random.default_rng(seed)
    x = lfilter([1.0 - a], [1.0, -a], rng.standard_normal(length + 2000))[2000:]
    t = np.arange(length) / SAMPLE_RATE
    env = 1.0 + depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    x = x * env
    return Waveform(x / np.sqrt(np.mean(x ** 2)))


def make_babble(speech, length, seed=0, offsets=None):
    """Sum six talkers cropped at seeded random offsets, normalized to unit RMS."""
    if len(speech) < BABBLE_TALKERS:
        raise CorpusError(f"babble needs {BABBLE_TALKERS} talkers, got {len(speech)}")
    speech = speech[:BABBLE_TALKERS]
    rng = np.random.default_rng(seed)
    out = np.zeros(length)
    for i, w in enumerate(speech):
        if len(w) < length:
            raise CorpusError("babble source shorter than requested length")
        off = offsets[i] if offsets is not None else int(rng.integers(0, len(w) - length + 1))
        out += w.samples[off:off + length]
    rms = np.sqrt(np.mean(out ** 2))
    if rms == 0:
        raise CorpusError("babble sources are silent")
    return Waveform(out / rms)


def babble_noise(length, seed):
    rng = np.random.default_rng(seed)
    talkers = []
    for i in range(BABBLE_TALKERS):
        voice = _voice_params(np.random.default_rng([seed, 7919, i]))
        n_syll = int(np.ceil(length / SAMPLE_RATE / 0.22)) + 4
        talkers.append(_render(voice, _phrase(rng, n_syll), rng, lead_silence=0.0))
    return make_babble(talkers, length, seed=seed)


def make_noise(noise_type, length, seed):
    if noise_type == "white":
        return white_noise(length, seed)
    if noise_type == "babble":
        return babble_noise(length, seed)
    if noise_type in _COLORED:
        return colored_noise(noise_type, length, seed)
    raise CorpusError(f"unknown noise type {noise_type!r}; choose from {', '.join(NOISE_TYPES)}")


def mix_at_snr(clean, noise, snr_db, seed=0):
    """Add a seeded random crop of ``noise`` scaled so the full-utterance SNR is ``snr_db``."""
    if clean.sample_rate != noise.sample_rate:
        raise CorpusError("sample rate mismatch between clean and noise")
    if not np.isfinite(snr_db):
        raise CorpusError("snr_db must be finite")
    n = len(clean)
    if len(noise) < n:
        raise CorpusError("noise shorter than clean signal")
    p_clean = np.mean(clean.samples ** 2)
    if p_clean == 0:
        raise CorpusError("clean signal is silent; SNR undefined")
    rng = np.random.default_rng(seed)
    off = int(rng.integers(0, len(noise) - n + 1))
    crop = noise.samples[off:off + n]
    p_noise = np.mean(crop ** 2)
    if p_noise == 0:
        raise CorpusError("noise crop is silent")
    g = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + g * crop, clean.sample_rate)


# ---------------------------------------------------------------- synthetic speech

# (F1, F2, F3) in Hz for an average adult voice
_VOWELS = np.array([
    [730, 1090, 2440],   # a
    [270, 2290, 3010],   # i
    [300, 870, 2240],    # u
    [530, 1840, 2480],   # e
    [570, 840, 2410],    # o
    [660, 1720, 2410],   # ae
    [490, 1350, 1690],   # er
])


@dataclass(frozen=True)
class Voice:
    f0: float
    formant_scale: float
    bandwidth_scale: float
    breath: float
    tilt: float


def _voice_params(rng):
    return Voice(
        f0=float(rng.uniform(85.0, 230.0)),
        formant_scale=float(rng.uniform(0.85, 1.2)),
        bandwidth_scale=float(rng.uniform(0.8, 1.3)),
        breath=float(rng.uniform(0.01, 0.05)),
        tilt=float(rng.uniform(0.88, 0.97)),
    )


def speaker_voice(seed, speaker_index):
    """Voice parameters of a corpus speaker. Pitch bases are spread on a grid
    with jitter so two speakers never share a base frequency."""
    rng = np.random.default_rng([seed, 104729, speaker_index])
    v = _voice_params(rng)
    golden = (speaker_index * 0.6180339887) % 1.0
    f0 = 85.0 + 145.0 * golden + float(rng.uniform(-1.0, 1.0))
    return Voice(f0, v.formant_scale, v.bandwidth_scale, v.breath, v.tilt)


def _phrase(rng, n_syllables):
    """Random syllable plan: (vowel index, duration s, fricative onset, gap s)."""
    plan = []
    for _ in range(n_syllables):
        plan.append((
            int(rng.integers(len(_VOWELS))),
            float(rng.uniform(0.12, 0.24)),
            bool(rng.random() < 0.4),
            float(rng.uniform(0.02, 0.08)),
        ))
    return plan


def _resonator(freq, bw, fs=SAMPLE_RATE):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    b = [1.0 + a[1] + a[2]]  # unit gain at DC
    return b, a


def _render(voice, plan, rng, lead_silence=0.12, trail_silence=0.1, session_jitter=0.0):
    fs = SAMPLE_RATE
    pieces = [np.zeros(int(lead_silence * fs))]
    f0_base = voice.f0 * (1.0 + session_jitter)
    n_total = sum(int((d + g) * fs) for _, d, _, g in plan)
    elapsed = 0
    for vowel, dur, fricative, gap in plan:
        n = int(dur * fs)
        t = np.arange(n) / fs
        # declining pitch contour over the phrase plus a per-syllable inflection
        decl = 1.0 - 0.15 * (elapsed / max(n_total, 1))
        f0 = f0_base * decl * (1.0 + 0.06 * np.sin(np.pi * t / dur) * rng.uniform(-1, 1))
        phase = np.cumsum(f0 / fs)
        pulses = np.diff(np.floor(phase), prepend=0.0)
        src = lfilter([1.0 - voice.tilt], [1.0, -voice.tilt], pulses)
        src = lfilter([1.0 - voice.tilt], [1.0, -voice.tilt], src)
        src = src + voice.breath * rng.standard_normal(n) * 0.05
        y = np.zeros(n)
        formants = _VOWELS[vowel] * voice.formant_scale * rng.uniform(0.97, 1.03, size=3)
        for k, (fk, bw) in enumerate(zip(formants, (80.0, 100.0, 140.0))):
            b, a = _resonator(min(fk, 7000.0), bw * voice.bandwidth_scale)
            y += lfilter(b, a, src) * (1.0, 0.6, 0.35)[k]
        env = np.sin(np.pi * np.minimum(t / 0.03, 1.0) / 2) * np.sin(np.pi * np.minimum((dur - t) / 0.04, 1.0) / 2)
        y *= np.clip(env, 0, 1)
        if fricative:
            nf = int(0.05 * fs)
            fric = np.diff(rng.standard_normal(nf + 1)) * 0.02
            fric *= np.hanning(nf)
            y[:nf] += fric
        pieces.append(y)
        ng = int(gap * fs)
        pieces.append(voice.breath * 0.02 * rng.standard_normal(ng))
        elapsed += n + ng
    pieces.append(np.zeros(int(trail_silence * fs)))
    x = np.concatenate(pieces)
    if len(x) < MIN_UTTERANCE:
        x = np.concatenate([x, np.zeros(MIN_UTTERANCE - len(x))])
    peak = np.max(np.abs(x))
    return Waveform(0.5 * x / peak if peak > 0 else x)


def synth_utterance(seed, speaker_index, text_id, session_id, n_syllables=6):
    """One utterance: the phrase depends on ``text_id``, the voice on the speaker,
    and small pitch/formant perturbations on the session."""
    voice = speaker_voice(seed, speaker_index)
    plan = _phrase(np.random.default_rng([seed, 15485863, text_id]), n_syllables)
    rng = np.random.default_rng([seed, speaker_index, text_id, session_id])
    jitter = float(rng.uniform(-0.03, 0.03))
    return _render(voice, plan, rng, session_jitter=jitter)


# ---------------------------------------------------------------- manifest

@dataclass
class ManifestEntry:
    utterance_id: str
    speaker_id: str
    text_id: int
    session_id: int
    file_path: str
    condition: dict | None = None
    split: str = ""
    clean_id: str | None = None

    @property
    def noise_type(self):
        return None if self.condition is None else self.condition["noise_type"]

    @property
    def snr_db(self):
        return None if self.condition is None else self.condition["snr_db"]


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    root: str = "."

    def __post_init__(self):
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate utterance_id in manifest")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def by_id(self):
        return {e.utterance_id: e for e in self.entries}

    def path(self, entry):
        p = Path(entry.file_path)
        return p if p.is_absolute() else Path(self.root) / p

    def load(self, entry):
        return load_wav(self.path(entry))

    def dumps(self):
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.entries)

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def read(cls, path, check_files=True):
        path = Path(path)
        entries = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                entries.append(ManifestEntry(**json.loads(line)))
        m = cls(entries, root=str(path.parent))
        if check_files:
            for e in entries:
                if not m.path(e).exists():
                    raise CorpusError(f"manifest entry {e.utterance_id}: missing file {e.file_path}")
        return m


SPLITS = ("ubm", "enhancer_train", "enroll", "test")


def _speaker_role(i, n_speakers):
    # small corpora keep everyone in the verification pool
    if n_speakers < 3:
        return ("target", "ubm")[i % 2]
    return ("target", "ubm", "enhancer_train")[i % 3]


def synth_corpus(out_dir, n_speakers, utterances_per_speaker, seed, n_syllables=6):
    """Render a speaker corpus to ``out_dir`` and return its manifest.

    Speakers are dealt round-robin into three pools. Verification speakers all
    read text 1 over successive sessions; the first third of their sessions is
    the enrollment split and the rest the test split. The other pools read
    distinct texts and feed UBM training and enhancer training respectively.
    """
    if n_speakers < 2:
        raise CorpusError("need at least two speakers")
    if utterances_per_speaker < 1:
        raise CorpusError("need at least one utterance per speaker")
    out = Path(out_dir)
    try:
        (out / "wav").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise CorpusError(f"output directory {out} is not writable")
    entries = []
    n_enroll = max(1, -(-utterances_per_speaker // 3))
    for s in range(n_speakers):
        role = _speaker_role(s, n_speakers)
        spk = f"spk{s:03d}"
        for u in range(utterances_per_speaker):
            if role == "target":
                text_id, session = 1, u + 1
                split = "enroll" if u < n_enroll else "test"
            else:
                text_id, session = u + 2, 1
                split = "ubm" if role == "ubm" else "enhancer_train"
            w = synth_utterance(seed, s, text_id, session, n_syllables)
            uid = f"{spk}_t{text_id:02d}_s{session:02d}"
            rel = f"wav/{uid}.wav"
            save_wav(out / rel, w)
            entries.append(ManifestEntry(uid, spk, text_id, session, rel, None, split))
    m = Manifest(entries, root=str(out))
    m.save(out / "manifest.jsonl")
    return m


def mix_manifest(manifest, out_dir, noise_type, snrs, seed, splits=None):
    """Mix every selected clean entry with ``noise_type`` at each SNR in ``snrs``."""
    if noise_type not in NOISE_TYPES:
        raise CorpusError(f"unknown noise type {noise_type!r}")
    out = Path(out_dir)
    entries = []
    for i, e in enumerate(manifest):
        if e.condition is not None or (splits is not None and e.split not in splits):
            continue
        clean = manifest.load(e)
        # distinct noise realisation per utterance; train and test splits never share seeds
        nseed = [seed, SPLITS.index(e.split) if e.split in SPLITS else 9, i, NOISE_TYPES.index(noise_type)]
        noise = make_noise(noise_type, len(clean) + SAMPLE_RATE, np.random.SeedSequence(nseed).generate_state(1)[0])
        for snr in snrs:
            mixed = mix_at_snr(clean, noise, float(snr), seed=nseed + [int(round(snr * 100)) + 5000])
            uid = f"{e.utterance_id}__{noise_type}_{_snr_tag(snr)}"
            rel = f"wav/{uid}.wav"
            save_wav(out / rel, mixed)
            entries.append(ManifestEntry(
                uid, e.speaker_id, e.text_id, e.session_id, rel,
                {"noise_type": noise_type, "snr_db": float(snr)}, e.split, e.utterance_id,
            ))
    return Manifest(entries, root=str(out))


def _snr_tag(snr):
    s = f"{float(snr):g}".replace("-", "m").replace(".", "p")
    return f"{s}dB"


def merge_manifests(*manifests, root):
    """Concatenate manifests, rewriting relative paths against ``root``."""
    root = Path(root).resolve()
    entries = []
    for m in manifests:
        for e in m:
            p = m.path(e).resolve()
            try:
                rel = str(p.relative_to(root))
            except ValueError:
                rel = str(p)
            entries.append(ManifestEntry(**{**asdict(e), "file_path": rel}))
    return Manifest(entries, root=str(root))
