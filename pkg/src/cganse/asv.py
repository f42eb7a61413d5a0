"""GMM-UBM speaker verification: EM-trained background model, MAP-adapted
speaker models, average log-likelihood-ratio scoring and EER."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .dsp import mfcc

LOG_2PI = np.log(2 * np.pi)
VAR_FLOOR_RATIO = 1e-4
SPLIT_EPS = 0.2
ITERS_PER_SPLIT = 5
RELEVANCE = 16.0
DEAD = 1e-10


class AsvError(ValueError):
    pass


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray  # K
    means: np.ndarray  # K x D
    variances: np.ndarray  # K x D, floored
    var_floor: np.ndarray  # D

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def component_log_probs(self, x):
        """log w_k + log N(x_t; m_k, diag v_k) as a T x K matrix."""
        prec = 1.0 / self.variances
        quad = (x ** 2) @ prec.T - 2.0 * x @ (self.means * prec).T + np.sum(self.means ** 2 * prec, axis=1)
        log_det = np.sum(np.log(self.variances), axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw - 0.5 * (self.dim * LOG_2PI + log_det + quad)

    def frame_log_likelihood(self, x):
        return logsumexp(self.component_log_probs(x), axis=1)

    def sample(self, n, rng):
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class SpeakerModel:
    base: GmmModel
    speaker_id: str
    condition: str = "clean"


@dataclass
class UbmResult:
    model: GmmModel
    history: list = field(default_factory=list)  # (n_components, mean frame log-likelihood)


def _posteriors(model, x):
    lp = model.component_log_probs(x)
    ll = logsumexp(lp, axis=1)
    return np.exp(lp - ll[:, None]), float(np.mean(ll))


def _m_step(model, x, post):
    n_k = post.sum(axis=0)
    live = n_k > DEAD
    w = n_k / n_k.sum()
    means = model.means.copy()
    var = model.variances.copy()
    sx = post.T @ x
    sxx = post.T @ (x ** 2)
    means[live] = sx[live] / n_k[live, None]
    var[live] = sxx[live] / n_k[live, None] - means[live] ** 2
    var = np.maximum(var, model.var_floor)
    return GmmModel(w, means, var, model.var_floor)


def em(model, x, iters, history=None):
    """Run ``iters`` EM iterations; record the mean log-likelihood of each
    model visited (the last entry belongs to the returned model)."""
    for _ in range(iters):
        post, ll = _posteriors(model, x)
        if history is not None:
            history.append((model.n_components, ll))
        model = _m_step(model, x, post)
    if history is not None:
        history.append((model.n_components, float(np.mean(model.frame_log_likelihood(x)))))
    return model


def _split(model, n_new=None):
    """Split the ``n_new`` heaviest components (all by default) into pairs
    perturbed by +-0.2 sigma."""
    k = model.n_components
    n_new = k if n_new is None else n_new
    idx = np.sort(np.argsort(-model.weights, kind="stable")[:n_new])
    sd = np.sqrt(model.variances[idx])
    w = model.weights.copy()
    w[idx] /= 2.0
    means = model.means.copy()
    means[idx] -= SPLIT_EPS * sd
    return GmmModel(np.concatenate([w, w[idx]]), np.concatenate([means, model.means[idx] + SPLIT_EPS * sd]),
                    np.concatenate([model.variances, model.variances[idx]]), model.var_floor)


def train_ubm(x, n_components, iters=ITERS_PER_SPLIT, final_iters=0):
    """Diagonal GMM by binary splitting from the global Gaussian, ``iters`` EM
    iterations after every split and ``final_iters`` more at full size.

    When K is not a power of two the last level splits only the heaviest
    components.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise AsvError("features must be a non-empty T x D matrix")
    k = int(n_components)
    if k < 1:
        raise AsvError("number of components must be positive")
    if k > len(x):
        raise AsvError(f"{k} components but only {len(x)} frames")
    gvar = x.var(axis=0)
    if np.any(gvar <= 0):
        raise AsvError("degenerate features: zero variance in some dimension")
    floor = VAR_FLOOR_RATIO * gvar
    model = GmmModel(np.ones(1), x.mean(axis=0, keepdims=True), np.maximum(gvar, floor)[None, :], floor)
    result = UbmResult(model)
    result.history.append((1, float(np.mean(model.frame_log_likelihood(x)))))
    while model.n_components < k:
        model = em(_split(model, min(model.n_components, k - model.n_components)), x, iters, result.history)
    if final_iters:
        model = em(model, x, final_iters, result.history)
    result.model = model
    return result


def map_adapt(ubm, x, relevance=RELEVANCE, speaker_id="", condition="clean"):
    """Means-only MAP adaptation; weights and variances are the UBM's."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, ubm.dim)
    if len(x) == 0:
        return SpeakerModel(ubm, speaker_id, condition)
    post, _ = _posteriors(ubm, x)
    n_k = post.sum(axis=0)
    means = (post.T @ x + relevance * ubm.means) / (n_k + relevance)[:, None]
    return SpeakerModel(replace(ubm, means=means), speaker_id, condition)


def llr_score(model, ubm, x):
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise AsvError("empty feature sequence")
    base = model.base if isinstance(model, SpeakerModel) else model
    if base.dim != x.shape[1] or ubm.dim != x.shape[1]:
        raise AsvError("feature dimension does not match the models")
    return float(np.mean(base.frame_log_likelihood(x) - ubm.frame_log_likelihood(x)))


# ---------------------------------------------------------------- EER

@dataclass
class ScoreSet:
    target_scores: list = field(default_factory=list)
    impostor_scores: list = field(default_factory=list)


def eer(scores):
    """Equal error rate by a threshold sweep over the pooled scores, linearly
    interpolated where FAR - FRR changes sign."""
    tgt = np.sort(np.asarray(scores.target_scores, dtype=np.float64))
    imp = np.sort(np.asarray(scores.impostor_scores, dtype=np.float64))
    if len(tgt) == 0 or len(imp) == 0:
        raise AsvError("need both target and impostor scores")
    thr = np.unique(np.concatenate([tgt, imp]))
    far = 1.0 - np.searchsorted(imp, thr, side="left") / len(imp)
    frr = np.searchsorted(tgt, thr, side="left") / len(tgt)
    # sentinel past the top score: nothing accepted
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)
    d = far - frr
    hit = np.flatnonzero(d <= 0)[0]
    if d[hit] == 0 or hit == 0:
        return float((far[hit] + frr[hit]) / 2)
    t = d[hit - 1] / (d[hit - 1] - d[hit])
    a = far[hit - 1] + t * (far[hit] - far[hit - 1])
    b = frr[hit - 1] + t * (frr[hit] - frr[hit - 1])
    return float((a + b) / 2)


# ---------------------------------------------------------------- protocol

@dataclass
class AsvConfig:
    n_components: int = 64
    iters: int = ITERS_PER_SPLIT
    final_iters: int = 5
    relevance: float = RELEVANCE


@dataclass
class Trial:
    trial_id: str
    is_target: bool
    score: float

    def line(self):
        return f"{self.trial_id} {'target' if self.is_target else 'impostor'} {self.score:.6f}"


@dataclass
class EerTable:
    """EER per (noise, snr) cell plus a clean column; rows are noise types."""

    cells: dict = field(default_factory=dict)  # (noise, snr) -> eer
    clean: float = float("nan")
    trials: dict = field(default_factory=dict)  # cell key -> list[Trial]

    def noises(self):
        return sorted({n for n, _ in self.cells})

    def snrs(self):
        return sorted({s for _, s in self.cells})

    def row(self, noise):
        vals = [self.cells[(noise, s)] for s in self.snrs() if (noise, s) in self.cells] + [self.clean]
        return vals, float(np.mean(vals))

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        snrs = self.snrs()
        wr.writerow(["noise"] + [f"{s:g}" for s in snrs] + ["clean", "mean"])
        for n in self.noises():
            vals, mean = self.row(n)
            wr.writerow([n] + [f"{100 * v:.2f}" for v in vals] + [f"{100 * mean:.2f}"])
        return buf.getvalue()

    def score_lines(self, key):
        return "".join(t.line() + "\n" for t in self.trials[key])


def _features(waves, enhancer):
    out = []
    for w in waves:
        if enhancer is not None:
            w = enhancer(w)
        out.append(mfcc(w).frames)
    return out


def _score_trials(models, ubm, tests, prefix):
    trials, scores = [], ScoreSet()
    for (uid, spk), feats in tests:
        for model in models:
            s = llr_score(model, ubm, feats)
            is_t = model.speaker_id == spk
            trials.append(Trial(f"{prefix}:{uid}:{model.speaker_id}", is_t, s))
            (scores.target_scores if is_t else scores.impostor_scores).append(s)
    return trials, scores


def run_protocol(clean, noisy, enhancer=None, protocol="clean", cfg=None):
    """Verification EER grid for one front-end.

    ``clean`` is the clean corpus manifest (ubm / enroll / test splits);
    ``noisy`` holds mixed versions of its enroll and test entries. Every
    utterance passes through ``enhancer`` before MFCC extraction. Under the
    clean protocol speaker models come from enhanced clean enrollment speech;
    under the multi-condition protocol they also see the enhanced noisy
    enrollment speech of the noise type under test. Trials are all
    same-text pairs of test utterances and target models.
    """
    if protocol not in ("clean", "multi"):
        raise AsvError("protocol must be 'clean' or 'multi'")
    cfg = cfg or AsvConfig()
    ubm_entries = clean.split("ubm")
    enroll = [e for e in clean.split("enroll")]
    tests = [e for e in clean.split("test")]
    if not ubm_entries or not enroll or not tests:
        raise AsvError("manifest needs ubm, enroll and test splits")
    ubm_feats = np.concatenate(_features([clean.load(e) for e in ubm_entries], enhancer))
    ubm = train_ubm(ubm_feats, cfg.n_components, cfg.iters, cfg.final_iters).model

    speakers = sorted({e.speaker_id for e in enroll})
    clean_enroll = dict(zip([e.utterance_id for e in enroll], _features([clean.load(e) for e in enroll], enhancer)))

    def models_for(extra):
        out = []
        for spk in speakers:
            feats = [clean_enroll[e.utterance_id] for e in enroll if e.speaker_id == spk]
            feats += [f for (uid, s), f in extra if s == spk]
            out.append(map_adapt(ubm, np.concatenate(feats), cfg.relevance, spk,
                                 "clean" if not extra else "multi"))
        return out

    clean_models = models_for([])
    table = EerTable()
    clean_tests = [((e.utterance_id, e.speaker_id), f)
                   for e, f in zip(tests, _features([clean.load(e) for e in tests], enhancer))]
    trials, scores = _score_trials(clean_models, ubm, clean_tests, "clean")
    table.clean = eer(scores)
    table.trials["clean"] = trials

    noisy_test = [e for e in noisy if e.condition is not None and e.split == "test"]
    noisy_enroll = [e for e in noisy if e.condition is not None and e.split == "enroll"]
    for noise in sorted({e.noise_type for e in noisy_test}):
        models = clean_models
        if protocol == "multi":
            ents = [e for e in noisy_enroll if e.noise_type == noise]
            extra = [((e.utterance_id, e.speaker_id), f)
                     for e, f in zip(ents, _features([noisy.load(e) for e in ents], enhancer))]
            models = models_for(extra)
        for snr in sorted({e.snr_db for e in noisy_test if e.noise_type == noise}):
            ents = [e for e in noisy_test if e.noise_type == noise and e.snr_db == snr]
            feats = _features([noisy.load(e) for e in ents], enhancer)
            cell = [((e.utterance_id, e.speaker_id), f) for e, f in zip(ents, feats)]
            trials, scores = _score_trials(models, ubm, cell, f"{noise}_{snr:g}")
            table.cells[(noise, float(snr))] = eer(scores)
            table.trials[(noise, float(snr))] = trials
    return table

