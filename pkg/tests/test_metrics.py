import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cganse.corpus import Waveform, make_noise, mix_at_snr, synth_corpus, mix_manifest
from cganse.metrics import EvalReport, MetricsError, build_report, lsd, seg_snr, stoi


@pytest.fixture(scope="module")
def utt():
    from cganse.corpus import synth_utterance
    return synth_utterance(11, 2, 1, 1)


def test_stoi_identity(utt):
    assert abs(stoi(utt, utt) - 1) < 1e-6


def test_stoi_sign_invariant(utt):
    neg = Waveform(-utt.samples)
    assert abs(stoi(utt, neg) - 1) < 1e-6


@pytest.mark.parametrize("a", [0.1, 10.0])
def test_stoi_scale_invariant(utt, a):
    y = mix_at_snr(utt, make_noise("white", len(utt), 1), 5.0)
    ref = stoi(utt, y)
    assert abs(stoi(utt, Waveform(a * y.samples)) - ref) < 1e-6


def test_stoi_monotone_in_snr(utt):
    noise = make_noise("white", len(utt), 2)
    vals = [stoi(utt, mix_at_snr(utt, noise, snr)) for snr in (20, 10, 0, -10)]
    assert all(a > b for a, b in zip(vals, vals[1:])), vals


# values produced by an independent reference STOI implementation on the
# same 10 kHz signals
FROZEN = {20: 0.9548179955058514, 5: 0.7677444985775116, 0: 0.6742130177499475,
          -10: 0.4981831731111394, None: 0.40847947157102676}


@pytest.mark.parametrize("snr", list(FROZEN))
def test_stoi_frozen_reference(utt, snr):
    if snr is None:
        y = make_noise("white", len(utt), 3)
    else:
        y = mix_at_snr(utt, make_noise("white", len(utt), 2), snr)
    assert abs(stoi(utt, y) - FROZEN[snr]) < 1e-9


def test_stoi_too_short():
    rng = np.random.default_rng(0)
    with pytest.raises(MetricsError):
        stoi(Waveform(rng.standard_normal(3000)), Waveform(rng.standard_normal(3000)))


def test_stoi_unequal_lengths_trimmed(utt):
    longer = Waveform(np.concatenate([utt.samples, np.ones(500)]))
    assert abs(stoi(utt, longer) - 1) < 1e-6


def test_seg_snr_anchors():
    rng = np.random.default_rng(1)
    x = Waveform(rng.standard_normal(16000))
    assert seg_snr(x, x) == 35.0
    assert abs(seg_snr(x, Waveform(2 * x.samples))) < 1e-12
    assert seg_snr(x, Waveform(-50 * x.samples)) == -10.0


def test_lsd_anchors():
    rng = np.random.default_rng(2)
    x = Waveform(rng.standard_normal(16000))
    assert lsd(x, x) == 0.0
    assert abs(lsd(x, Waveform(10 * x.samples)) - 20) < 1e-3
    y = Waveform(rng.standard_normal(16000))
    assert abs(lsd(x, y) - lsd(y, x)) < 1e-9


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), g=st.floats(0.2, 5.0))
def test_lsd_symmetric_and_nonnegative(seed, g):
    rng = np.random.default_rng(seed)
    x = Waveform(rng.standard_normal(4000))
    y = Waveform(g * rng.standard_normal(4000))
    assert lsd(x, y) >= 0
    assert abs(lsd(x, y) - lsd(y, x)) < 1e-9


def test_report_mean_column_and_csv(tmp_path):
    rep = EvalReport({
        ("none", "white", 0.0): {"stoi": 0.5, "seg_snr": 1.0, "lsd": 3.0},
        ("none", "white", 5.0): {"stoi": 0.7, "seg_snr": 2.0, "lsd": 2.0},
    })
    m = rep.means("none", "white")
    assert abs(m["stoi"] - 0.6) < 1e-12
    lines = rep.to_csv().splitlines()
    assert lines[0] == "front_end,noise,snr,stoi,seg_snr,lsd"
    assert lines[-1].startswith("none,white,mean,0.600000")
    assert "mean" in rep.to_table().splitlines()[0]


def _identity(w):
    return w


def test_build_report_grid(tmp_path):
    clean = synth_corpus(tmp_path / "c", 3, 2, seed=5, n_syllables=3)
    noisy = mix_manifest(clean, tmp_path / "n", "white", (0, 20), seed=1, splits={"test"})
    rep = build_report(noisy, clean, {"none": None, "ident": _identity})
    assert set(rep.keys()) == {(f, "white", s) for f in ("ident", "none") for s in (0.0, 20.0)}
    for f in ("ident", "none"):
        assert rep.cells[(f, "white", 20.0)]["stoi"] > rep.cells[(f, "white", 0.0)]["stoi"]
        for mcol in ("stoi", "seg_snr", "lsd"):
            cells = [rep.cells[(f, "white", s)][mcol] for s in (0.0, 20.0)]
            assert abs(rep.means(f, "white")[mcol] - np.mean(cells)) < 1e-12
    assert rep.to_csv() == build_report(noisy, clean, {"none": None, "ident": _identity}, jobs=2).to_csv()
