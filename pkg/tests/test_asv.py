import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment
from scipy.stats import norm

from cganse.asv import (
    AsvConfig, AsvError, GmmModel, ScoreSet, eer, llr_score, map_adapt,
    run_protocol, train_ubm,
)
from cganse.corpus import mix_manifest, synth_corpus, merge_manifests


def three_blobs(n=3000, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    lab = rng.integers(0, 3, n)
    return centers[lab] + 0.7 * rng.standard_normal((n, 2)), centers


def test_single_component_is_mle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((500, 3)) * [1, 2, 3] + [1, -1, 0]
    m = train_ubm(x, 1).model
    np.testing.assert_allclose(m.means[0], x.mean(axis=0), rtol=0, atol=1e-12)
    np.testing.assert_allclose(m.variances[0], x.var(axis=0), rtol=1e-12)
    np.testing.assert_array_equal(m.weights, [1.0])


def test_three_component_recovery():
    x, centers = three_blobs()
    m = train_ubm(x, 3, iters=5, final_iters=50).model
    assert m.n_components == 3
    cost = np.linalg.norm(m.means[:, None] - centers[None], axis=2)
    r, c = linear_sum_assignment(cost)
    assert np.max(cost[r, c]) < 0.1


def test_em_three_component_direct():
    from cganse.asv import em
    x, centers = three_blobs(seed=2)
    floor = 1e-4 * x.var(axis=0)
    init = GmmModel(np.full(3, 1 / 3), centers + 0.8, np.ones((3, 2)), floor)
    m = em(init, x, 30)
    cost = np.linalg.norm(m.means[:, None] - centers[None], axis=2)
    r, c = linear_sum_assignment(cost)
    assert np.max(cost[r, c]) < 0.1


@pytest.mark.parametrize("seed", range(10))
def test_em_monotone(seed):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.standard_normal((400, 4)) + rng.uniform(-3, 3, 4) for _ in range(5)])
    res = train_ubm(x, 8 if seed % 2 else 6, iters=5, final_iters=5)
    # likelihood may change at a split; within each EM run it never drops
    hist = res.history
    for (k0, a), (k1, b) in zip(hist, hist[1:]):
        if k0 == k1:
            assert b - a >= -1e-8
    m = res.model
    assert abs(m.weights.sum() - 1) < 1e-12 and np.all(m.weights >= 0)
    assert np.all(m.variances >= m.var_floor)


def test_ubm_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(AsvError):
        train_ubm(rng.standard_normal((10, 2)), 16)
    with pytest.raises(AsvError):
        train_ubm(rng.standard_normal((100, 2)), 0)
    with pytest.raises(AsvError):
        train_ubm(np.ones((100, 2)), 2)


def small_ubm(seed=0):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.standard_normal((300, 3)) + c for c in ([0, 0, 0], [4, 0, 0], [0, 4, 0], [0, 0, 4])])
    return train_ubm(x, 4, iters=10).model, rng


def test_map_limits():
    ubm, rng = small_ubm()
    assert map_adapt(ubm, np.zeros((0, 3))).base is ubm
    x = rng.standard_normal((50, 3)) + [4, 0, 0]
    sm = map_adapt(ubm, x)
    np.testing.assert_array_equal(sm.base.weights, ubm.weights)
    np.testing.assert_array_equal(sm.base.variances, ubm.variances)
    # hand formula
    lp = ubm.component_log_probs(x)
    post = np.exp(lp - np.logaddexp.reduce(lp, axis=1, keepdims=True))
    n = post.sum(0)
    xbar = post.T @ x / n[:, None]
    np.testing.assert_allclose(sm.base.means, (n[:, None] * xbar + 16 * ubm.means) / (n[:, None] + 16), atol=1e-12)


def test_map_midpoint_when_count_equals_relevance():
    ubm = GmmModel(np.ones(1), np.zeros((1, 2)), np.ones((1, 2)), np.full(2, 1e-4))
    x = np.tile([[2.0, -4.0]], (16, 1))
    np.testing.assert_allclose(map_adapt(ubm, x).base.means, [[1.0, -2.0]])
    big = np.tile([[2.0, -4.0]], (10 ** 6, 1))
    np.testing.assert_allclose(map_adapt(ubm, big).base.means, [[2.0, -4.0]], atol=1e-4)


def test_llr_properties():
    ubm, rng = small_ubm(3)
    x = rng.standard_normal((40, 3))
    assert abs(llr_score(ubm, ubm, x)) < 1e-12
    assert llr_score(map_adapt(ubm, np.zeros((0, 3))), ubm, x) == 0.0
    sm = map_adapt(ubm, rng.standard_normal((60, 3)) + [1.5, 1.5, 0])
    s = llr_score(sm, ubm, x)
    assert abs(llr_score(sm, ubm, x[::-1]) - s) < 1e-12
    mean_score = np.mean([llr_score(sm, ubm, sm.base.sample(30, np.random.default_rng(i))) for i in range(100)])
    assert mean_score > 0
    with pytest.raises(AsvError):
        llr_score(sm, ubm, np.zeros((0, 3)))


def test_gmm_self_loglik_stable():
    ubm, _ = small_ubm(4)
    vals = [np.mean(ubm.frame_log_likelihood(ubm.sample(5000, np.random.default_rng(i)))) for i in range(3)]
    assert np.all(np.isfinite(vals)) and np.ptp(vals) < 0.1


# ---------------------------------------------------------------- EER

def test_eer_anchors():
    assert eer(ScoreSet([3, 4, 5], [0, 1, 2])) == 0.0
    assert abs(eer(ScoreSet([1, 2, 3], [1, 2, 3])) - 0.5) < 0.2
    same = list(np.random.default_rng(0).standard_normal(1000))
    assert abs(eer(ScoreSet(same, same)) - 0.5) < 1e-3
    with pytest.raises(AsvError):
        eer(ScoreSet([], [1.0]))


def test_eer_gaussian():
    rng = np.random.default_rng(5)
    e = eer(ScoreSet(rng.normal(2, 1, 10 ** 5), rng.normal(0, 1, 10 ** 5)))
    assert abs(e - (1 - norm.cdf(1))) < 0.005


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_eer_monotone_transform_invariant(seed):
    rng = np.random.default_rng(seed)
    t, i = rng.normal(1, 1, 200), rng.normal(0, 1, 300)
    a = eer(ScoreSet(t, i))
    b = eer(ScoreSet(np.exp(t) * 3 + 1, np.exp(i) * 3 + 1))
    assert abs(a - b) < 1e-12
    assert 0 <= a <= 1


# ---------------------------------------------------------------- protocol

def test_protocol_small_end_to_end(tmp_path):
    clean = synth_corpus(tmp_path / "c", 6, 4, seed=3, n_syllables=3)
    noisy = merge_manifests(
        mix_manifest(clean, tmp_path / "n", "white", (0, 20), seed=1, splits={"enroll", "test"}),
        root=tmp_path / "n",
    )
    cfg = AsvConfig(n_components=8, final_iters=2)
    t1 = run_protocol(clean, noisy, None, "clean", cfg)
    assert set(t1.cells) == {("white", 0.0), ("white", 20.0)}
    lines = t1.to_csv().splitlines()
    assert lines[0] == "noise,0,20,clean,mean"
    vals, mean = t1.row("white")
    assert abs(mean - np.mean(vals)) < 1e-12
    for line in t1.score_lines(("white", 0.0)).splitlines():
        tid, kind, score = line.split()
        assert kind in ("target", "impostor")
        float(score)
    t2 = run_protocol(clean, noisy, None, "multi", cfg)
    assert t2.to_csv().splitlines()[0] == lines[0]
    assert run_protocol(clean, noisy, None, "clean", cfg).to_csv() == t1.to_csv()
    with pytest.raises(AsvError):
        run_protocol(clean, noisy, None, "bogus", cfg)
