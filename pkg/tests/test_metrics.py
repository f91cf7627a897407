import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tridit import metrics as M


def test_gaussian_stats_examples(rng):
    mu, cov = M.gaussian_stats(np.array([[0.0, 0.0], [2.0, 0.0]]))
    np.testing.assert_array_equal(mu, [1, 0])
    np.testing.assert_array_equal(cov, [[2, 0], [0, 0]])
    _, cov = M.gaussian_stats(np.array([[1.0, 2.0], [1.0, 2.0]]))
    assert not cov.any()
    rows = rng.standard_normal((900, 3))
    mu, cov = M.gaussian_stats(rows)
    assert np.all(np.abs(mu) < 3 / np.sqrt(900))
    np.testing.assert_allclose(cov, cov.T, atol=1e-12)
    np.testing.assert_allclose(cov, np.cov(rows, rowvar=False), atol=1e-12)
    with pytest.raises(M.MetricError):
        M.gaussian_stats(np.ones((1, 3)))


def test_frechet_closed_forms():
    assert abs(M.frechet_distance([0.0], [[1.0]], [1.0], [[1.0]]) - 1.0) <= 1e-6
    assert abs(M.frechet_distance([0.0], [[1.0]], [0.0], [[4.0]]) - 1.0) <= 1e-6
    # diagonal covariances reduce to sum of per-axis 1-D closed forms
    mu1, mu2 = np.array([0.0, 1.0]), np.array([2.0, -1.0])
    s1, s2 = np.array([1.0, 9.0]), np.array([4.0, 1.0])
    want = np.sum((mu1 - mu2) ** 2) + np.sum((np.sqrt(s1) - np.sqrt(s2)) ** 2)
    assert abs(M.frechet_distance(mu1, np.diag(s1), mu2, np.diag(s2)) - want) < 1e-10


def test_frechet_identity_and_symmetry(rng):
    a = rng.standard_normal((100, 5))
    b = rng.standard_normal((100, 5)) @ rng.standard_normal((5, 5)) + 0.5
    assert M.frechet_from_embeddings(a, a) < 1e-8
    assert abs(M.frechet_from_embeddings(a, b) - M.frechet_from_embeddings(b, a)) < 1e-8
    # rank-deficient covariances survive the eigenvalue floor
    low = np.c_[a[:, :1], a[:, :1]]
    assert M.frechet_from_embeddings(low, low + 1) >= 0


def test_frechet_matches_scipy_sqrtm_reference(rng):
    scipy_linalg = pytest.importorskip("scipy.linalg")
    a = rng.standard_normal((60, 4))
    b = rng.standard_normal((60, 4)) * 2 + 1
    mu1, s1 = M.gaussian_stats(a)
    mu2, s2 = M.gaussian_stats(b)
    covmean = scipy_linalg.sqrtm(s1 @ s2).real
    want = np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2 * covmean)
    assert abs(M.frechet_distance(mu1, s1, mu2, s2) - want) < 1e-8


def test_cosine_aggregations(rng):
    e = rng.standard_normal((4, 6))
    assert M.cosine_agg("ib_av", e, e) == pytest.approx(1.0)
    assert M.cosine_agg("cavp", np.eye(2), np.eye(2)[::-1]) == 0.0
    pairs = (np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[2.0, 0.0], [0.0, 3.0]]))
    assert M.cosine_agg("clap_audio", *pairs) == 0.5
    frames = np.stack([np.tile(e[i], (48, 1)) for i in range(4)])
    assert M.cosine_agg("clip_video", frames, e) == pytest.approx(1.0)
    with pytest.raises(M.MetricError):
        M.cosine_agg("fvd", e, e)
    idx = M.sample_frame_indices(97)
    assert len(idx) == 48 and idx[0] == 0 and idx[-1] == 96


def test_avh_examples():
    audio = np.array([1.0, 0.0])
    assert M.avh_score(np.array([[2.0, 0.0], [5.0, 0.0]]), audio) == 1.0
    assert M.avh_score(np.array([[1.0, 0.0], [0.0, 1.0]]), audio) == 0.5
    assert M.avh_score(np.array([[1.0, 1.0]]), audio) == pytest.approx(np.sqrt(0.5))


def test_javis_examples(rng):
    audio = np.array([[1.0, 0.0]])
    frames = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert M.javis_score(frames, audio, window=4, hop=4, bottom_fraction=0.5) == 0.0
    assert M.javis_score(frames, audio, window=4, hop=4, bottom_fraction=1.0) == 0.5
    same = np.tile(audio, (6, 1))
    bounds = M.window_bounds(6, 3, 1)
    assert M.javis_score(same, np.tile(audio, (len(bounds), 1)), 3, 1, 0.4) == 1.0
    f = rng.standard_normal((10, 3))
    a = rng.standard_normal(3)
    assert M.javis_score(f, a[None], 10, 10, 1.0) == pytest.approx(M.avh_score(f, a))
    with pytest.raises(M.MetricError):
        M.javis_score(f, np.tile(a, (2, 1)), 10, 10)


def test_window_bounds():
    assert M.window_bounds(5, 2, 1) == [(0, 2), (1, 3), (2, 4), (3, 5)]
    assert M.window_bounds(3, 16, 8) == [(0, 3)]
    assert M.javis_windows_from_seconds(40, 8.0) == [(0, 16), (8, 24), (16, 32), (24, 40)]


def test_audio_peak_examples():
    assert len(M.detect_audio_peaks(np.zeros(64), 16.0, 8.0)) == 0
    x = np.zeros(64)
    x[21] = 1.0
    np.testing.assert_array_equal(M.detect_audio_peaks(x, 16.0, 8.0), [round(21 / 16 * 8)])
    x[23] = 0.5
    np.testing.assert_array_equal(M.detect_audio_peaks(x, 16.0, 8.0, min_separation=3), [10])
    with pytest.raises(M.MetricError):
        M.detect_audio_peaks(np.zeros(2), 16.0, 8.0, window=4)


def test_video_peak_examples():
    assert len(M.detect_video_peaks(np.zeros(10))) == 0
    frames = np.zeros((10, 2, 2))
    frames[6:] = 1.0
    np.testing.assert_array_equal(M.detect_video_peaks(M.motion_signal(frames)), [6])
    motion = np.zeros(60)
    motion[[10, 40]] = [1.0, 0.8]
    motion[[11, 41]] = 0.3
    np.testing.assert_array_equal(M.detect_video_peaks(motion), [10, 40])
    with pytest.raises(M.MetricError):
        M.detect_video_peaks(np.array([0.0, 1.0]))
    with pytest.raises(M.MetricError):
        M.detect_video_peaks(np.array([0.0, -1.0, 2.0]))


def test_av_align_examples():
    assert M.av_align([4, 9], [4, 9], 0) == 1.0
    assert M.av_align([1], [5], 0) == 0.0
    assert abs(M.av_align([1, 2], [2, 3], 0) - 1 / 3) <= 1e-12
    assert M.av_align([], [], 1) == 1.0
    assert M.av_align([1], [], 1) == 0.0
    assert M.av_align([1, 2], [2, 3], 1) == 1.0


def _brute_iou(pa, pv, tol):
    """Maximum one-to-one matching by exhaustive search."""
    best = 0

    def rec(i, used, count):
        nonlocal best
        if i == len(pa):
            best = max(best, count)
            return
        rec(i + 1, used, count)
        for j, q in enumerate(pv):
            if j not in used and abs(pa[i] - q) <= tol:
                rec(i + 1, used | {j}, count + 1)
    rec(0, frozenset(), 0)
    total = len(pa) + len(pv) - best
    return 1.0 if total == 0 else best / total


@settings(max_examples=60, deadline=None)
@given(pa=st.sets(st.integers(0, 20), max_size=5), pv=st.sets(st.integers(0, 20), max_size=5),
       tol=st.integers(0, 2), shift=st.integers(-30, 30))
def test_av_align_matches_brute_force_and_is_shift_invariant(pa, pv, tol, shift):
    pa, pv = sorted(pa), sorted(pv)
    got = M.av_align(pa, pv, tol)
    assert abs(got - _brute_iou(pa, pv, tol)) < 1e-12
    assert M.av_align(np.array(pa, dtype=int) + shift, np.array(pv, dtype=int) + shift, tol) == got


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_cosine_scores_bounded(seed):
    r = np.random.default_rng(seed)
    f, a = r.standard_normal((6, 3)), r.standard_normal(3)
    assert -1 <= M.avh_score(f, a) <= 1
    assert -1 <= M.javis_score(f, np.tile(a, (3, 1)), 4, 1, 0.4) <= 1


def test_non_finite_embeddings_rejected(rng):
    rows = rng.standard_normal((4, 3))
    rows[1, 2] = np.nan
    with pytest.raises(M.MetricError, match="non-finite"):
        M.frechet_from_embeddings(rows, rng.standard_normal((4, 3)))
