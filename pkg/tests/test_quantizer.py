import numpy as np
import pytest

from aerokit.dataio import ActionSequence
from aerokit.quantizer import (
    AxisRange,
    causal_shift,
    fit_ranges,
    load_ranges,
    quantize,
    quantize_array,
    quantize_sequence,
    save_ranges,
)


def brute_quantize(x, m, M, K):
    # straight transcription of the binning rule, kept independent of the library
    xc = min(max(x, m), M)
    b = int(np.floor((xc - m) / (M - m) * K))
    return min(K - 1, b)


def test_quantize_hand_values():
    r = AxisRange(-1.0, 1.0, 7)
    assert quantize(0.0, r) == 3
    assert quantize(-1.0, r) == 0
    assert quantize(1.0, r) == 6
    assert quantize(-5.0, r) == 0
    assert quantize(5.0, r) == 6
    # bin edges: width 2/7, so -1 + 2/7 starts bin 1
    assert quantize(-1.0 + 2.0 / 7.0 + 1e-9, r) == 1


def test_quantize_matches_brute_force_randomized():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = float(rng.uniform(-10, 9))
        M = m + float(rng.uniform(0.1, 10))
        K = int(rng.integers(2, 12))
        r = AxisRange(m, M, K)
        xs = rng.uniform(m - 2, M + 2, size=50)
        for x in xs:
            assert quantize(float(x), r) == brute_quantize(float(x), m, M, K)


def test_quantize_array_matches_scalar():
    rng = np.random.default_rng(1)
    r = AxisRange(-2.0, 3.0, 7)
    xs = rng.uniform(-4, 5, size=1000)
    out = quantize_array(xs, r)
    assert out.dtype == np.int64
    for x, b in zip(xs, out):
        assert b == quantize(float(x), r)


def test_quantize_rejects_nonfinite():
    r = AxisRange(-1.0, 1.0, 7)
    with pytest.raises(ValueError):
        quantize(float("nan"), r)
    with pytest.raises(ValueError):
        quantize_array(np.array([0.0, np.inf]), r)


def test_axis_range_validation():
    with pytest.raises(ValueError):
        AxisRange(1.0, 1.0, 7)
    with pytest.raises(ValueError):
        AxisRange(0.0, 1.0, 1)


def test_quantize_sequence_shape_and_values():
    rng = np.random.default_rng(2)
    actions = rng.uniform(-1, 1, size=(33, 6))
    seq = ActionSequence(actions=actions, fps=30.0)
    ranges = [AxisRange(-1.0, 1.0, 7) for _ in range(6)]
    labels = quantize_sequence(seq, ranges)
    assert labels.labels.shape == (6, 33)
    for j in range(6):
        np.testing.assert_array_equal(
            labels.labels[j], quantize_array(actions[:, j], ranges[j])
        )


def test_causal_shift_duplicates_last_row():
    a = np.arange(24, dtype=np.float64).reshape(4, 6)
    s = causal_shift(ActionSequence(actions=a, fps=30.0)).actions
    np.testing.assert_array_equal(s[0], a[1])
    np.testing.assert_array_equal(s[1], a[2])
    np.testing.assert_array_equal(s[2], a[3])
    np.testing.assert_array_equal(s[3], a[3])
    # double shift pushes two steps ahead with a duplicated tail
    s2 = causal_shift(ActionSequence(actions=s, fps=30.0)).actions
    np.testing.assert_array_equal(s2[0], a[2])
    np.testing.assert_array_equal(s2[1], a[3])
    np.testing.assert_array_equal(s2[2], a[3])


def test_causal_shift_needs_two_rows():
    with pytest.raises(ValueError):
        causal_shift(ActionSequence(actions=np.zeros((1, 6)), fps=30.0))


def test_fit_ranges_minmax_and_quantile():
    rng = np.random.default_rng(3)
    seqs = [ActionSequence(actions=rng.normal(size=(40, 6)), fps=30.0) for _ in range(5)]
    ranges = fit_ranges(seqs, q=0.0, K=7)
    stacked = np.concatenate([s.actions for s in seqs], axis=0)
    for j, r in enumerate(ranges):
        assert r.K == 7
        assert r.m == pytest.approx(stacked[:, j].min())
        assert r.M == pytest.approx(stacked[:, j].max())
    ranges_q = fit_ranges(seqs, q=0.005, K=7)
    for j, r in enumerate(ranges_q):
        assert r.m == pytest.approx(np.quantile(stacked[:, j], 0.005))
        assert r.M == pytest.approx(np.quantile(stacked[:, j], 0.995))


def test_fit_ranges_degenerate_axis_widened():
    seqs = [ActionSequence(actions=np.zeros((10, 6)), fps=30.0)]
    ranges = fit_ranges(seqs, q=0.0, K=7)
    for r in ranges:
        assert r.M > r.m


def test_ranges_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    seqs = [ActionSequence(actions=rng.normal(size=(40, 6)), fps=30.0) for _ in range(3)]
    ranges = fit_ranges(seqs, q=0.005, K=7)
    p = tmp_path / "ranges.txt"
    save_ranges(ranges, p)
    back = load_ranges(p)
    assert len(back) == 6
    for a, b in zip(ranges, back):
        assert a.m == b.m and a.M == b.M and a.K == b.K  # repr round trip is exact
