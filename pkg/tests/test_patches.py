import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfpmelody.cfp import compute_cfp
from cfpmelody.errors import ShapeError
from cfpmelody.patches import (
    PatchSet,
    build_training_set,
    extract_patch,
    extract_patches,
    hz_to_bin,
    keep_draws,
    pick_peaks,
)
from cfpmelody.signal_io import AudioClip, MelodyContour
from cfpmelody.synth import harmonic_tone


def col(*values):
    return np.array(values, float)[:, None]


class TestPickPeaks:
    def test_examples(self):
        assert pick_peaks(col(0, 1, 0, 2, 0))[0].tolist() == [1, 3]
        assert pick_peaks(col(5, 5, 5, 5, 5))[0].tolist() == []

    def test_plateau_leftmost(self):
        assert pick_peaks(col(0, 3, 3, 3, 1))[0].tolist() == [1]
        # a shoulder is not a peak
        assert pick_peaks(col(0, 3, 3, 4, 1))[0].tolist() == [3]

    def test_edges_and_zeros(self):
        assert pick_peaks(col(4, 1, 0, 1, 2))[0].tolist() == [0, 4]
        assert pick_peaks(col(0, 0, 0))[0].tolist() == []

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=1, max_size=30))
    def test_against_brute_force(self, values):
        v = np.array(values, float)
        n = v.size
        expected = []
        for i in range(n):
            if v[i] <= 0 or (i > 0 and v[i - 1] == v[i]):
                continue
            j = i
            while j + 1 < n and v[j + 1] == v[i]:
                j += 1
            if i == 0 and j == n - 1:
                continue
            left = i == 0 or v[i - 1] < v[i]
            right = j == n - 1 or v[j + 1] < v[i]
            if left and right:
                expected.append(i)
        assert pick_peaks(v[:, None])[0].tolist() == expected

    def test_two_tone_clip(self):
        x = harmonic_tone(200.0, 4.0, 16000, (1, 0.8, 0.6)) + harmonic_tone(300.0, 4.0, 16000, (1, 0.8, 0.6))
        y = compute_cfp(AudioClip(x, 16000)).y
        assert y.n_frames >= 200
        targets = hz_to_bin([200.0, 300.0])
        for peaks in pick_peaks(y)[4:-4]:
            assert len(peaks) >= 2
            for t in targets:
                assert np.min(np.abs(peaks - t)) <= 1


class TestExtract:
    def test_corner(self, rng):
        y = rng.uniform(0.1, 1, (159, 40))
        p = extract_patch(y, 0, 0).values
        np.testing.assert_array_equal(p[12:, 12:], y[:13, :13])
        assert not p[:12].any() and not p[:, :12].any()

    def test_interior_is_submatrix(self, rng):
        y = rng.uniform(0, 1, (159, 60))
        p = extract_patch(y, 80, 30)
        np.testing.assert_array_equal(p.values, y[68:93, 18:43])
        assert p.values[12, 12] == y[80, 30]

    def test_sum_matches_double_loop(self, rng):
        y = rng.standard_normal((159, 50))
        total = 0.0
        for i in range(100 - 12, 100 + 13):
            for j in range(25 - 12, 25 + 13):
                total += y[i, j]
        assert extract_patch(y, 100, 25).values.sum() == pytest.approx(total, rel=1e-12)

    def test_out_of_range_centre(self):
        with pytest.raises(IndexError):
            extract_patch(np.zeros((159, 10)), 159, 0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 158), st.integers(0, 29), st.integers(0, 10_000))
    def test_edge_fuzz_matches_padded_reference(self, b, f, seed):
        y = np.random.default_rng(seed).uniform(0, 1, (159, 30))
        padded = np.zeros((159 + 24, 30 + 24))
        padded[12:-12, 12:-12] = y
        ref = padded[b:b + 25, f:f + 25]
        np.testing.assert_array_equal(extract_patch(y, b, f).values, ref)
        np.testing.assert_array_equal(extract_patches(y, [b], [f])[0], ref)


class TestTrainingSet:
    def _setup(self):
        y = np.zeros((159, 3))
        y[70, 0] = y[40, 0] = 1.0
        y[71, 1] = 1.0
        y[70, 2] = 1.0
        ann = MelodyContour([80 * 2 ** (70 / 48), 80 * 2 ** (70 / 48), 0.0], 0.02)
        return y, ann

    def test_labels(self):
        y, ann = self._setup()
        ts = build_training_set(y, pick_peaks(y), ann, rng_seed=0, keep_negative=1.0)
        got = {(int(f), int(b)): int(l) for b, f, l in zip(ts.bins, ts.frames, ts.labels)}
        assert got == {(0, 40): 0, (0, 70): 1, (1, 71): 1, (2, 70): 0}

    def test_positives_always_kept(self):
        y, ann = self._setup()
        ts = build_training_set(y, pick_peaks(y), ann, rng_seed=3, keep_negative=0.0)
        assert ts.labels.tolist() == [1, 1]
        assert ts.values[0][12, 12] == y[70, 0]

    def test_length_mismatch(self):
        y, ann = self._setup()
        with pytest.raises(ShapeError):
            build_training_set(y, pick_peaks(y), MelodyContour([0.0], 0.02), 0)

    def test_negative_rate_binomial_bound(self):
        bins = np.tile(np.arange(100), 100)
        frames = np.repeat(np.arange(100), 100)
        kept = int(np.sum(keep_draws(7, bins, frames) < 0.1))
        assert 900 <= kept <= 1100

    def test_draws_independent_of_order(self):
        bins = np.array([3, 9, 120, 4])
        frames = np.array([0, 5, 5, 77])
        a = keep_draws(11, bins, frames)
        perm = np.array([2, 0, 3, 1])
        np.testing.assert_array_equal(keep_draws(11, bins[perm], frames[perm]), a[perm])

    def test_deterministic(self, rng):
        y = rng.uniform(0, 1, (159, 40))
        ann = MelodyContour(np.where(rng.random(40) < 0.5, 0, 200.0), 0.02)
        a = build_training_set(y, pick_peaks(y), ann, 5)
        b = build_training_set(y, pick_peaks(y), ann, 5)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.labels, b.labels)
        c = build_training_set(y, pick_peaks(y), ann, 6)
        assert len(a) != len(c) or not np.array_equal(a.bins, c.bins)


def test_patchset_concatenate_and_index():
    a = PatchSet(np.ones((2, 25, 25)), np.array([1, 2]), np.array([0, 0]), np.array([0, 1]))
    both = PatchSet.concatenate([a, PatchSet.empty(), a])
    assert len(both) == 4 and both.labels.tolist() == [0, 1, 0, 1]
    assert len(both[1:3]) == 2
