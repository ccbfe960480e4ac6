import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpv.errors import ConfigurationError, UsageError
from qpv.features import (
    CorpusRecipe,
    FeatureTrack,
    dilated_factors,
    dilation_plan,
    interpolate_continuous_f0,
    make_continuous,
    round_half_away,
    scale_f0,
    synth_corpus,
    upsample_frames,
    upsample_to_samples,
)
from qpv.signal import estimate_f0_autocorr

SR = 22050


def track(f0, hop=110, aux=None):
    f0 = np.asarray(f0, dtype=float)
    aux = np.zeros((f0.size, 2)) if aux is None else aux
    return FeatureTrack(f0, (f0 > 0).astype(float), aux, hop, SR)


class TestContinuousF0:
    def test_interior_and_edges(self):
        f0, uv = interpolate_continuous_f0([0, 100, 0, 200, 0])
        np.testing.assert_array_equal(f0, [100, 100, 150, 200, 200])
        np.testing.assert_array_equal(uv, [0, 1, 0, 1, 0])

    def test_all_voiced_unchanged(self):
        f0, uv = interpolate_continuous_f0([120.0, 130.0, 125.0])
        np.testing.assert_array_equal(f0, [120.0, 130.0, 125.0])
        assert np.all(uv == 1)

    def test_linear_gap(self):
        f0, _ = interpolate_continuous_f0([100, 0, 0, 0, 300])
        np.testing.assert_allclose(f0, [100, 150, 200, 250, 300])

    def test_all_unvoiced(self):
        with pytest.raises(ConfigurationError):
            interpolate_continuous_f0([0, 0, 0])

    def test_make_continuous_keeps_aux(self):
        t = track([0, 100, 0, 200, 0], aux=np.arange(10.0).reshape(5, 2))
        c = make_continuous(t)
        np.testing.assert_array_equal(c.aux, t.aux)
        assert np.all(c.f0 > 0)


class TestScaleF0:
    def test_identity(self):
        t = track([100.0, 0.0, 200.0])
        np.testing.assert_array_equal(scale_f0(t, 1.0).f0, t.f0)

    def test_double(self):
        np.testing.assert_array_equal(scale_f0(track([100.0, 200.0]), 2.0).f0, [200.0, 400.0])

    def test_inverse(self):
        t = track([113.0, 0.0, 251.5, 97.25])
        np.testing.assert_array_equal(scale_f0(scale_f0(t, 0.5), 2.0).f0, t.f0)

    @pytest.mark.parametrize("r", [0.0, -1.0])
    def test_bad_ratio(self, r):
        with pytest.raises(ConfigurationError):
            scale_f0(track([100.0]), r)


class TestDilatedFactors:
    def test_direct(self):
        assert dilated_factors([220.5], SR, 4)[0] == pytest.approx(25.0, abs=1e-12)

    def test_low_pitch_range(self):
        assert dilated_factors([40.0], SR, 4)[0] == pytest.approx(137.8, abs=0.05)

    def test_fixed_point(self):
        f0 = 173.0
        assert dilated_factors([f0], SR, SR / f0)[0] == pytest.approx(1.0, abs=1e-12)

    def test_needs_positive_f0(self):
        with pytest.raises(UsageError):
            dilated_factors([100.0, 0.0], SR, 4)

    def test_bad_dense_factor(self):
        with pytest.raises(ConfigurationError):
            dilated_factors([100.0], SR, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(20.0, 2000.0), min_size=2, max_size=20, unique=True))
    def test_strictly_decreasing(self, f0s):
        f0 = np.sort(np.asarray(f0s))
        e = dilated_factors(f0, SR, 4.0)
        assert np.all(np.diff(e) < 0)


class TestPlan:
    def test_unit_factor(self):
        np.testing.assert_array_equal(dilation_plan(np.ones(6), 4).offsets, 4)

    def test_half_rounds_away(self):
        assert dilation_plan(np.array([2.5]), 1).offsets[0] == 3

    def test_clamp(self):
        assert dilation_plan(np.array([0.3]), 1).offsets[0] == 1

    def test_round_half_away(self):
        np.testing.assert_array_equal(round_half_away([-2.5, -1.4, 0.5, 1.5, 2.49]), [-3, -1, 1, 2, 2])

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(60.0, 500.0), min_size=1, max_size=30),
        st.sampled_from([1, 2, 4, 8, 16, 32, 64, 128, 256, 512]),
    )
    def test_doubling_f0_halves_factor(self, f0s, d):
        f0 = np.asarray(f0s)
        e = dilated_factors(f0, SR, 4.0)
        e2 = dilated_factors(2 * f0, SR, 4.0)
        np.testing.assert_array_equal(e2, e / 2)
        expected = np.maximum(1, round_half_away(e / 2 * d))
        np.testing.assert_array_equal(dilation_plan(e2, d).offsets, expected)

    def test_deterministic(self):
        e = dilated_factors(np.linspace(80, 320, 50), SR, 4.0)
        assert np.array_equal(dilation_plan(e, 8).offsets, dilation_plan(e, 8).offsets)


class TestUpsample:
    def test_repeat(self):
        np.testing.assert_array_equal(upsample_frames([[1], [2]], 3)[:, 0], [1, 1, 1, 2, 2, 2])

    def test_hop_one(self):
        v = np.random.default_rng(0).standard_normal((7, 3))
        np.testing.assert_array_equal(upsample_frames(v, 1), v)

    def test_length(self):
        assert upsample_frames(np.zeros((10, 4)), 110).shape == (1100, 4)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 200), st.integers(0, 2**31))
    def test_stride_inverse(self, n, hop, seed):
        v = np.random.default_rng(seed).standard_normal((n, 3))
        np.testing.assert_array_equal(upsample_frames(v, hop)[::hop], v)

    def test_bad_hop(self):
        with pytest.raises(ConfigurationError):
            upsample_frames([[1.0]], 0)

    def test_conditioning_layout(self):
        t = make_continuous(track([0.0, 200.0, 400.0], hop=2, aux=np.array([[1.0], [2.0], [3.0]])))
        cond, f0 = upsample_to_samples(t)
        assert cond.shape == (3, 6)
        np.testing.assert_array_equal(cond[0], [0, 0, 1, 1, 1, 1])
        np.testing.assert_allclose(cond[1], np.log(np.repeat([200.0, 200.0, 400.0], 2) / 200.0))
        np.testing.assert_allclose(cond[2], np.repeat([0.1, 0.2, 0.3], 2))
        np.testing.assert_array_equal(f0, np.repeat([200.0, 200.0, 400.0], 2))

    def test_conditioning_needs_continuous(self):
        with pytest.raises(UsageError):
            track([0.0, 100.0]).conditioning()


class TestCorpus:
    def test_deterministic(self):
        r = CorpusRecipe(n_utterances=2, duration_s=0.3)
        a, b = synth_corpus(r, seed=3), synth_corpus(r, seed=3)
        for u, v in zip(a, b):
            assert np.array_equal(u.audio, v.audio)
            assert np.array_equal(u.track.f0, v.track.f0)
            assert np.array_equal(u.track.aux, v.track.aux)

    def test_seed_changes_corpus(self):
        r = CorpusRecipe(n_utterances=1, duration_s=0.3)
        assert not np.array_equal(synth_corpus(r, 0)[0].audio, synth_corpus(r, 1)[0].audio)

    def test_shapes_and_labels(self):
        r = CorpusRecipe(n_utterances=3, duration_s=0.5)
        for u in synth_corpus(r, 0):
            assert u.audio.size == u.track.n_samples
            assert u.track.aux.shape == (u.track.n_frames, 8)
            voiced = u.track.uv > 0
            assert np.all(u.track.f0[~voiced] == 0)
            assert np.all((u.track.f0[voiced] >= r.f0_min) & (u.track.f0[voiced] <= r.f0_max))
            assert 0 < voiced.mean() < 1
            assert np.max(np.abs(u.audio)) < 1.0

    def test_constant_pitch_round_trip(self):
        r = CorpusRecipe(n_utterances=1, duration_s=0.5, f0_min=200.0, f0_max=200.0, noise_level=0.0,
                         unvoiced_fraction=0.0)
        u = synth_corpus(r, 0)[0]
        est = estimate_f0_autocorr(u.audio, SR, 110, 1024)
        assert np.all(np.abs(est - 200.0) <= 0.02 * 200.0)

    def test_noise_gap_unvoiced(self):
        u = synth_corpus(CorpusRecipe(n_utterances=1, duration_s=1.0), 0)[0]
        gap = np.flatnonzero(u.track.uv == 0)
        assert gap.size > 0
        seg = u.audio[(gap[0] + 2) * 110 : (gap[-1] - 1) * 110]
        est = estimate_f0_autocorr(seg, SR, 110, 1024)
        assert np.mean(est == 0) > 0.5

    @pytest.mark.parametrize(
        "kw", [dict(n_utterances=0), dict(duration_s=0.0), dict(f0_min=300.0, f0_max=100.0), dict(unvoiced_fraction=1.0)]
    )
    def test_bad_recipe(self, kw):
        with pytest.raises(ConfigurationError):
            synth_corpus(CorpusRecipe(**kw), 0)
