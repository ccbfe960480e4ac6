import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpv import numgrad as ng
from qpv.errors import ConfigurationError, EmptyInputError
from qpv.signal import (
    STFTSetting,
    autocorr_peaks,
    estimate_f0_autocorr,
    harmonicity,
    make_window,
    stft_magnitude,
)

SR = 22050


def naive_stft_mag(x, s):
    w = make_window(s.window, s.frame_length)
    n_frames = (x.size - s.frame_length) // s.frame_shift + 1
    k = np.arange(s.fft_size // 2 + 1)
    out = np.zeros((n_frames, k.size))
    for f in range(n_frames):
        seg = x[f * s.frame_shift : f * s.frame_shift + s.frame_length] * w
        for b in k:
            acc = 0j
            for i, v in enumerate(seg):
                acc += v * np.exp(-2j * np.pi * b * i / s.fft_size)
            out[f, b] = abs(acc)
    return out


class TestWindow:
    def test_hann_3(self):
        np.testing.assert_allclose(make_window("hann", 3), [0.0, 1.0, 0.0], atol=1e-15)

    def test_rectangular(self):
        np.testing.assert_array_equal(make_window("rectangular", 4), [1, 1, 1, 1])

    @pytest.mark.parametrize("n", [2, 5, 64, 600, 1201])
    def test_hann_symmetric(self, n):
        w = make_window("hann", n)
        np.testing.assert_array_equal(w, w[::-1])

    def test_bad(self):
        with pytest.raises(ConfigurationError):
            make_window("kaiser", 8)
        with pytest.raises(ConfigurationError):
            make_window("hann", 0)


class TestSTFT:
    def test_impulse_flat(self):
        s = STFTSetting(4, 4, 4, "rectangular")
        mag = stft_magnitude(np.array([1.0, 0, 0, 0]), s).data
        np.testing.assert_allclose(mag, np.ones((1, 3)))

    def test_zero(self):
        mag = stft_magnitude(np.zeros(300), STFTSetting(64, 16, 64)).data
        assert np.all(mag == 0)

    def test_matches_naive_dft(self):
        x = np.random.default_rng(0).standard_normal(512)
        s = STFTSetting(64, 32, 64)
        np.testing.assert_allclose(stft_magnitude(x, s).data, naive_stft_mag(x, s), atol=1e-9)

    def test_zero_padded_frame(self):
        x = np.random.default_rng(1).standard_normal(200)
        s = STFTSetting(64, 20, 40)
        np.testing.assert_allclose(stft_magnitude(x, s).data, naive_stft_mag(x, s), atol=1e-9)

    def test_frame_count(self):
        s = STFTSetting(1024, 120, 600)
        assert s.n_frames(4400) == (4400 - 600) // 120 + 1
        assert stft_magnitude(np.zeros((2, 4400)), s).shape == (2, 32, 513)

    def test_too_short(self):
        with pytest.raises(EmptyInputError):
            stft_magnitude(np.zeros(10), STFTSetting(64, 16, 64))

    @pytest.mark.parametrize("kw", [dict(frame_shift=0), dict(frame_length=128), dict(window="blackman")])
    def test_bad_setting(self, kw):
        base = dict(fft_size=64, frame_shift=16, frame_length=64)
        base.update(kw)
        with pytest.raises(ConfigurationError):
            STFTSetting(**base)

    @pytest.mark.parametrize(
        "s",
        [
            STFTSetting(16, 4, 16),
            STFTSetting(16, 5, 12),
            STFTSetting(15, 3, 15),
            STFTSetting(8, 8, 8, "rectangular"),
            STFTSetting(32, 7, 20),
        ],
    )
    def test_gradient(self, s):
        rng = np.random.default_rng(s.fft_size + s.frame_shift)
        x = rng.standard_normal((2, 60))
        y = rng.standard_normal((2, 60))
        err = ng.grad_check(lambda x: ng.sum(ng.square(stft_magnitude(x, s) - stft_magnitude(y, s))), [x])
        assert err <= 1e-4

    def test_parseval_rectangular(self):
        x = np.random.default_rng(3).standard_normal(64)
        for n_fft in (64, 65):
            s = STFTSetting(n_fft, 64, 64, "rectangular")
            mag = stft_magnitude(x, s).data[0]
            weights = np.full(mag.size, 2.0)
            weights[0] = 1.0
            if n_fft % 2 == 0:
                weights[-1] = 1.0
            assert np.sum(weights * mag**2) == pytest.approx(n_fft * np.sum(x**2), rel=1e-9)

    def test_magnitude_gradient_unsquared(self):
        x = np.random.default_rng(4).standard_normal(80)
        assert ng.grad_check(lambda x: ng.sum(stft_magnitude(x, STFTSetting(32, 8, 24))), [x]) <= 1e-4

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.1, 10.0))
    def test_scale_equivariant(self, seed, k):
        x = np.random.default_rng(seed).standard_normal(256)
        s = STFTSetting(64, 16, 48)
        np.testing.assert_allclose(stft_magnitude(k * x, s).data, k * stft_magnitude(x, s).data, rtol=1e-9, atol=1e-12)


def sine(f, n=SR // 2, sr=SR, phase=0.3):
    return np.sin(2 * np.pi * f * np.arange(n) / sr + phase)


class TestPitch:
    def test_sine_220_5(self):
        lags, _ = autocorr_peaks(sine(220.5), SR, 110, 1024, 60, 800)
        assert np.all(np.abs(lags - 100) <= 1)
        f0 = estimate_f0_autocorr(sine(220.5), SR, 110, 1024)
        assert np.all((f0 >= 218.3) & (f0 <= 222.7))

    def test_white_noise_mostly_unvoiced(self):
        x = np.random.default_rng(0).standard_normal(SR)
        f0 = estimate_f0_autocorr(x, SR, 110, 1024)
        assert np.mean(f0 == 0) > 0.5

    def test_silence_unvoiced(self):
        assert np.all(estimate_f0_autocorr(np.zeros(4000), SR, 110, 1024) == 0)

    @pytest.mark.parametrize("f", [80.0, 123.0, 200.0, 317.0, 640.0])
    def test_sine_sweep(self, f):
        # The biased autocorrelation of a sinusoid is ~(1 - k/N) cos(2 pi k / T);
        # its peak sits at T - T^2 / (4 pi^2 (N - T)), then lags are integers.
        n, period = 1024, SR / f
        expected = period - period**2 / (4 * np.pi**2 * (n - period))
        lags, _ = autocorr_peaks(sine(f), SR, 110, n, 60, 800)
        assert np.all(np.abs(lags - expected) <= 1.0)
        f0 = estimate_f0_autocorr(sine(f), SR, 110, n)
        assert np.all(f0 == SR / lags)

    def test_scale_invariant(self):
        x = sine(150.0) + 0.3 * np.random.default_rng(5).standard_normal(SR // 2)
        ref = estimate_f0_autocorr(x, SR, 110, 1024)
        for a in (1e-3, 0.5, 7.0):
            np.testing.assert_array_equal(estimate_f0_autocorr(a * x, SR, 110, 1024), ref)

    def test_frame_count(self):
        f0 = estimate_f0_autocorr(sine(200.0, n=5000), SR, 110, 1024)
        assert f0.size == (5000 - 1024) // 110 + 1

    def test_too_short(self):
        with pytest.raises(EmptyInputError):
            estimate_f0_autocorr(np.zeros(100), SR, 110, 1024)

    def test_bad_range(self):
        with pytest.raises(ConfigurationError):
            estimate_f0_autocorr(sine(200.0), SR, 110, 1024, 800, 60)

    def test_frame_too_short_for_range(self):
        with pytest.raises(ConfigurationError):
            estimate_f0_autocorr(sine(200.0), SR, 110, 20, 60, 800)

    def test_harmonicity_contrast(self):
        rng = np.random.default_rng(2)
        h_sine = harmonicity(sine(200.0), SR, 110, 1024)
        h_noise = harmonicity(rng.standard_normal(SR // 2), SR, 110, 1024)
        assert h_sine > 0.85 > 0.5 > h_noise

    def test_harmonicity_mask(self):
        x = np.concatenate([sine(200.0, n=4000), np.zeros(4000)])
        _, strength = autocorr_peaks(x, SR, 110, 1024, 60, 800)
        mask = strength > 0.5
        assert harmonicity(x, SR, 110, 1024, mask=mask) == pytest.approx(strength[mask].mean())
