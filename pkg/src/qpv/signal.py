"""Windows, STFT magnitudes (plain and differentiable), and an autocorrelation pitch tracker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptyInputError
from .numgrad import Tensor, _make, as_tensor

MAG_FLOOR = 1e-7
VOICING_THRESHOLD = 0.3


@dataclass(frozen=True)
class STFTSetting:
    """One resolution of the multi-resolution STFT loss."""

    fft_size: int
    frame_shift: int
    frame_length: int
    window: str = "hann"

    def __post_init__(self):
        if self.frame_shift < 1:
            raise ConfigurationError(f"frame_shift must be >= 1, got {self.frame_shift}")
        if not 1 <= self.frame_length <= self.fft_size:
            raise ConfigurationError(
                f"frame_length {self.frame_length} must lie in [1, fft_size={self.fft_size}]"
            )
        if self.window not in ("hann", "rectangular"):
            raise ConfigurationError(f"unknown window {self.window!r}")

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_length:
            return 0
        return (n_samples - self.frame_length) // self.frame_shift + 1

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


DEFAULT_STFT_GROUPS = (
    STFTSetting(1024, 120, 600),
    STFTSetting(2048, 240, 1200),
    STFTSetting(512, 50, 240),
)


def make_window(kind: str, n: int) -> np.ndarray:
    """Symmetric Hann (``0.5 - 0.5 cos(2 pi i / (n - 1))``) or rectangular window."""
    if n < 1:
        raise ConfigurationError(f"window length must be >= 1, got {n}")
    if kind == "rectangular":
        return np.ones(n)
    if kind == "hann":
        if n == 1:
            return np.ones(1)
        i = np.arange(n)
        w = 0.5 - 0.5 * np.cos(2.0 * np.pi * i / (n - 1))
        # mirror the first half so the window is exactly symmetric
        half = (n + 1) // 2
        w[n - half :] = w[:half][::-1]
        return w
    raise ConfigurationError(f"unknown window {kind!r}")


def _frame_index(n_samples: int, s: STFTSetting) -> np.ndarray:
    n = s.n_frames(n_samples)
    if n == 0:
        raise EmptyInputError(
            f"signal of {n_samples} samples is shorter than one frame ({s.frame_length})"
        )
    return np.arange(n)[:, None] * s.frame_shift + np.arange(s.frame_length)[None, :]


def stft_complex(x: np.ndarray, s: STFTSetting) -> np.ndarray:
    """One-sided DFT of each windowed frame, shape ``(..., frames, bins)``."""
    x = np.asarray(x)
    idx = _frame_index(x.shape[-1], s)
    frames = x[..., idx] * make_window(s.window, s.frame_length).astype(x.dtype)
    return np.fft.rfft(frames, n=s.fft_size, axis=-1)


def stft_magnitude(x, s: STFTSetting) -> Tensor:
    """Magnitude spectrogram ``|STFT(x)|`` as a differentiable tensor.

    ``x`` is a waveform of shape ``(T,)`` or ``(B, T)`` (array or Tensor).
    Frame ``f`` covers samples ``[f * shift, f * shift + frame_length)``; no
    centre padding is applied.
    """
    x = as_tensor(x)
    n = x.shape[-1]
    idx = _frame_index(n, s)
    win = make_window(s.window, s.frame_length).astype(x.data.dtype)
    spec = np.fft.rfft(x.data[..., idx] * win, n=s.fft_size, axis=-1)
    mag = np.abs(spec)

    def fn(g):
        safe = np.where(mag > 0, mag, 1.0)
        gspec = np.where(mag > 0, g / safe, 0.0) * spec
        # adjoint of the real-input rfft: halve the bins that rfft folds
        gspec = gspec.copy()
        if s.fft_size % 2 == 0:
            gspec[..., 1:-1] *= 0.5
        else:
            gspec[..., 1:] *= 0.5
        gframes = np.fft.irfft(gspec, n=s.fft_size, axis=-1)[..., : s.frame_length] * s.fft_size
        gframes = gframes * win
        gx = np.zeros(x.shape, dtype=x.data.dtype)
        for f in range(idx.shape[0]):
            start = f * s.frame_shift
            gx[..., start : start + s.frame_length] += gframes[..., f, :]
        return (gx,)

    return _make(mag, (x,), fn)


# pitch analysis ------------------------------------------------------------


def _lag_range(sample_rate: float, f0_min: float, f0_max: float) -> tuple[int, int]:
    if not 0 < f0_min < f0_max:
        raise ConfigurationError(f"need 0 < f0_min < f0_max, got [{f0_min}, {f0_max}]")
    lo = max(1, int(np.floor(sample_rate / f0_max)))
    hi = int(np.ceil(sample_rate / f0_min))
    return lo, hi


def normalized_autocorr(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation of mean-removed frames divided by lag-0 energy.

    Silent frames give an all-zero row.
    """
    frames = frames - frames.mean(axis=-1, keepdims=True)
    n = frames.shape[-1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, n=nfft, axis=-1)
    r = np.fft.irfft(spec.real**2 + spec.imag**2, n=nfft, axis=-1)[..., : max_lag + 2]
    energy = r[..., :1]
    ok = energy > 1e-12 * n
    return np.where(ok, r / np.where(ok, energy, 1.0), 0.0)


def autocorr_peaks(
    x: np.ndarray,
    sample_rate: float,
    frame_shift: int,
    frame_length: int,
    f0_min: float,
    f0_max: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Best in-range autocorrelation peak per frame.

    Returns ``(lags, strengths)``; frames without any local maximum in the
    lag range get lag 0 and strength 0.
    """
    lo, hi = _lag_range(sample_rate, f0_min, f0_max)
    x = np.asarray(x, dtype=np.float64)
    if frame_shift < 1 or frame_length < 2:
        raise ConfigurationError("frame_shift must be >= 1 and frame_length >= 2")
    hi = min(hi, frame_length - 2)
    if hi <= lo:
        raise ConfigurationError(
            f"frame_length {frame_length} too short for lags up to {sample_rate / f0_min:.1f}"
        )
    n_frames = 0 if x.size < frame_length else (x.size - frame_length) // frame_shift + 1
    if n_frames == 0:
        raise EmptyInputError(f"signal of {x.size} samples is shorter than one frame")
    idx = np.arange(n_frames)[:, None] * frame_shift + np.arange(frame_length)[None, :]
    r = normalized_autocorr(x[idx], hi + 1)
    lags = np.arange(lo, hi + 1)
    centre = r[:, lo : hi + 1]
    is_peak = (centre >= r[:, lo - 1 : hi]) & (centre > r[:, lo + 1 : hi + 2])
    scored = np.where(is_peak, centre, -np.inf)
    best = np.argmax(scored, axis=1)
    strength = scored[np.arange(n_frames), best]
    found = np.isfinite(strength)
    return np.where(found, lags[best], 0), np.where(found, strength, 0.0)


def estimate_f0_autocorr(
    x: np.ndarray,
    sample_rate: float,
    frame_shift: int,
    frame_length: int,
    f0_min: float = 60.0,
    f0_max: float = 800.0,
    threshold: float = VOICING_THRESHOLD,
) -> np.ndarray:
    """Per-frame F0 in Hz from integer-lag autocorrelation peaks; 0 marks unvoiced."""
    lags, strength = autocorr_peaks(x, sample_rate, frame_shift, frame_length, f0_min, f0_max)
    voiced = (strength >= threshold) & (lags > 0)
    return np.where(voiced, sample_rate / np.maximum(lags, 1), 0.0)


def harmonicity(
    x: np.ndarray,
    sample_rate: float,
    frame_shift: int,
    frame_length: int,
    f0_min: float = 60.0,
    f0_max: float = 800.0,
    mask: np.ndarray | None = None,
) -> float:
    """Mean autocorrelation peak strength over the frames selected by ``mask``."""
    _, strength = autocorr_peaks(x, sample_rate, frame_shift, frame_length, f0_min, f0_max)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[: strength.size]
        strength = strength[: mask.size][mask]
    return float(strength.mean()) if strength.size else 0.0
