"""Auxiliary features: continuous F0, dilation factors and plans, upsampling, synthetic corpora."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, UsageError
from .numgrad import Gather

N_ENVELOPE_BANDS = 8


@dataclass
class FeatureTrack:
    """Frame-rate conditioning features.

    ``f0`` is in Hz with 0 marking unvoiced frames (unless already made
    continuous), ``uv`` is the voicing flag and ``aux`` holds extra per-frame
    channels with shape ``(frames, channels)``.
    """

    f0: np.ndarray
    uv: np.ndarray
    aux: np.ndarray
    hop: int
    sample_rate: int

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.aux = np.asarray(self.aux, dtype=np.float64)
        if self.aux.ndim == 1:
            self.aux = self.aux[:, None]
        if not (self.f0.shape[0] == self.uv.shape[0] == self.aux.shape[0]):
            raise ConfigurationError(
                f"track lengths differ: f0 {self.f0.shape[0]}, uv {self.uv.shape[0]}, "
                f"aux {self.aux.shape[0]}"
            )
        if self.hop < 1:
            raise ConfigurationError(f"hop must be >= 1, got {self.hop}")

    @property
    def n_frames(self) -> int:
        return int(self.f0.shape[0])

    @property
    def n_samples(self) -> int:
        return self.n_frames * self.hop

    def conditioning(self) -> np.ndarray:
        """Per-frame network conditioning ``[uv, log-F0, aux...]`` of shape ``(frames, 2 + aux)``.

        F0 must be continuous (every value positive).
        """
        if np.any(self.f0 <= 0):
            raise UsageError("conditioning needs a continuous F0; interpolate first")
        log_f0 = np.log(self.f0 / F0_REFERENCE_HZ)
        return np.concatenate([self.uv[:, None], log_f0[:, None], AUX_SCALE * self.aux], axis=1)

    def frames(self, start: int, stop: int) -> "FeatureTrack":
        return replace(
            self, f0=self.f0[start:stop], uv=self.uv[start:stop], aux=self.aux[start:stop]
        )


F0_REFERENCE_HZ = 200.0
# log band energies span roughly [-20, 2]; keep pre-gate inputs O(1)
AUX_SCALE = 0.1


def make_continuous(track: FeatureTrack) -> FeatureTrack:
    """Track with interpolated F0; ``uv`` recomputed from the original zeros."""
    f0, uv = interpolate_continuous_f0(track.f0)
    return replace(track, f0=f0, uv=uv)


def interpolate_continuous_f0(f0) -> tuple[np.ndarray, np.ndarray]:
    """Fill unvoiced gaps linearly in Hz and hold the edges at the nearest voiced value.

    Returns ``(continuous_f0, uv)`` where ``uv`` flags the originally voiced frames.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    voiced = f0 > 0
    if not voiced.any():
        raise ConfigurationError("cannot interpolate an F0 track with no voiced frame")
    idx = np.arange(f0.size)
    # np.interp holds the end points constant outside the voiced span
    cont = np.interp(idx, idx[voiced], f0[voiced])
    cont[voiced] = f0[voiced]
    return cont, voiced.astype(np.float64)


def scale_f0(track: FeatureTrack, ratio: float) -> FeatureTrack:
    """Multiply F0 by ``ratio`` on every frame with positive F0; other features untouched."""
    if not ratio > 0:
        raise ConfigurationError(f"F0 ratio must be positive, got {ratio}")
    return replace(track, f0=track.f0 * ratio, uv=track.uv.copy(), aux=track.aux.copy())


def dilated_factors(f0_per_sample, sample_rate: float, dense_factor: float) -> np.ndarray:
    """``E_t = Fs / (F0_t * a)`` per sample."""
    f0 = np.asarray(f0_per_sample, dtype=np.float64)
    if dense_factor <= 0:
        raise ConfigurationError(f"dense factor must be positive, got {dense_factor}")
    if np.any(f0 <= 0):
        raise UsageError("dilated factors need positive F0 everywhere; interpolate first")
    return sample_rate / (f0 * dense_factor)


def round_half_away(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


@dataclass
class DilationPlan:
    """Per-sample integer gaps for one pitch-dependent layer.

    ``offsets`` has shape ``(T,)`` or ``(B, T)``.
    """

    offsets: np.ndarray
    base_dilation: int = 1
    dense_factor: float | None = None
    _gathers: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        if self.offsets.ndim not in (1, 2):
            raise ConfigurationError("plan offsets must be (T,) or (B, T)")
        if np.any(self.offsets < 1):
            raise ConfigurationError("every plan offset must be >= 1")

    @property
    def length(self) -> int:
        return int(self.offsets.shape[-1])

    def _build(self):
        if self._gathers is None:
            self._gathers = (Gather(-self.offsets), Gather(self.offsets))
        return self._gathers

    @property
    def past_gather(self) -> Gather:
        return self._build()[0]

    @property
    def future_gather(self) -> Gather:
        return self._build()[1]

    @classmethod
    def constant(cls, value: int, length: int) -> "DilationPlan":
        return cls(np.full(length, int(value)), base_dilation=int(value))


def dilation_plan(factors, base_dilation: int, dense_factor: float | None = None) -> DilationPlan:
    """Round ``E_t * d`` half away from zero, clamping at 1."""
    if base_dilation < 1:
        raise ConfigurationError(f"base dilation must be >= 1, got {base_dilation}")
    offsets = np.maximum(1, round_half_away(np.asarray(factors) * base_dilation)).astype(np.int64)
    return DilationPlan(offsets, base_dilation=int(base_dilation), dense_factor=dense_factor)


def upsample_frames(values, hop: int) -> np.ndarray:
    """Repeat each frame ``hop`` times along the first axis."""
    if hop < 1:
        raise ConfigurationError(f"hop must be >= 1, got {hop}")
    return np.repeat(np.asarray(values), hop, axis=0)


def upsample_to_samples(track: FeatureTrack) -> tuple[np.ndarray, np.ndarray]:
    """Sample-rate conditioning ``(channels, T)`` and per-sample F0 ``(T,)``."""
    cond = upsample_frames(track.conditioning(), track.hop).T
    return np.ascontiguousarray(cond), upsample_frames(track.f0, track.hop)


# synthetic corpus ------------------------------------------------------------


@dataclass
class CorpusRecipe:
    """Parameters for a harmonic-plus-noise corpus with known F0.

    Each utterance is a sequence of voiced segments (smooth F0 glides drawn
    inside ``[f0_min, f0_max]``) separated by short noise-only gaps.
    """

    n_utterances: int = 8
    duration_s: float = 1.0
    sample_rate: int = 22050
    hop: int = 110
    f0_min: float = 80.0
    f0_max: float = 320.0
    n_harmonics: int = 40
    noise_level: float = 0.003
    unvoiced_fraction: float = 0.15
    amplitude: float = 0.3

    def validate(self) -> None:
        if self.n_utterances < 1 or self.duration_s <= 0:
            raise ConfigurationError("corpus recipe needs at least one utterance of positive length")
        if not 0 < self.f0_min <= self.f0_max:
            raise ConfigurationError("corpus F0 range is empty")
        if not 0 <= self.unvoiced_fraction < 1:
            raise ConfigurationError("unvoiced_fraction must lie in [0, 1)")


@dataclass
class Utterance:
    audio: np.ndarray
    track: FeatureTrack
    name: str = ""


def _envelope_bands(sample_rate: float) -> np.ndarray:
    # octave-spaced band edges up to Nyquist
    top = sample_rate / 2.0
    return top / 2.0 ** np.arange(N_ENVELOPE_BANDS, -1, -1)


def envelope_features(audio: np.ndarray, hop: int, sample_rate: float) -> np.ndarray:
    """Per-frame log energies of an octave-spaced filterbank, shape ``(frames, 8)``."""
    n_frames = audio.size // hop
    win_len = 4 * hop
    nfft = 1 << int(np.ceil(np.log2(win_len)))
    pad = np.pad(audio, (win_len // 2, win_len))
    starts = np.arange(n_frames) * hop + hop // 2
    idx = starts[:, None] + np.arange(win_len)[None, :]
    spec = np.abs(np.fft.rfft(pad[idx] * np.hanning(win_len), n=nfft, axis=1)) ** 2
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    edges = _envelope_bands(sample_rate)
    edges[0] = 0.0
    out = np.empty((n_frames, N_ENVELOPE_BANDS))
    for b in range(N_ENVELOPE_BANDS):
        sel = (freqs >= edges[b]) & (freqs < edges[b + 1] if b < N_ENVELOPE_BANDS - 1 else freqs <= edges[b + 1])
        out[:, b] = np.log(spec[:, sel].mean(axis=1) + 1e-8)
    return out


def _f0_contour(rng: np.random.Generator, n_frames: int, recipe: CorpusRecipe) -> np.ndarray:
    lo, hi = np.log(recipe.f0_min), np.log(recipe.f0_max)
    knots = max(2, n_frames // 40 + 2)
    pts = rng.uniform(lo, hi, size=knots)
    x = np.linspace(0, n_frames - 1, knots)
    return np.exp(np.interp(np.arange(n_frames), x, pts))


def _voicing(rng: np.random.Generator, n_frames: int, recipe: CorpusRecipe) -> np.ndarray:
    uv = np.ones(n_frames)
    n_gap = int(round(recipe.unvoiced_fraction * n_frames))
    if n_gap == 0:
        return uv
    # one gap in the interior, length n_gap
    start = int(rng.integers(n_frames // 4, max(n_frames // 4 + 1, n_frames - n_gap - n_frames // 4)))
    uv[start : start + n_gap] = 0.0
    return uv


def synth_utterance(
    rng: np.random.Generator,
    f0_frames: np.ndarray,
    uv: np.ndarray,
    recipe: CorpusRecipe,
) -> np.ndarray:
    """Render a harmonic-plus-noise waveform for a frame-rate F0/voicing track."""
    hop, fs = recipe.hop, recipe.sample_rate
    n = f0_frames.size * hop
    f0 = np.repeat(f0_frames, hop)
    voiced = np.repeat(uv, hop)
    # smooth voicing on/off over one frame to avoid clicks
    ramp = np.convolve(voiced, np.ones(hop) / hop, mode="same")
    phase = 2.0 * np.pi * np.cumsum(f0) / fs + rng.uniform(0, 2 * np.pi)
    tilt = rng.uniform(0.6, 1.0)
    formant = rng.uniform(400.0, 1200.0)
    harm = np.zeros(n)
    for h in range(1, recipe.n_harmonics + 1):
        freq = h * f0
        amp = h ** (-tilt) * (1.0 + 1.5 * np.exp(-0.5 * ((freq - formant) / 300.0) ** 2))
        amp = np.where(freq < 0.45 * fs, amp, 0.0)
        harm += amp * np.sin(h * phase)
    harm /= np.max(np.abs(harm)) + 1e-12
    noise = rng.standard_normal(n)
    unvoiced_noise = np.convolve(noise, np.array([1.0, -0.5]), mode="same") * 0.05
    audio = recipe.amplitude * (ramp * harm + (1.0 - ramp) * unvoiced_noise * 4.0)
    audio += recipe.noise_level * rng.standard_normal(n)
    return audio


def synth_corpus(recipe: CorpusRecipe, seed: int = 0) -> list[Utterance]:
    """Fixed-seed harmonic corpus with true F0/uv labels and envelope features."""
    recipe.validate()
    rng = np.random.default_rng(seed)
    n_frames = int(round(recipe.duration_s * recipe.sample_rate / recipe.hop))
    out = []
    for i in range(recipe.n_utterances):
        f0_cont = _f0_contour(rng, n_frames, recipe)
        uv = _voicing(rng, n_frames, recipe)
        audio = synth_utterance(rng, f0_cont, uv, recipe)
        env = envelope_features(audio, recipe.hop, recipe.sample_rate)
        f0 = np.where(uv > 0, f0_cont, 0.0)
        out.append(Utterance(audio, FeatureTrack(f0, uv, env, recipe.hop, recipe.sample_rate), f"utt{i:03d}"))
    return out
