"""scikit-learn style wrappers around the vocoder pipeline.

:class:`F0Tracker` is a stateless transformer from waveforms to per-frame F0;
:class:`QPVocoder` fits a generator on a corpus and predicts waveforms from
feature tracks. Both follow the usual ``get_params``/``set_params`` contract so
they can be cloned and grid-searched, although fitting a vocoder is slow.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import Experiment
from .errors import ConfigurationError, UndefinedResultError
from .features import FeatureTrack, Utterance
from .model import DiscriminatorConfig, GeneratorConfig, MacroblockSpec, STRUCTURES
from .signal import estimate_f0_autocorr

# input validation ----------------------------------------------------------


def check_waveform(x, name: str = "waveform") -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array or raise ``ValueError``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    return arr


def check_waveforms(X) -> list[np.ndarray]:
    """Accept a single waveform or a sequence of them."""
    if isinstance(X, np.ndarray) and X.ndim == 1:
        return [check_waveform(X)]
    return [check_waveform(x, f"waveform {i}") for i, x in enumerate(X)]


def check_tracks(tracks) -> list[FeatureTrack]:
    if isinstance(tracks, FeatureTrack):
        tracks = [tracks]
    out = list(tracks)
    for i, t in enumerate(out):
        if not isinstance(t, FeatureTrack):
            raise TypeError(f"item {i} is {type(t).__name__}, expected FeatureTrack")
    if not out:
        raise ValueError("no feature tracks given")
    return out


def check_corpus(X) -> list[Utterance]:
    """Utterances, or ``(audio, track)`` pairs, validated for training."""
    out = []
    for i, item in enumerate(X):
        if isinstance(item, Utterance):
            u = item
        else:
            audio, track = item
            u = Utterance(check_waveform(audio), track, f"utt{i:03d}")
        check_waveform(u.audio, f"utterance {i}")
        out.append(u)
    if not out:
        raise ValueError("empty corpus")
    return out


# estimators ----------------------------------------------------------------


class F0Tracker(BaseEstimator, TransformerMixin):
    """Autocorrelation F0 tracker; ``transform`` returns Hz per frame (0 = unvoiced)."""

    def __init__(
        self,
        sample_rate: int = 22050,
        frame_shift: int = 110,
        frame_length: int = 1024,
        f0_min: float = 60.0,
        f0_max: float = 800.0,
        threshold: float = 0.3,
    ):
        self.sample_rate = sample_rate
        self.frame_shift = frame_shift
        self.frame_length = frame_length
        self.f0_min = f0_min
        self.f0_max = f0_max
        self.threshold = threshold

    def fit(self, X=None, y=None):
        if not 0 < self.f0_min < self.f0_max:
            raise ConfigurationError("need 0 < f0_min < f0_max")
        if self.frame_length < 2 or self.frame_shift < 1:
            raise ConfigurationError("frame_length must be >= 2 and frame_shift >= 1")
        if self.sample_rate / self.f0_min >= self.frame_length:
            raise ConfigurationError("frame_length is shorter than the longest pitch period")
        self.n_frames_seen_ = 0 if X is None else sum(
            max(0, (x.size - self.frame_length) // self.frame_shift + 1) for x in check_waveforms(X)
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "n_frames_seen_")
        waves = check_waveforms(X)
        out = [
            estimate_f0_autocorr(
                x, self.sample_rate, self.frame_shift, self.frame_length, self.f0_min, self.f0_max, self.threshold
            )
            for x in waves
        ]
        return out[0] if isinstance(X, np.ndarray) and np.asarray(X).ndim == 1 else out


class QPVocoder(BaseEstimator):
    """Train a (quasi-periodic) parallel WaveGAN generator and synthesise from features.

    Args:
        structure: ``single``, ``stacked-af``, ``stacked-fa`` or ``parallel``.
        n_adaptive: Adaptive blocks per cycle (ignored for ``single``).
        n_fixed: Fixed blocks per cycle.
        cycles: Dilation cycles per macroblock.
        channels: Residual and skip channels.
        dense_factor: Samples per pitch cycle seen by adaptive blocks.
        total_iters, warmup_iters: Training length and generator-only warm-up.
        lr_g, lr_d: Initial learning rates.
        disc_channels: Discriminator width.
        batch_size, batch_len: Random crops per step and their length in samples.
        noise_seed: Excitation seed used by :meth:`predict`.
        random_state: Seed for initialisation and batch sampling.
    """

    def __init__(
        self,
        structure: str = "stacked-af",
        n_adaptive: int = 4,
        n_fixed: int = 4,
        cycles: int = 1,
        channels: int = 16,
        dense_factor: float = 4.0,
        total_iters: int = 3000,
        warmup_iters: int = 1000,
        lr_g: float = 1e-3,
        lr_d: float = 5e-4,
        disc_channels: int = 16,
        batch_size: int = 2,
        batch_len: int = 4400,
        noise_seed: int = 0,
        random_state: int = 0,
    ):
        self.structure = structure
        self.n_adaptive = n_adaptive
        self.n_fixed = n_fixed
        self.cycles = cycles
        self.channels = channels
        self.dense_factor = dense_factor
        self.total_iters = total_iters
        self.warmup_iters = warmup_iters
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.disc_channels = disc_channels
        self.batch_size = batch_size
        self.batch_len = batch_len
        self.noise_seed = noise_seed
        self.random_state = random_state

    def _layout(self) -> tuple[MacroblockSpec, ...]:
        fixed = MacroblockSpec("fixed", self.n_fixed, self.cycles)
        if self.structure == "single":
            return (fixed,)
        ada = MacroblockSpec("adaptive", self.n_adaptive, self.cycles)
        return (fixed, ada) if self.structure == "stacked-fa" else (ada, fixed)

    def experiment(self, aux_channels: int) -> Experiment:
        """The full training configuration these hyperparameters describe."""
        if self.structure not in STRUCTURES:
            raise ConfigurationError(f"structure must be one of {STRUCTURES}, got {self.structure!r}")
        gen = GeneratorConfig(
            self.structure, self._layout(), self.channels, self.channels, aux_channels, float(self.dense_factor)
        )
        exp = Experiment(generator=gen, discriminator=DiscriminatorConfig(channels=self.disc_channels))
        train = replace(
            exp.train,
            total_iters=self.total_iters,
            warmup_iters=self.warmup_iters,
            lr_g=self.lr_g,
            lr_d=self.lr_d,
            lr_decay_every=max(1, self.total_iters // 2),
            batch_size=self.batch_size,
            batch_len_samples=self.batch_len,
            seed=self.random_state,
            checkpoint_every=max(1, self.total_iters),
        )
        return replace(exp, train=train)

    def fit(self, X, y=None):
        """Fit on utterances (or ``(audio, track)`` pairs); ``y`` is ignored."""
        from .train import run_training

        corpus = check_corpus(X)
        width = 2 + corpus[0].track.aux.shape[1]
        exp = self.experiment(width)
        res = run_training(exp, corpus)
        self.generator_ = res.generator
        self.discriminator_ = res.discriminator
        self.history_ = res.state.history
        self.n_aux_channels_ = width
        self.experiment_ = exp
        return self

    def predict(self, X, f0_ratio: float = 1.0):
        """Waveform per track (a single array when given one track)."""
        from .syntheval import synthesize

        check_is_fitted(self, "generator_")
        if f0_ratio <= 0:
            raise ValueError("f0_ratio must be positive")
        tracks = check_tracks(X)
        for t in tracks:
            if 2 + t.aux.shape[1] != self.n_aux_channels_:
                raise ValueError(f"track has {t.aux.shape[1]} aux channels, model expects {self.n_aux_channels_ - 2}")
        waves = [synthesize(self.generator_, t, f0_ratio, self.noise_seed + i) for i, t in enumerate(tracks)]
        return waves[0] if isinstance(X, FeatureTrack) else waves

    def score(self, X, y=None, f0_ratio: float = 1.0) -> float:
        """Negative pooled log-F0 RMSE (higher is better); ``-inf`` if nothing is jointly voiced."""
        from .syntheval import evaluate

        check_is_fitted(self, "generator_")
        tracks = [u.track for u in X] if X and isinstance(X[0], Utterance) else check_tracks(X)
        try:
            return -evaluate(self.generator_, tracks, f0_ratio, self.noise_seed).log_f0_rmse
        except UndefinedResultError:
            return float("-inf")


__all__ = ["F0Tracker", "QPVocoder", "check_corpus", "check_tracks", "check_waveform", "check_waveforms"]
