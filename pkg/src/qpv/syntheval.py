"""Inference, pitch-accuracy evaluation, RTF benchmarks and skip-output dissection."""

from __future__ import annotations

import csv
import ctypes
import ctypes.util
import os
import statistics
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import UndefinedResultError
from .numgrad import no_grad
from .features import (
    FeatureTrack,
    dilated_factors,
    make_continuous,
    scale_f0,
    upsample_to_samples,
)
from .model import Generator
from .signal import STFTSetting, estimate_f0_autocorr, harmonicity, stft_complex

EVAL_FRAME_LENGTH = 1024
EVAL_F0_MIN = 60.0
EVAL_F0_MAX = 800.0


def _conditioning(gen: Generator, track: FeatureTrack, f0_ratio: float):
    track = make_continuous(scale_f0(track, f0_ratio)) if np.any(track.f0 <= 0) else scale_f0(track, f0_ratio)
    cond, f0 = upsample_to_samples(track)
    factors = dilated_factors(f0, track.sample_rate, gen.cfg.dense_factor) if gen.cfg.has_adaptive else None
    return track, cond, factors


def _noise(seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((1, n))


def synthesize(gen: Generator, track: FeatureTrack, f0_ratio: float = 1.0, noise_seed: int = 0) -> np.ndarray:
    """Waveform of ``frames * hop`` samples for a (possibly F0-scaled) track."""
    _, cond, factors = _conditioning(gen, track, f0_ratio)
    with no_grad():
        out = gen.forward(_noise(noise_seed, cond.shape[1]), cond, factors)
    return np.asarray(out.data[0], dtype=np.float64)


# pitch accuracy --------------------------------------------------------------


@dataclass
class EvalReport:
    log_f0_rmse: float
    voiced_frame_fraction: float
    target_voiced_fraction: float
    n_joint_voiced: int
    n_frames: int
    per_utterance: list[dict] = field(default_factory=list)

    def row(self, **extra) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "per_utterance"}
        d.update(extra)
        return d


def _frame_errors(generated, target_f0, uv, sample_rate, hop, frame_length):
    est = estimate_f0_autocorr(generated, sample_rate, hop, frame_length, EVAL_F0_MIN, EVAL_F0_MAX)
    target_f0 = np.asarray(target_f0, dtype=np.float64)
    uv = np.asarray(uv) > 0
    # map each analysis frame to the feature frame under its centre
    centres = (np.arange(est.size) * hop + frame_length // 2) // hop
    inside = centres < target_f0.size
    est, centres = est[inside], centres[inside]
    tgt, tuv = target_f0[centres], uv[centres] & (target_f0[centres] > 0)
    joint = tuv & (est > 0)
    err = np.log(est[joint]) - np.log(tgt[joint])
    return err, est > 0, tuv


def pitch_accuracy(
    generated,
    target_f0,
    uv,
    sample_rate: int,
    hop: int,
    frame_length: int = EVAL_FRAME_LENGTH,
) -> EvalReport:
    """Log-F0 RMSE over frames voiced in both the target and the estimate."""
    err, est_v, tgt_v = _frame_errors(generated, target_f0, uv, sample_rate, hop, frame_length)
    if err.size == 0:
        raise UndefinedResultError("no frame is voiced in both the target and the generated audio")
    return EvalReport(
        float(np.sqrt(np.mean(err**2))),
        float(est_v.mean()),
        float(tgt_v.mean()),
        int(err.size),
        int(est_v.size),
    )


def evaluate(
    gen: Generator,
    tracks: Sequence[FeatureTrack],
    f0_ratio: float = 1.0,
    noise_seed: int = 0,
    names: Sequence[str] | None = None,
) -> EvalReport:
    """Pooled pitch accuracy of ``gen`` re-synthesising every track at ``f0_ratio``."""
    errs, est_v, tgt_v, per = [], [], [], []
    for i, track in enumerate(tracks):
        scaled = scale_f0(track, f0_ratio)
        audio = synthesize(gen, track, f0_ratio, noise_seed + i)
        e, ev, tv = _frame_errors(audio, scaled.f0, scaled.uv, track.sample_rate, track.hop, EVAL_FRAME_LENGTH)
        errs.append(e)
        est_v.append(ev)
        tgt_v.append(tv)
        per.append({
            "utterance": names[i] if names else f"utt{i:03d}",
            "f0_ratio": f0_ratio,
            "log_f0_rmse": float(np.sqrt(np.mean(e**2))) if e.size else float("nan"),
            "n_joint_voiced": int(e.size),
            "voiced_frame_fraction": float(ev.mean()),
        })
    e = np.concatenate(errs)
    if e.size == 0:
        raise UndefinedResultError("no jointly voiced frame in any utterance")
    ev, tv = np.concatenate(est_v), np.concatenate(tgt_v)
    return EvalReport(float(np.sqrt(np.mean(e**2))), float(ev.mean()), float(tv.mean()), int(e.size), int(ev.size), per)


def write_report_csv(path, rows: Iterable[dict]) -> None:
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


# real-time factor -------------------------------------------------------------


@dataclass
class RtfReport:
    model: str
    audio_seconds: float
    wall_seconds: float
    rtf: float
    threads: int
    repeats: int
    n_params: int


def _limit_threads(threads: int | None):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads) if threads else threadpool_limits(limits=None)


# glibc mallopt parameters and their documented defaults
_M_TRIM_THRESHOLD, _M_TOP_PAD, _M_MMAP_THRESHOLD = -1, -2, -3
_MALLOC_DEFAULTS = ((_M_TRIM_THRESHOLD, 128 * 1024), (_M_TOP_PAD, 0), (_M_MMAP_THRESHOLD, 128 * 1024))


@contextmanager
def _steady_heap():
    """Keep large temporaries on the heap while timing.

    By default glibc maps every large array freshly from the kernel, so each
    forward pass pays for zeroing new pages and that cost grows faster than
    linearly with the signal length. No-op when glibc is unavailable.
    """
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        yield
        return
    big = 1 << 30
    for param, value in ((_M_MMAP_THRESHOLD, 32 * 1024 * 1024), (_M_TRIM_THRESHOLD, big), (_M_TOP_PAD, 64 * 1024 * 1024)):
        mallopt(param, value)
    try:
        yield
    finally:
        for param, value in _MALLOC_DEFAULTS:
            mallopt(param, value)


def rtf_benchmark(
    gen: Generator,
    seconds_of_audio: float,
    repeats: int = 3,
    threads: int | None = None,
    model_id: str = "model",
    f0_hz: float = 200.0,
) -> RtfReport:
    """Median wall time of a full forward pass divided by the audio duration."""
    if repeats < 3:
        raise ValueError("rtf_benchmark needs at least 3 repeats")
    sr = gen.cfg.sample_rate
    n = int(round(seconds_of_audio * sr))
    rng = np.random.default_rng(0)
    aux = rng.standard_normal((gen.cfg.aux_channels, n)) * 0.1
    factors = np.full(n, sr / (f0_hz * gen.cfg.dense_factor)) if gen.cfg.has_adaptive else None
    z = rng.standard_normal((1, n))
    threads = threads or int(os.environ.get("QPV_THREADS", "0")) or None
    times = []
    with _limit_threads(threads), no_grad(), _steady_heap():
        gen.forward(z, aux, factors)  # warm the heap and caches
        for _ in range(repeats):
            t0 = time.perf_counter()
            gen.forward(z, aux, factors)
            times.append(time.perf_counter() - t0)
    wall = statistics.median(times)
    return RtfReport(model_id, n / sr, wall, wall / (n / sr), threads or 0, repeats, gen.n_params)


# dissection --------------------------------------------------------------------


def write_pgm(path, grid: np.ndarray) -> None:
    """8-bit binary PGM with the first row at the top; values scaled to [0, 255]."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = float(g.min()), float(g.max())
    img = np.zeros_like(g) if hi <= lo else (g - lo) / (hi - lo)
    pix = np.round(img * 255).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())


def log_spectrogram(x: np.ndarray, setting: STFTSetting = STFTSetting(1024, 110, 1024)) -> np.ndarray:
    """Log-magnitude grid ``(bins, frames)`` with low frequencies in the last row."""
    mag = np.abs(stft_complex(x, setting))
    return np.log(np.maximum(mag, 1e-7)).T[::-1]


def parse_range(text: str) -> list[int]:
    lo, _, hi = text.partition("-")
    lo_i = int(lo)
    hi_i = int(hi) if hi else lo_i
    return list(range(lo_i, hi_i + 1))


def dump_intermediate(
    gen: Generator,
    track: FeatureTrack,
    ranges: Sequence[Sequence[int]] | None,
    out_dir,
    f0_ratio: float = 1.0,
    noise_seed: int = 0,
) -> dict:
    """Write cumulative-skip waveforms and spectrograms for each block range.

    When ``ranges`` is None the full range plus the adaptive-only and
    fixed-only ranges (if present) are dumped. Returns the manifest dict.
    """
    from .io import write_wav

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scaled, cond, factors = _conditioning(gen, track, f0_ratio)
    z = _noise(noise_seed, cond.shape[1])
    named: list[tuple[str, list[int]]] = []
    if ranges is None:
        named.append(("full", list(range(len(gen.blocks)))))
        for kind in ("adaptive", "fixed"):
            if gen.block_range(kind):
                named.append((kind, gen.block_range(kind)))
    else:
        for r in ranges:
            r = list(r)
            named.append((f"blocks_{r[0]}-{r[-1]}", r))
    sr, hop = track.sample_rate, track.hop
    voiced = scaled.uv > 0
    manifest: dict = {"ranges": len(named), "sample_rate": sr, "f0_ratio": f0_ratio, "noise_seed": noise_seed}
    with no_grad():
        skips = gen.skip_outputs(z, cond, factors)
    for i, (name, idx) in enumerate(named):
        total = skips[idx[0]]
        for j in idx[1:]:
            total = total + skips[j]
        with no_grad():
            wave = np.asarray(gen.output_module(total).data[0], dtype=np.float64)
        stem = f"range{i:02d}_{name}"
        write_wav(out / f"{stem}.wav", np.clip(wave, -1, 1), sr)
        np.save(out / f"{stem}.npy", wave)
        spec = log_spectrogram(wave)
        write_pgm(out / f"{stem}.pgm", spec)
        np.savetxt(out / f"{stem}_spec.txt", spec, fmt="%.6e")
        mask = _frame_mask(voiced, wave.size, hop)
        h = harmonicity(wave, sr, hop, EVAL_FRAME_LENGTH, EVAL_F0_MIN, EVAL_F0_MAX, mask)
        manifest[f"range{i:02d}.name"] = name
        manifest[f"range{i:02d}.blocks"] = f"{idx[0]}-{idx[-1]}" if idx == list(range(idx[0], idx[-1] + 1)) else ",".join(map(str, idx))
        manifest[f"range{i:02d}.harmonicity"] = h
        manifest[f"range{i:02d}.rms"] = float(np.sqrt(np.mean(wave**2)))
        manifest[f"range{i:02d}.files"] = f"{stem}.wav,{stem}.npy,{stem}.pgm,{stem}_spec.txt"
    with open(out / "manifest.txt", "w") as fh:
        for k, v in manifest.items():
            fh.write(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n")
    return manifest


def _frame_mask(voiced_frames: np.ndarray, n_samples: int, hop: int) -> np.ndarray:
    n = 0 if n_samples < EVAL_FRAME_LENGTH else (n_samples - EVAL_FRAME_LENGTH) // hop + 1
    centres = (np.arange(n) * hop + EVAL_FRAME_LENGTH // 2) // hop
    return voiced_frames[np.minimum(centres, voiced_frames.size - 1)]


def harmonicity_of(wave: np.ndarray, track: FeatureTrack) -> float:
    mask = _frame_mask(track.uv > 0, wave.size, track.hop)
    return harmonicity(wave, track.sample_rate, track.hop, EVAL_FRAME_LENGTH, EVAL_F0_MIN, EVAL_F0_MAX, mask)
