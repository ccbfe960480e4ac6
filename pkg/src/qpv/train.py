"""Two-phase GAN training: STFT-only warm-up, then alternating D/G updates."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numgrad as ng
from .errors import ConfigurationError, EmptyInputError
from .features import Utterance, dilated_factors, make_continuous, upsample_to_samples
from .loss import LossConfig, disc_loss, generator_loss, multi_res_stft_loss
from .model import Discriminator, Generator, Params

log = logging.getLogger(__name__)

LOG_FIELDS = ("iteration", "phase", "lr_g", "lr_d", "loss_sp", "loss_adv", "loss_d", "skipped")


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 3000
    warmup_iters: int = 1000
    lr_g: float = 1e-4
    lr_d: float = 5e-5
    lr_decay_every: int = 1500
    lr_decay_factor: float = 0.5
    batch_size: int = 2
    batch_len_samples: int = 4400
    seed: int = 0
    lambda_adv: float = 4.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    checkpoint_every: int = 500
    dtype: str = "float32"

    def validate(self, loss_cfg: LossConfig | None = None) -> None:
        if self.total_iters < 0 or not 0 <= self.warmup_iters <= self.total_iters:
            raise ConfigurationError("need 0 <= warmup_iters <= total_iters")
        if self.batch_size < 1 or self.lr_decay_every < 1 or self.checkpoint_every < 1:
            raise ConfigurationError("batch_size, lr_decay_every and checkpoint_every must be >= 1")
        if loss_cfg is not None and self.batch_len_samples < loss_cfg.max_frame_length:
            raise ConfigurationError(
                f"batch_len_samples {self.batch_len_samples} is shorter than the longest "
                f"STFT frame ({loss_cfg.max_frame_length})"
            )
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")


def lr_at(iteration: int, lr0: float, decay_every: int, factor: float = 0.5) -> float:
    """Step decay: ``lr0 * factor ** floor(iteration / decay_every)``."""
    if iteration < 0:
        raise ConfigurationError("iteration must be non-negative")
    return lr0 * factor ** (iteration // decay_every)


# optimiser ---------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: int = 0


def adam_step(
    params: Params,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-6,
) -> bool:
    """Bias-corrected Adam update from the ``.grad`` of every parameter.

    Parameters without a gradient are treated as having a zero gradient.
    Returns False (and leaves everything untouched) if any gradient is
    non-finite.
    """
    grads = {}
    for name, t in params:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            log.warning("non-finite gradient in %s; skipping step %d", name, state.step + 1)
            return False
        grads[name] = g
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, t in params:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        t.data = t.data - (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(t.data.dtype)
    return True


# batches -------------------------------------------------------------------------


@dataclass
class Batch:
    audio: np.ndarray  # (B, T)
    aux: np.ndarray  # (B, A, T)
    factors: np.ndarray  # (B, T) dilated factors E_t
    noise: np.ndarray  # (B, 1, T)
    sources: list[tuple[int, int]]  # (utterance index, start frame)


class BatchSampler:
    """Draws hop-aligned segments from a corpus with a single numpy generator."""

    def __init__(self, corpus: Sequence[Utterance], batch_len: int, dense_factor: float):
        if not corpus:
            raise EmptyInputError("training corpus is empty")
        hop = corpus[0].track.hop
        if batch_len % hop:
            raise ConfigurationError(f"batch length {batch_len} is not a multiple of hop {hop}")
        self.hop = hop
        self.n_frames = batch_len // hop
        self.batch_len = batch_len
        self.dense_factor = dense_factor
        self.items = []
        for i, u in enumerate(corpus):
            if u.track.n_frames < self.n_frames or u.audio.size < u.track.n_samples:
                log.warning("skipping %s: shorter than one %d-sample segment", u.name or i, batch_len)
                continue
            self.items.append((i, u, make_continuous(u.track)))
        if not self.items:
            raise EmptyInputError("no utterance is long enough for one training segment")

    def sample(self, rng: np.random.Generator, batch_size: int) -> Batch:
        audio, aux, factors, sources = [], [], [], []
        for _ in range(batch_size):
            k = int(rng.integers(len(self.items)))
            i, u, track = self.items[k]
            start = int(rng.integers(0, track.n_frames - self.n_frames + 1))
            seg = track.frames(start, start + self.n_frames)
            cond, f0 = upsample_to_samples(seg)
            s0 = start * self.hop
            audio.append(u.audio[s0 : s0 + self.batch_len])
            aux.append(cond)
            factors.append(dilated_factors(f0, seg.sample_rate, self.dense_factor))
            sources.append((i, start))
        noise = rng.standard_normal((batch_size, 1, self.batch_len))
        return Batch(np.stack(audio), np.stack(aux), np.stack(factors), noise, sources)


def sample_batch(corpus, batch_size: int, batch_len: int, rng: np.random.Generator, dense_factor: float = 4.0) -> Batch:
    return BatchSampler(corpus, batch_len, dense_factor).sample(rng, batch_size)


# training loop ---------------------------------------------------------------------


@dataclass
class TrainState:
    iteration: int = 0
    opt_g: AdamState = field(default_factory=AdamState)
    opt_d: AdamState = field(default_factory=AdamState)
    rng_state: dict | None = None
    avg_loss_sp: float | None = None
    history: list[dict] = field(default_factory=list)


def _cast(batch: Batch, dtype) -> Batch:
    return Batch(
        batch.audio.astype(dtype),
        batch.aux.astype(dtype),
        batch.factors,
        batch.noise.astype(dtype),
        batch.sources,
    )


def train_step(
    gen: Generator,
    disc: Discriminator,
    batch: Batch,
    phase: str,
    cfg: TrainConfig,
    state: TrainState,
    loss_cfg: LossConfig,
) -> dict:
    """One iteration. Warm-up touches only the generator; the adversarial
    phase updates the discriminator first, then the generator."""
    if phase not in ("warmup", "adversarial"):
        raise ConfigurationError(f"unknown phase {phase!r}")
    it = state.iteration
    lr_g = lr_at(it, cfg.lr_g, cfg.lr_decay_every, cfg.lr_decay_factor)
    lr_d = lr_at(it, cfg.lr_d, cfg.lr_decay_every, cfg.lr_decay_factor)
    batch = _cast(batch, gen.params.dtype)
    report = {"iteration": it + 1, "phase": phase, "lr_g": lr_g, "lr_d": lr_d,
              "loss_sp": math.nan, "loss_adv": math.nan, "loss_d": math.nan, "skipped": 0}

    fake = gen.forward(batch.noise, batch.aux, batch.factors)[:, 0, :]
    if phase == "adversarial":
        d_loss = disc_loss(disc.forward(batch.audio[:, None, :]), disc.forward(fake.data[:, None, :]))
        report["loss_d"] = float(d_loss.data)
        disc.params.zero_grad()
        if np.isfinite(d_loss.data):
            ng.backward(d_loss)
            if not adam_step(disc.params, state.opt_d, lr_d, cfg.beta1, cfg.beta2, cfg.eps):
                report["skipped"] = 1
        else:
            report["skipped"] = 1
        disc.params.zero_grad()

    sp = multi_res_stft_loss(batch.audio, fake, loss_cfg)
    report["loss_sp"] = float(sp.data)
    if phase == "adversarial" and cfg.lambda_adv > 0:
        scores = disc.forward(ng.getitem(fake, (slice(None), None, slice(None))))
        adv = ng.mean(ng.square(1.0 - scores))
        report["loss_adv"] = float(adv.data)
        g_loss = sp + adv * cfg.lambda_adv
    else:
        g_loss = sp
    gen.params.zero_grad()
    if np.isfinite(g_loss.data):
        ng.backward(g_loss)
        if not adam_step(gen.params, state.opt_g, lr_g, cfg.beta1, cfg.beta2, cfg.eps):
            report["skipped"] = 1
    else:
        log.warning("non-finite generator loss at iteration %d; skipped", it + 1)
        report["skipped"] = 1
    gen.params.zero_grad()
    disc.params.zero_grad()

    state.iteration += 1
    if np.isfinite(report["loss_sp"]):
        a = state.avg_loss_sp
        state.avg_loss_sp = report["loss_sp"] if a is None else 0.98 * a + 0.02 * report["loss_sp"]
    state.history.append(report)
    return report


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    state: TrainState
    checkpoint: Path | None


def write_loss_log(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in LOG_FIELDS})


def run_training(
    experiment,
    corpus: Sequence[Utterance],
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    stop_at: int | None = None,
) -> TrainResult:
    """Train from scratch (or from ``resume``) up to ``stop_at`` or ``total_iters``.

    ``experiment`` is an :class:`~qpv.config.Experiment`. When ``out_dir`` is
    given, checkpoints are written every ``checkpoint_every`` iterations and
    at the end, together with ``loss_log.csv``.
    """
    from .io import load_checkpoint, save_checkpoint

    cfg: TrainConfig = experiment.train
    loss_cfg = LossConfig(experiment.loss.stft_groups, cfg.lambda_adv)
    cfg.validate(loss_cfg)
    dtype = np.dtype(cfg.dtype)
    if resume is not None:
        ck = load_checkpoint(resume)
        gen, disc, state = ck.generator, ck.discriminator, ck.state
        if gen.params.dtype != dtype:
            raise ConfigurationError("checkpoint dtype differs from the training config")
    else:
        gen = Generator(experiment.generator, seed=cfg.seed, dtype=dtype)
        disc = Discriminator(experiment.discriminator, seed=cfg.seed + 1, dtype=dtype)
        state = TrainState()
    rng = np.random.default_rng(cfg.seed)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state
    sampler = BatchSampler(corpus, cfg.batch_len_samples, experiment.generator.dense_factor)
    end = cfg.total_iters if stop_at is None else min(stop_at, cfg.total_iters)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    last_ck = None

    def checkpoint():
        nonlocal last_ck
        if out is None:
            return
        state.rng_state = rng.bit_generator.state
        last_ck = out / f"checkpoint_{state.iteration:07d}.qpv"
        save_checkpoint(last_ck, gen, disc, state, experiment)
        write_loss_log(out / "loss_log.csv", state.history)

    while state.iteration < end:
        phase = "warmup" if state.iteration < cfg.warmup_iters else "adversarial"
        batch = sampler.sample(rng, cfg.batch_size)
        rep = train_step(gen, disc, batch, phase, cfg, state, loss_cfg)
        if rep["iteration"] % 100 == 0:
            log.info("iter %d %s L_sp=%.4f L_adv=%.4f L_D=%.4f", rep["iteration"], phase,
                     rep["loss_sp"], rep["loss_adv"], rep["loss_d"])
        if state.iteration % cfg.checkpoint_every == 0 and state.iteration < end:
            checkpoint()
    state.rng_state = rng.bit_generator.state
    if out is not None and (last_ck is None or not last_ck.name.endswith(f"{state.iteration:07d}.qpv")):
        checkpoint()
    return TrainResult(gen, disc, state, last_ck)
