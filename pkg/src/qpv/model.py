"""QPPWG / PWG generators, the PWG discriminator, and receptive-field analysis."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numgrad as ng
from .errors import ConfigurationError, UsageError
from .features import DilationPlan, dilation_plan
from .numgrad import Tensor

STRUCTURES = ("single", "stacked-af", "stacked-fa", "parallel")


@dataclass(frozen=True)
class MacroblockSpec:
    """``blocks_per_cycle`` x ``cycles`` residual blocks of one kind."""

    kind: str
    blocks_per_cycle: int
    cycles: int = 1

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive"):
            raise ConfigurationError(f"macroblock kind must be fixed or adaptive, got {self.kind!r}")
        if self.blocks_per_cycle < 1 or self.cycles < 1:
            raise ConfigurationError("macroblocks need at least one block and one cycle")

    @property
    def n_blocks(self) -> int:
        return self.blocks_per_cycle * self.cycles

    def base_dilations(self) -> list[int]:
        return [2**j for _ in range(self.cycles) for j in range(self.blocks_per_cycle)]

    @property
    def half_span(self) -> int:
        """One-sided reach in units of the base dilation: ``cycles * (2^n - 1)``."""
        return self.cycles * (2**self.blocks_per_cycle - 1)

    def label(self) -> str:
        tag = "Fix" if self.kind == "fixed" else "Ada"
        return f"B_{tag}{self.blocks_per_cycle}x{self.cycles}"


@dataclass(frozen=True)
class GeneratorConfig:
    structure: str = "stacked-af"
    macroblocks: tuple[MacroblockSpec, ...] = (
        MacroblockSpec("adaptive", 5, 2),
        MacroblockSpec("fixed", 10, 1),
    )
    residual_channels: int = 64
    skip_channels: int = 64
    aux_channels: int = 39
    dense_factor: float = 4.0
    sample_rate: int = 22050
    weight_norm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "macroblocks", tuple(self.macroblocks))
        if self.structure not in STRUCTURES:
            raise ConfigurationError(f"unknown structure {self.structure!r}; expected one of {STRUCTURES}")
        kinds = [m.kind for m in self.macroblocks]
        if self.structure == "single":
            if kinds != ["fixed"]:
                raise ConfigurationError("a single (PWG) structure has exactly one fixed macroblock")
        else:
            if sorted(kinds) != ["adaptive", "fixed"]:
                raise ConfigurationError(
                    f"{self.structure} needs exactly one fixed and one adaptive macroblock, got {kinds}"
                )
            if self.structure == "stacked-af" and kinds[0] != "adaptive":
                raise ConfigurationError("stacked-af puts the adaptive macroblock first")
            if self.structure == "stacked-fa" and kinds[0] != "fixed":
                raise ConfigurationError("stacked-fa puts the fixed macroblock first")
        for name in ("residual_channels", "skip_channels", "aux_channels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.dense_factor <= 0:
            raise ConfigurationError("dense_factor must be positive")

    @property
    def n_blocks(self) -> int:
        return sum(m.n_blocks for m in self.macroblocks)

    @property
    def has_adaptive(self) -> bool:
        return any(m.kind == "adaptive" for m in self.macroblocks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["macroblocks"] = [asdict(m) for m in self.macroblocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["macroblocks"] = tuple(MacroblockSpec(**m) for m in d.get("macroblocks", ()))
        return cls(**d)


def preset(name: str, channels: int = 64, aux_channels: int = 39, **kw) -> GeneratorConfig:
    """Named layouts: pwg30, pwg20, pwg16, qppwg20 / qppwgaf20, qppwgfa20, qppwgaf16, qppwgfa16, qppwgpar20."""
    fix, ada = "fixed", "adaptive"
    layouts = {
        "pwg30": ("single", [(fix, 10, 3)]),
        "pwg20": ("single", [(fix, 10, 2)]),
        "pwg16": ("single", [(fix, 4, 4)]),
        "qppwg20": ("stacked-af", [(ada, 5, 2), (fix, 10, 1)]),
        "qppwgaf20": ("stacked-af", [(ada, 5, 2), (fix, 10, 1)]),
        "qppwgfa20": ("stacked-fa", [(fix, 10, 1), (ada, 5, 2)]),
        "qppwgaf16": ("stacked-af", [(ada, 4, 2), (fix, 4, 2)]),
        "qppwgfa16": ("stacked-fa", [(fix, 4, 2), (ada, 4, 2)]),
        "qppwgpar20": ("parallel", [(ada, 5, 2), (fix, 10, 1)]),
    }
    key = name.lower().replace("_", "").replace("-", "")
    if key not in layouts:
        raise ConfigurationError(f"unknown preset {name!r}; known: {sorted(layouts)}")
    structure, blocks = layouts[key]
    return GeneratorConfig(
        structure=structure,
        macroblocks=tuple(MacroblockSpec(*b) for b in blocks),
        residual_channels=channels,
        skip_channels=channels,
        aux_channels=aux_channels,
        **kw,
    )


# parameters ---------------------------------------------------------------


class Params:
    """Ordered store of named leaf tensors."""

    def __init__(self, dtype=np.float64):
        self.tensors: dict[str, Tensor] = {}
        self.dtype = np.dtype(dtype)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.tensors):
            missing = set(self.tensors) ^ set(state)
            raise ConfigurationError(f"parameter names differ: {sorted(missing)[:5]}")
        for k, v in state.items():
            if v.shape != self.tensors[k].shape:
                raise ConfigurationError(f"parameter {k} has shape {v.shape}, expected {self.tensors[k].shape}")
            self.tensors[k].data = np.array(v, dtype=self.dtype)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def _add_conv(p: Params, rng, name: str, out_ch: int, in_ch: int, taps: int, wn: bool) -> None:
    shape = (taps, out_ch, in_ch) if taps > 1 else (out_ch, in_ch)
    v = _uniform(rng, shape, in_ch * taps)
    if wn:
        p.add(name + ".v", v)
        axes = (0, 2) if taps > 1 else (1,)
        p.add(name + ".g", np.sqrt(np.sum(v * v, axis=axes)))
    else:
        p.add(name + ".w", v)
    p.add(name + ".b", _uniform(rng, (out_ch,), in_ch * taps))


def _weight(p: Params, name: str) -> Tensor:
    if name + ".w" in p.tensors:
        return p[name + ".w"]
    return ng.weight_norm(p[name + ".v"], p[name + ".g"])


def _conv1x1(p: Params, name: str, x: Tensor) -> Tensor:
    return ng.conv1x1(x, _weight(p, name), p[name + ".b"])


def _taps(p: Params, name: str) -> tuple[Tensor, Tensor, Tensor]:
    w = _weight(p, name)
    return w[0], w[1], w[2]


@dataclass
class BlockInfo:
    index: int
    kind: str
    base_dilation: int
    macroblock: int


class Generator:
    """Noise-to-waveform generator built from fixed (DCNN) and adaptive (PDCNN) blocks."""

    def __init__(self, cfg: GeneratorConfig, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.seed = seed
        self.params = Params(dtype)
        rng = np.random.default_rng(seed)
        r, s, a, wn = cfg.residual_channels, cfg.skip_channels, cfg.aux_channels, cfg.weight_norm
        _add_conv(self.params, rng, "input", r, 1, 1, wn)
        self.blocks: list[BlockInfo] = []
        for mi, mb in enumerate(cfg.macroblocks):
            for d in mb.base_dilations():
                i = len(self.blocks)
                self.blocks.append(BlockInfo(i, mb.kind, d, mi))
                _add_conv(self.params, rng, f"blocks.{i}.conv", 2 * r, r, 3, wn)
                _add_conv(self.params, rng, f"blocks.{i}.aux", 2 * r, a, 1, wn)
                _add_conv(self.params, rng, f"blocks.{i}.res", r, r, 1, wn)
                _add_conv(self.params, rng, f"blocks.{i}.skip", s, r, 1, wn)
        _add_conv(self.params, rng, "output.0", s, s, 1, wn)
        _add_conv(self.params, rng, "output.1", 1, s, 1, wn)

    @property
    def n_params(self) -> int:
        return self.params.count()

    def block_range(self, kind: str) -> list[int]:
        return [b.index for b in self.blocks if b.kind == kind]

    # forward ----------------------------------------------------------------

    def _plans(self, factors, length: int) -> Callable[[int], DilationPlan]:
        if callable(factors):
            return factors
        if factors is None:
            if self.cfg.has_adaptive:
                raise UsageError("adaptive blocks need dilated factors (E_t) or a plan factory")
            return lambda d: None
        factors = np.asarray(factors, dtype=np.float64)
        if factors.shape[-1] != length:
            raise UsageError(f"factors cover {factors.shape[-1]} samples, input has {length}")
        cache: dict[int, DilationPlan] = {}

        def plan_for(d: int) -> DilationPlan:
            if d not in cache:
                cache[d] = dilation_plan(factors, d, self.cfg.dense_factor)
            return cache[d]

        return plan_for

    def _block(self, i: int, x: Tensor, aux: Tensor, plan_for, substitute: bool) -> tuple[Tensor, Tensor]:
        info = self.blocks[i]
        p = self.params
        wc, wp, wf = _taps(p, f"blocks.{i}.conv")
        bias = p[f"blocks.{i}.conv.b"]
        if info.kind == "fixed" or substitute:
            h = ng.dilated_conv1d(x, wc, wp, wf, bias, info.base_dilation)
        else:
            plan = plan_for(info.base_dilation)
            if plan.length != x.length:
                raise UsageError(f"plan covers {plan.length} samples, input has {x.length}")
            h = ng.pitch_dilated_conv1d(x, wc, wp, wf, bias, plan)
        h = h + _conv1x1(p, f"blocks.{i}.aux", aux)
        r = self.cfg.residual_channels
        o = ng.gated_activation(h[..., :r, :], h[..., r:, :])
        skip = _conv1x1(p, f"blocks.{i}.skip", o)
        x = x + _conv1x1(p, f"blocks.{i}.res", o)
        return x, skip

    def skip_outputs(self, z, aux, factors=None, substitute_fixed: bool = False) -> list[Tensor]:
        """Per-block skip tensors in block order."""
        z, aux = ng.as_tensor(z), ng.as_tensor(aux)
        if z.length != aux.length:
            raise UsageError(f"noise length {z.length} differs from aux length {aux.length}")
        if aux.channels != self.cfg.aux_channels:
            raise UsageError(f"aux has {aux.channels} channels, model expects {self.cfg.aux_channels}")
        if z.data.dtype != self.params.dtype:
            z = Tensor(z.data.astype(self.params.dtype))
        if aux.data.dtype != self.params.dtype:
            aux = Tensor(aux.data.astype(self.params.dtype))
        plan_for = self._plans(factors, z.length)
        x0 = _conv1x1(self.params, "input", z)
        skips: list[Tensor] = []
        if self.cfg.structure == "parallel":
            for mi in range(len(self.cfg.macroblocks)):
                x = x0
                for info in self.blocks:
                    if info.macroblock == mi:
                        x, s = self._block(info.index, x, aux, plan_for, substitute_fixed)
                        skips.append(s)
        else:
            x = x0
            for info in self.blocks:
                x, s = self._block(info.index, x, aux, plan_for, substitute_fixed)
                skips.append(s)
        return skips

    def output_module(self, skip_sum: Tensor) -> Tensor:
        h = _conv1x1(self.params, "output.0", ng.relu(skip_sum))
        return _conv1x1(self.params, "output.1", ng.relu(h))

    def forward(self, z, aux, factors=None, substitute_fixed: bool = False) -> Tensor:
        """Waveform ``(..., 1, T)`` from noise ``(..., 1, T)`` and aux ``(..., A, T)``.

        ``factors`` is the per-sample ``E_t`` (or a callable returning a
        :class:`DilationPlan` for a base dilation). ``substitute_fixed`` runs
        adaptive blocks as plain DCNNs for structural comparisons.
        """
        return self.forward_with_skips(z, aux, factors, substitute_fixed)[0]

    def forward_with_skips(self, z, aux, factors=None, substitute_fixed: bool = False):
        skips = self.skip_outputs(z, aux, factors, substitute_fixed)
        return self.output_module(_sum_tensors(skips)), skips

    __call__ = forward

    def cumulative_skip_output(self, z, aux, factors=None, block_range: Iterable[int] | None = None) -> Tensor:
        """Output module applied to the skip sum over ``block_range`` only."""
        idx = list(range(len(self.blocks))) if block_range is None else list(block_range)
        if not idx:
            raise UsageError("block range is empty")
        if min(idx) < 0 or max(idx) >= len(self.blocks):
            raise UsageError(f"block range {idx[0]}..{idx[-1]} outside 0..{len(self.blocks) - 1}")
        skips = self.skip_outputs(z, aux, factors)
        return self.output_module(_sum_tensors([skips[i] for i in idx]))


def _sum_tensors(ts: Sequence[Tensor]) -> Tensor:
    out = ts[0]
    for t in ts[1:]:
        out = out + t
    return out


def build_generator(cfg: GeneratorConfig, seed: int = 0, dtype=np.float64) -> Generator:
    return Generator(cfg, seed=seed, dtype=dtype)


# discriminator --------------------------------------------------------------


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Ten three-tap layers by default; all but the last use leaky ReLU."""

    layers: int = 10
    channels: int = 64
    alpha: float = 0.2
    weight_norm: bool = True

    def __post_init__(self):
        if self.layers < 2:
            raise ConfigurationError("discriminator needs at least two layers")
        if self.channels < 1:
            raise ConfigurationError("discriminator channels must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"leaky ReLU slope must lie in [0, 1], got {self.alpha}")


class Discriminator:
    """Unconditional per-sample real/fake scorer.

    Hidden layer ``i`` uses dilation ``2**i``; the last layer projects to one
    channel with dilation 1 and no activation.
    """

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.seed = seed
        self.params = Params(dtype)
        rng = np.random.default_rng(seed)
        in_ch = 1
        for i in range(cfg.layers - 1):
            _add_conv(self.params, rng, f"layers.{i}", cfg.channels, in_ch, 3, cfg.weight_norm)
            in_ch = cfg.channels
        _add_conv(self.params, rng, "final", 1, in_ch, 3, cfg.weight_norm)

    @property
    def n_params(self) -> int:
        return self.params.count()

    def dilations(self) -> list[int]:
        return [2**i for i in range(self.cfg.layers - 1)] + [1]

    def forward(self, x) -> Tensor:
        x = ng.as_tensor(x)
        if x.length == 0:
            raise UsageError("cannot score an empty waveform")
        if x.data.dtype != self.params.dtype and not x.requires_grad:
            x = Tensor(x.data.astype(self.params.dtype))
        h = x
        for i in range(self.cfg.layers - 1):
            wc, wp, wf = _taps(self.params, f"layers.{i}")
            h = ng.dilated_conv1d(h, wc, wp, wf, self.params[f"layers.{i}.b"], 2**i)
            h = ng.leaky_relu(h, self.cfg.alpha)
        wc, wp, wf = _taps(self.params, "final")
        return ng.dilated_conv1d(h, wc, wp, wf, self.params["final.b"], 1)

    __call__ = forward


# receptive fields -------------------------------------------------------------


def receptive_field_length(cfg: GeneratorConfig, factor: float | None = None) -> float:
    """Closed-form receptive field in samples.

    A macroblock of ``n`` blocks per cycle and ``c`` cycles reaches
    ``c * (2^n - 1)`` base dilations to each side; adaptive macroblocks scale
    this by the representative dilated factor ``E``. Stacked macroblocks add
    their reaches; parallel macroblocks take the wider branch. The centre
    sample is counted once.
    """
    if cfg.has_adaptive and factor is None:
        raise UsageError("a representative dilated factor E is required for adaptive blocks")
    reaches = []
    for mb in cfg.macroblocks:
        scale = 1.0 if mb.kind == "fixed" else float(factor)
        reaches.append(2 * mb.half_span * scale)
    total = max(reaches) if cfg.structure == "parallel" else sum(reaches)
    return int(total) + 1 if float(total).is_integer() else total + 1


def empirical_receptive_field(m: Generator, t: int, length: int, factors=None, aux_seed: int = 0) -> int:
    """Span of noise samples whose gradient on the skip sum at ``t`` is nonzero.

    The output module is pointwise in time, so it cannot widen the span; the
    probe sits before its ReLUs, which would otherwise zero the gradient
    whenever sample ``t`` lands in a dead region.
    """
    if not 0 <= t < length:
        raise UsageError(f"probe index {t} outside [0, {length})")
    rng = np.random.default_rng(aux_seed)
    z = Tensor(rng.standard_normal((1, length)), requires_grad=True)
    aux = rng.standard_normal((m.cfg.aux_channels, length))
    total = _sum_tensors(m.skip_outputs(z, aux, factors))
    probe = Tensor(rng.standard_normal(m.cfg.skip_channels))
    ng.backward(ng.sum(ng.mul(total[:, t], probe)))
    m.params.zero_grad()
    nz = np.nonzero(z.grad[0])[0]
    if nz.size == 0:
        return 0
    return int(nz[-1] - nz[0] + 1)
