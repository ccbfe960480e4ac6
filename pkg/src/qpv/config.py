"""Experiment configuration: one INI file covering corpus, models, loss and training.

Overrides use ``section.key=value``; macroblock layouts are written as
``adaptive:4x1,fixed:4x1`` and STFT groups as comma-separated lists.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

from .errors import ConfigurationError
from .features import CorpusRecipe
from .loss import LossConfig
from .model import DiscriminatorConfig, GeneratorConfig, MacroblockSpec, preset
from .signal import STFTSetting
from .train import TrainConfig

SECTIONS = ("corpus", "generator", "discriminator", "loss", "train")


@dataclass(frozen=True)
class Experiment:
    corpus: CorpusRecipe = field(default_factory=CorpusRecipe)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def format_layout(macroblocks: Iterable[MacroblockSpec]) -> str:
    return ",".join(f"{m.kind}:{m.blocks_per_cycle}x{m.cycles}" for m in macroblocks)


def parse_layout(text: str) -> tuple[MacroblockSpec, ...]:
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            kind, shape = item.split(":")
            n, c = shape.lower().split("x")
            out.append(MacroblockSpec(kind.strip(), int(n), int(c)))
        except ValueError as exc:
            raise ConfigurationError(f"bad macroblock entry {item!r}; expected kind:NxC") from exc
    return tuple(out)


def _coerce(value: str, like):
    if isinstance(like, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value.strip()


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _section_items(exp: Experiment, name: str) -> dict[str, str]:
    if name == "generator":
        g = exp.generator
        return {
            "structure": g.structure,
            "layout": format_layout(g.macroblocks),
            "residual_channels": str(g.residual_channels),
            "skip_channels": str(g.skip_channels),
            "aux_channels": str(g.aux_channels),
            "dense_factor": repr(g.dense_factor),
            "sample_rate": str(g.sample_rate),
            "weight_norm": str(g.weight_norm).lower(),
        }
    if name == "loss":
        groups = exp.loss.stft_groups
        return {
            "fft_sizes": ",".join(str(s.fft_size) for s in groups),
            "frame_shifts": ",".join(str(s.frame_shift) for s in groups),
            "frame_lengths": ",".join(str(s.frame_length) for s in groups),
            "window": groups[0].window,
            "lambda_adv": repr(exp.loss.lambda_adv),
        }
    obj = getattr(exp, name)
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = str(v).lower() if isinstance(v, bool) else (repr(v) if isinstance(v, float) else str(v))
    return out


def to_ini(exp: Experiment) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for name in SECTIONS:
        cp[name] = _section_items(exp, name)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _apply(exp: Experiment, section: str, values: dict[str, str]) -> Experiment:
    if section not in SECTIONS:
        raise ConfigurationError(f"unknown config section {section!r}; expected one of {SECTIONS}")
    if section == "generator":
        g = exp.generator
        kw = {}
        if "preset" in values:
            g = preset(values["preset"], channels=g.residual_channels, aux_channels=g.aux_channels)
        for k, v in values.items():
            if k == "preset":
                continue
            if k == "layout":
                kw["macroblocks"] = parse_layout(v)
            elif k == "channels":
                kw["residual_channels"] = kw["skip_channels"] = int(v)
            elif k in {f.name for f in fields(GeneratorConfig)}:
                kw[k] = _coerce(v, getattr(g, k))
            else:
                raise ConfigurationError(f"unknown key generator.{k}")
        return replace(exp, generator=replace(g, **kw))
    if section == "loss":
        cur = exp.loss
        groups = cur.stft_groups
        ffts = _ints(values["fft_sizes"]) if "fft_sizes" in values else [s.fft_size for s in groups]
        shifts = _ints(values["frame_shifts"]) if "frame_shifts" in values else [s.frame_shift for s in groups]
        lens = _ints(values["frame_lengths"]) if "frame_lengths" in values else [s.frame_length for s in groups]
        window = values.get("window", groups[0].window).strip()
        if not len(ffts) == len(shifts) == len(lens):
            raise ConfigurationError("fft_sizes, frame_shifts and frame_lengths must have equal length")
        unknown = set(values) - {"fft_sizes", "frame_shifts", "frame_lengths", "window", "lambda_adv"}
        if unknown:
            raise ConfigurationError(f"unknown loss keys {sorted(unknown)}")
        lam = float(values.get("lambda_adv", cur.lambda_adv))
        new = LossConfig(tuple(STFTSetting(a, b, c, window) for a, b, c in zip(ffts, shifts, lens)), lam)
        return replace(exp, loss=new)
    obj = getattr(exp, section)
    names = {f.name for f in fields(obj)}
    kw = {}
    for k, v in values.items():
        if k not in names:
            raise ConfigurationError(f"unknown key {section}.{k}")
        kw[k] = _coerce(v, getattr(obj, k))
    return replace(exp, **{section: replace(obj, **kw)})


def from_ini(text: str, base: Experiment | None = None) -> Experiment:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    exp = base if base is not None else Experiment()
    for section in cp.sections():
        exp = _apply(exp, section, dict(cp[section]))
    return _sync(exp)


def _sync(exp: Experiment) -> Experiment:
    # the train section owns lambda_adv; keep the loss echo consistent
    if exp.loss.lambda_adv != exp.train.lambda_adv:
        exp = replace(exp, loss=replace(exp.loss, lambda_adv=exp.train.lambda_adv))
    return exp


def load_config(path: str | Path | None, overrides: Iterable[str] = (), base: Experiment | None = None) -> Experiment:
    """Read ``path`` (if any) then apply ``section.key=value`` overrides in order."""
    exp = base if base is not None else Experiment()
    if path is not None:
        p = Path(path)
        if not p.exists():
            key = p.name.lower()
            if key in BUILTIN:
                exp = BUILTIN[key]()
            else:
                raise ConfigurationError(f"config file {path} not found")
        else:
            exp = from_ini(p.read_text(), exp)
    # group by section so multi-key edits (e.g. all three STFT lists) apply together
    grouped: dict[str, dict[str, str]] = {}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        if section == "loss" and name == "lambda_adv":
            section = "train"
        grouped.setdefault(section, {})[name] = value
    for section, values in grouped.items():
        exp = _apply(exp, section, values)
    return _sync(exp)


def tiny_experiment(structure: str = "stacked-af", channels: int = 16) -> Experiment:
    """Desk-scale setup: 4 adaptive + 4 fixed blocks (or 8 fixed for PWG), 10 aux channels."""
    if structure == "single":
        layout = (MacroblockSpec("fixed", 8, 1),)
    elif structure == "stacked-fa":
        layout = (MacroblockSpec("fixed", 4, 1), MacroblockSpec("adaptive", 4, 1))
    else:
        layout = (MacroblockSpec("adaptive", 4, 1), MacroblockSpec("fixed", 4, 1))
    gen = GeneratorConfig(structure, layout, channels, channels, 10, 4.0)
    return Experiment(generator=gen)


BUILTIN = {
    "pwg30": lambda: Experiment(generator=preset("pwg30")),
    "pwg20": lambda: Experiment(generator=preset("pwg20")),
    "pwg16": lambda: Experiment(generator=preset("pwg16")),
    "qppwg20": lambda: Experiment(generator=preset("qppwg20")),
    "qppwgaf20": lambda: Experiment(generator=preset("qppwgaf20")),
    "qppwgfa20": lambda: Experiment(generator=preset("qppwgfa20")),
    "qppwgaf16": lambda: Experiment(generator=preset("qppwgaf16")),
    "qppwgfa16": lambda: Experiment(generator=preset("qppwgfa16")),
    "qppwgpar20": lambda: Experiment(generator=preset("qppwgpar20")),
    "tiny": tiny_experiment,
    "tiny-qppwg": tiny_experiment,
    "tiny-pwg": lambda: tiny_experiment("single"),
}
