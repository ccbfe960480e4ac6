"""Command-line entry point: ``qpv <command> [options]``.

Commands: gen-corpus, train, synth, eval, rf, dissect, bench. Every command
that writes files echoes its effective configuration (``config.ini``) and
seed (``seed.txt``) into its output directory.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Experiment, load_config, to_ini
from .errors import QPVError, UndefinedResultError, UsageError
from .features import Utterance, synth_corpus

log = logging.getLogger("qpv")

DEFAULT_RATIOS = (0.5, 1.0, 2.0)
BENCH_MODELS = ("pwg20", "pwg30", "qppwg20")


# helpers ---------------------------------------------------------------------


def _experiment(args) -> Experiment:
    exp = load_config(args.config, args.set or ())
    if args.seed is not None:
        exp = replace(exp, train=replace(exp.train, seed=args.seed))
    return exp


def _seed(args, exp: Experiment) -> int:
    return exp.train.seed if args.seed is None else args.seed


def _echo(out: Path, exp: Experiment | None, seed: int, **extra) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if exp is not None:
        (out / "config.ini").write_text(to_ini(exp))
    lines = [f"seed={seed}"] + [f"{k}={v}" for k, v in extra.items()]
    (out / "seed.txt").write_text("\n".join(lines) + "\n")


def _threads(args) -> int | None:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("QPV_THREADS", "").strip()
    return int(env) if env else None


def _ratios(text: str) -> list[float]:
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals or any(v <= 0 for v in vals):
        raise UsageError(f"ratios must be positive numbers, got {text!r}")
    return vals


def _ratio_tag(r: float) -> str:
    return f"{r:g}".replace(".", "p")


def write_corpus(corpus: Sequence[Utterance], out: Path) -> list[Path]:
    """Write ``<name>.wav``, ``<name>.feat`` and a text dump per utterance, plus ``corpus.txt``."""
    from .io import write_features, write_features_text, write_wav

    out.mkdir(parents=True, exist_ok=True)
    written = []
    for u in corpus:
        write_wav(out / f"{u.name}.wav", u.audio, u.track.sample_rate)
        write_features(out / f"{u.name}.feat", u.track)
        write_features_text(out / f"{u.name}.feat.txt", u.track)
        written += [out / f"{u.name}.wav", out / f"{u.name}.feat", out / f"{u.name}.feat.txt"]
    (out / "corpus.txt").write_text("".join(f"{u.name}\n" for u in corpus))
    written.append(out / "corpus.txt")
    return written


def read_corpus(path: Path, need_audio: bool = True) -> list[Utterance]:
    """Inverse of :func:`write_corpus`; utterance order follows ``corpus.txt``."""
    from .io import read_features, read_wav

    path = Path(path)
    listing = path / "corpus.txt"
    if listing.exists():
        names = [n.strip() for n in listing.read_text().splitlines() if n.strip()]
    else:
        names = sorted(p.stem for p in path.glob("*.feat"))
    if not names:
        raise UsageError(f"no utterances found in {path}")
    out = []
    for name in names:
        track = read_features(path / f"{name}.feat")
        if need_audio:
            audio, sr = read_wav(path / f"{name}.wav")
            if sr != track.sample_rate:
                raise UsageError(f"{name}: wav rate {sr} differs from feature rate {track.sample_rate}")
        else:
            audio = np.zeros(0)
        out.append(Utterance(audio, track, name))
    return out


def _feature_inputs(paths: Sequence[str]) -> list[tuple[str, object]]:
    from .io import read_features

    items = []
    for p in map(Path, paths):
        if p.is_dir():
            items += [(u.name, u.track) for u in read_corpus(p, need_audio=False)]
        else:
            items.append((p.stem, read_features(p)))
    return items


def _load_generator(path):
    from .io import load_checkpoint

    return load_checkpoint(path)


# commands --------------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    exp = _experiment(args)
    seed = _seed(args, exp)
    out = Path(args.out)
    corpus = synth_corpus(exp.corpus, seed=seed)
    write_corpus(corpus, out)
    _echo(out, exp, seed)
    print(f"wrote {len(corpus)} utterances to {out}")
    return 0


def cmd_train(args) -> int:
    from .train import run_training

    exp = _experiment(args)
    seed = _seed(args, exp)
    out = Path(args.out)
    if args.corpus:
        corpus = read_corpus(Path(args.corpus))
    else:
        corpus = synth_corpus(exp.corpus, seed=seed)
    width = 2 + corpus[0].track.aux.shape[1]
    if width != exp.generator.aux_channels:
        raise UsageError(
            f"generator.aux_channels={exp.generator.aux_channels} but the corpus provides {width} "
            f"conditioning channels; pass --set generator.aux_channels={width}"
        )
    _echo(out, exp, seed)
    res = run_training(exp, corpus, out_dir=out, resume=args.resume, stop_at=args.stop_at)
    print(f"trained to iteration {res.state.iteration}; checkpoint {res.checkpoint}")
    return 0


def cmd_synth(args) -> int:
    from .io import write_wav
    from .syntheval import synthesize

    ck = _load_generator(args.checkpoint)
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    _echo(out, ck.experiment, seed, checkpoint=args.checkpoint, ratios=args.ratios)
    ratios = _ratios(args.ratios)
    n = 0
    for name, track in _feature_inputs(args.features):
        for r in ratios:
            wave = synthesize(ck.generator, track, r, seed)
            write_wav(out / f"{name}_x{_ratio_tag(r)}.wav", wave, track.sample_rate)
            n += 1
    print(f"wrote {n} waveforms to {out}")
    return 0


def cmd_eval(args) -> int:
    from .syntheval import evaluate, write_report_csv

    ck = _load_generator(args.checkpoint)
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    _echo(out, ck.experiment, seed, checkpoint=args.checkpoint, ratios=args.ratios)
    items = _feature_inputs([args.corpus])
    names = [n for n, _ in items]
    tracks = [t for _, t in items]
    pooled, per = [], []
    for r in _ratios(args.ratios):
        try:
            rep = evaluate(ck.generator, tracks, r, seed, names)
            pooled.append(rep.row(f0_ratio=r, scope="pooled"))
            per += rep.per_utterance
        except UndefinedResultError as exc:
            log.warning("ratio %g: %s", r, exc)
            pooled.append({"log_f0_rmse": float("nan"), "n_joint_voiced": 0, "f0_ratio": r, "scope": "pooled"})
    write_report_csv(out / "eval.csv", pooled)
    if per:
        write_report_csv(out / "eval_per_utterance.csv", per)
    for row in pooled:
        print(f"ratio {row['f0_ratio']:g}: log-F0 RMSE {row['log_f0_rmse']:.4f} over {row['n_joint_voiced']} frames")
    return 0


def cmd_rf(args) -> int:
    from .model import Generator, empirical_receptive_field, receptive_field_length

    exp = _experiment(args)
    cfg = exp.generator
    if cfg.has_adaptive and args.factor is None:
        raise UsageError("this config has adaptive blocks; pass --factor E")
    closed = receptive_field_length(cfg, args.factor)
    print(closed)
    lines = [f"closed_form={closed}"]
    if not args.no_empirical:
        if args.factor is not None and float(args.factor) != int(args.factor) and cfg.has_adaptive:
            raise UsageError("empirical measurement needs an integer --factor")
        n = int(closed) + 64
        length = 2 * n
        factors = np.full(length, float(args.factor)) if cfg.has_adaptive else None
        gen = Generator(cfg, seed=_seed(args, exp))
        emp = empirical_receptive_field(gen, length // 2, length, factors)
        print(f"empirical={emp}")
        lines.append(f"empirical={emp}")
    if args.out:
        out = Path(args.out)
        _echo(out, exp, _seed(args, exp))
        (out / "rf.txt").write_text("\n".join(lines) + "\n")
    return 0


def cmd_dissect(args) -> int:
    from .syntheval import dump_intermediate, parse_range

    ck = _load_generator(args.checkpoint)
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    _echo(out, ck.experiment, seed, checkpoint=args.checkpoint)
    items = _feature_inputs([args.features])
    ranges = [parse_range(r) for r in args.ranges.split(",")] if args.ranges else None
    for name, track in items[: 1 if args.first_only else len(items)]:
        target = out / name if len(items) > 1 and not args.first_only else out
        m = dump_intermediate(ck.generator, track, ranges, target, args.ratio, seed)
        for i in range(m["ranges"]):
            print(f"{name} {m[f'range{i:02d}.name']}: harmonicity {m[f'range{i:02d}.harmonicity']:.3f}")
    return 0


def cmd_bench(args) -> int:
    from .model import Generator, preset
    from .syntheval import rtf_benchmark

    threads = _threads(args)
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    _echo(out, None, seed, threads=threads or 0, seconds=args.seconds, repeats=args.repeats)
    rows = []
    for name in args.models.split(","):
        gen = Generator(preset(name.strip(), channels=args.channels), seed=seed)
        base = rtf_benchmark(gen, args.seconds, args.repeats, threads, name.strip())
        double = rtf_benchmark(gen, 2 * args.seconds, args.repeats, threads, name.strip())
        row = vars(base).copy()
        row["wall_seconds_2x"] = double.wall_seconds
        row["scaling_2x"] = double.wall_seconds / base.wall_seconds
        rows.append(row)
        print(f"{name}: RTF {base.rtf:.3f} ({base.n_params} params, {row['scaling_2x']:.2f}x wall at 2x length)")
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return 0


# parser ------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, out_default: str | None = "qpv_out") -> None:
    p.add_argument("--config", help="INI file or built-in preset name (e.g. tiny, pwg30, qppwg20)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override; repeatable")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--seed", type=int, help="random seed (overrides train.seed)")
    p.add_argument("--threads", type=int, help="numeric thread limit (fallback: $QPV_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpv", description="Quasi-periodic waveform vocoder toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-corpus", help="write a synthetic harmonic corpus")
    _common(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a generator/discriminator pair")
    _common(p)
    p.add_argument("--corpus", help="corpus directory from gen-corpus (default: synthesise one)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="stop early at this iteration")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="synthesise waveforms from feature files")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", nargs="+", required=True, help=".feat files or corpus directories")
    p.add_argument("--ratios", default=",".join(f"{r:g}" for r in DEFAULT_RATIOS), help="F0 scaling ratios")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="log-F0 RMSE of re-synthesised audio")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="corpus directory with .feat files")
    p.add_argument("--ratios", default=",".join(f"{r:g}" for r in DEFAULT_RATIOS))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rf", help="print closed-form and empirical receptive fields")
    _common(p, out_default=None)
    p.add_argument("--factor", type=float, help="constant dilated factor E for adaptive blocks")
    p.add_argument("--no-empirical", action="store_true", help="skip the gradient-sparsity measurement")
    p.set_defaults(func=cmd_rf)

    p = sub.add_parser("dissect", help="dump cumulative skip outputs per block range")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True, help=".feat file or corpus directory")
    p.add_argument("--ranges", help="comma-separated block ranges such as 0-3,4-7 (default: full/adaptive/fixed)")
    p.add_argument("--ratio", type=float, default=1.0, help="F0 scaling ratio")
    p.add_argument("--first-only", action="store_true", help="only dissect the first utterance")
    p.set_defaults(func=cmd_dissect)

    p = sub.add_parser("bench", help="real-time-factor benchmark")
    _common(p)
    p.add_argument("--models", default=",".join(BENCH_MODELS))
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--seconds", type=float, default=1.0, help="audio length per forward pass")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (QPVError, OSError, ValueError) as exc:
        print(f"qpv {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
