"""WAV, feature-file and checkpoint persistence. Everything is little-endian."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .features import FeatureTrack, round_half_away

# WAV -----------------------------------------------------------------------


def encode_pcm16(x) -> np.ndarray:
    """Clamp to [-1, 1] and quantise half away from zero to int16 codes."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite samples")
    codes = round_half_away(np.clip(x, -1.0, 1.0) * 32768.0)
    return np.clip(codes, -32768, 32767).astype("<i2")


def wav_bytes(x, sample_rate: int) -> bytes:
    data = encode_pcm16(x).tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(data),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        sample_rate,
        sample_rate * 2,
        2,
        16,
        b"data",
        len(data),
    )
    return header + data


def write_wav(path, x, sample_rate: int) -> None:
    Path(path).write_bytes(wav_bytes(x, sample_rate))


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return ``(samples / 32768, sample_rate)`` for a 16-bit mono PCM file."""
    raw = Path(path).read_bytes()
    return parse_wav(raw)


def parse_wav(raw: bytes) -> tuple[np.ndarray, int]:
    if len(raw) < 12:
        raise FormatError("file too short for a RIFF header", 0)
    riff, _, wave = struct.unpack_from("<4sI4s", raw, 0)
    if riff != b"RIFF":
        raise FormatError("missing RIFF tag", 0)
    if wave != b"WAVE":
        raise FormatError("missing WAVE tag", 8)
    pos = 12
    fmt = None
    while pos + 8 <= len(raw):
        tag, size = struct.unpack_from("<4sI", raw, pos)
        body = pos + 8
        if body + size > len(raw):
            raise FormatError(f"chunk {tag!r} claims {size} bytes past end of file", pos)
        if tag == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk shorter than 16 bytes", pos)
            fmt = struct.unpack_from("<HHIIHH", raw, body)
            audio_format, channels, _, _, _, bits = fmt
            if audio_format != 1:
                raise FormatError(f"unsupported encoding {audio_format} (PCM only)", body)
            if channels != 1:
                raise FormatError(f"unsupported channel count {channels} (mono only)", body + 2)
            if bits != 16:
                raise FormatError(f"unsupported bit depth {bits} (16 only)", body + 14)
        elif tag == b"data":
            if fmt is None:
                raise FormatError("data chunk before fmt chunk", pos)
            if size % 2:
                raise FormatError("odd data size for 16-bit samples", pos + 4)
            codes = np.frombuffer(raw, dtype="<i2", count=size // 2, offset=body)
            return codes.astype(np.float64) / 32768.0, int(fmt[2])
        pos = body + size + (size & 1)
    raise FormatError("no data chunk found", pos)


# feature files ----------------------------------------------------------------

FEATURE_MAGIC = b"QPVFEAT\x00"
FEATURE_VERSION = 1
_FEAT_HEADER = "<8sIIIII"


def feature_bytes(track: FeatureTrack) -> bytes:
    n, c = track.n_frames, track.aux.shape[1]
    head = struct.pack(_FEAT_HEADER, FEATURE_MAGIC, FEATURE_VERSION, int(track.sample_rate), track.hop, n, c)
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f4").tobytes() for a in (track.f0, track.uv, track.aux)
    )
    return head + body


def write_features(path, track: FeatureTrack) -> None:
    Path(path).write_bytes(feature_bytes(track))


def parse_features(raw: bytes) -> FeatureTrack:
    size = struct.calcsize(_FEAT_HEADER)
    if len(raw) < size:
        raise FormatError("feature file shorter than its header", 0)
    magic, version, sr, hop, n, c = struct.unpack_from(_FEAT_HEADER, raw, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError("bad feature-file magic", 0)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature-file version {version}", 8)
    need = size + 4 * (2 * n + n * c)
    if len(raw) != need:
        raise FormatError(f"expected {need} bytes, found {len(raw)}", min(len(raw), need))
    vals = np.frombuffer(raw, dtype="<f4", offset=size).astype(np.float64)
    f0, uv, aux = vals[:n], vals[n : 2 * n], vals[2 * n :].reshape(n, c)
    return FeatureTrack(f0, uv, aux, hop, sr)


def read_features(path) -> FeatureTrack:
    return parse_features(Path(path).read_bytes())


def features_text(track: FeatureTrack) -> str:
    """Human-readable dump: a header line, then one row per frame."""
    lines = [
        f"# sample_rate={track.sample_rate} hop={track.hop} frames={track.n_frames} "
        f"channels={track.aux.shape[1]}",
        "# f0 uv aux...",
    ]
    for f0, uv, aux in zip(track.f0, track.uv, track.aux):
        vals = [np.float32(f0), np.float32(uv), *np.asarray(aux, dtype=np.float32)]
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def write_features_text(path, track: FeatureTrack) -> None:
    Path(path).write_text(features_text(track))


# checkpoints ------------------------------------------------------------------

CHECKPOINT_MAGIC = b"QPVCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    generator: object
    discriminator: object
    state: object
    experiment: object
    header: dict


def _tensor_table(gen, disc, state) -> list[tuple[str, np.ndarray]]:
    items = [(f"G/{k}", t.data) for k, t in gen.params]
    if disc is not None:
        items += [(f"D/{k}", t.data) for k, t in disc.params]
    if state is not None:
        for tag, opt in (("optG", state.opt_g), ("optD", state.opt_d)):
            for k in sorted(opt.m):
                items.append((f"{tag}.m/{k}", opt.m[k]))
                items.append((f"{tag}.v/{k}", opt.v[k]))
    return items


def _manifest(gen, disc) -> str:
    lines = [f"generator_params={gen.n_params}"]
    if disc is not None:
        lines.append(f"discriminator_params={disc.n_params}")
    return "\n".join(lines)


def checkpoint_bytes(gen, disc=None, state=None, experiment=None) -> bytes:
    from .config import to_ini

    table = _tensor_table(gen, disc, state)
    entries, blobs, offset = [], [], 0
    for name, arr in table:
        dt = arr.dtype.newbyteorder("<")
        blob = np.ascontiguousarray(arr, dtype=dt).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "config": to_ini(experiment) if experiment is not None else None,
        "generator": {"config": gen.cfg.to_dict(), "seed": gen.seed, "dtype": gen.params.dtype.str},
        "discriminator": None
        if disc is None
        else {"config": vars(disc.cfg).copy(), "seed": disc.seed, "dtype": disc.params.dtype.str},
        "state": None
        if state is None
        else {
            "iteration": state.iteration,
            "opt_g": {"step": state.opt_g.step, "skipped": state.opt_g.skipped},
            "opt_d": {"step": state.opt_d.step, "skipped": state.opt_d.skipped},
            "rng_state": state.rng_state,
            "avg_loss_sp": state.avg_loss_sp,
            "history": state.history,
        },
        "tensors": entries,
        "manifest": _manifest(gen, disc),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def save_checkpoint(path, gen, disc=None, state=None, experiment=None) -> None:
    Path(path).write_bytes(checkpoint_bytes(gen, disc, state, experiment))


def parse_checkpoint(raw: bytes) -> Checkpoint:
    from .config import from_ini
    from .model import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
    from .train import AdamState, TrainState

    if len(raw) < 20 or raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})", 8)
    if 20 + hlen > len(raw):
        raise FormatError("checkpoint header runs past end of file", 12)
    try:
        header = json.loads(raw[20 : 20 + hlen])
    except ValueError as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", 20) from exc
    base = 20 + hlen
    arrays = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(raw):
            raise FormatError(f"tensor {e['name']} truncated", start)
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)), offset=start)
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))

    g = header["generator"]
    gen = Generator(GeneratorConfig.from_dict(g["config"]), seed=g["seed"], dtype=np.dtype(g["dtype"]))
    gen.params.load({k[2:]: v for k, v in arrays.items() if k.startswith("G/")})
    disc = None
    if header["discriminator"] is not None:
        d = header["discriminator"]
        disc = Discriminator(DiscriminatorConfig(**d["config"]), seed=d["seed"], dtype=np.dtype(d["dtype"]))
        disc.params.load({k[2:]: v for k, v in arrays.items() if k.startswith("D/")})
    state = None
    if header["state"] is not None:
        s = header["state"]
        opts = {}
        for tag, key in (("optG", "opt_g"), ("optD", "opt_d")):
            m = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith(f"{tag}.m/")}
            v = {k.split("/", 1)[1]: a for k, a in arrays.items() if k.startswith(f"{tag}.v/")}
            opts[key] = AdamState(s[key]["step"], m, v, s[key]["skipped"])
        state = TrainState(s["iteration"], opts["opt_g"], opts["opt_d"], s["rng_state"], s["avg_loss_sp"], s["history"])
    experiment = from_ini(header["config"]) if header["config"] else None
    return Checkpoint(gen, disc, state, experiment, header)


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())
