import csv
import subprocess
import sys

import pytest

from conftest import files_equal
from qpv.cli import main, read_corpus
from qpv.config import load_config
from qpv.io import read_wav

MICRO = [
    "corpus.n_utterances=2",
    "corpus.duration_s=0.2",
    "generator.layout=adaptive:2x1,fixed:2x1",
    "generator.channels=4",
    "discriminator.channels=4",
    "discriminator.layers=3",
    "loss.fft_sizes=128,64",
    "loss.frame_shifts=32,16",
    "loss.frame_lengths=96,48",
    "train.total_iters=4",
    "train.warmup_iters=2",
    "train.batch_len_samples=440",
    "train.checkpoint_every=2",
]


def sets(items=MICRO):
    out = []
    for s in items:
        out += ["--set", s]
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-corpus", "--config", "tiny", *sets(), "--out", str(root / "corpus"), "--seed", "0"]) == 0
    assert main(["train", "--config", "tiny", *sets(), "--corpus", str(root / "corpus"), "--out", str(root / "run")]) == 0
    return root


def test_no_arguments_prints_usage():
    res = subprocess.run([sys.executable, "-m", "qpv.cli"], capture_output=True, text=True)
    assert res.returncode == 2 and "usage: qpv" in res.stderr


def test_corpus_layout(pipeline):
    c = pipeline / "corpus"
    assert (c / "corpus.txt").read_text().split() == ["utt000", "utt001"]
    for name in ("utt000", "utt001"):
        for ext in (".wav", ".feat", ".feat.txt"):
            assert (c / f"{name}{ext}").exists()
    assert (c / "seed.txt").read_text().startswith("seed=0")
    assert load_config(c / "config.ini").corpus.n_utterances == 2
    corpus = read_corpus(c)
    assert corpus[0].track.n_frames == 40 and corpus[0].audio.size == 4400


def test_train_outputs(pipeline):
    run = pipeline / "run"
    assert {p.name for p in run.glob("*.qpv")} == {"checkpoint_0000002.qpv", "checkpoint_0000004.qpv"}
    with open(run / "loss_log.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 4
    assert (run / "config.ini").exists() and (run / "seed.txt").exists()


def test_train_resume_matches(pipeline, tmp_path):
    args = ["train", "--config", "tiny", *sets(), "--corpus", str(pipeline / "corpus"), "--out", str(tmp_path)]
    assert main(args + ["--stop-at", "2"]) == 0
    assert main(args + ["--resume", str(tmp_path / "checkpoint_0000002.qpv")]) == 0
    assert files_equal(tmp_path / "checkpoint_0000004.qpv", pipeline / "run" / "checkpoint_0000004.qpv")


def test_synth(pipeline, tmp_path):
    ck = pipeline / "run" / "checkpoint_0000004.qpv"
    assert main(["synth", "--checkpoint", str(ck), "--features", str(pipeline / "corpus"), "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.glob("*.wav"))
    assert names == sorted(f"utt00{i}_x{r}.wav" for i in (0, 1) for r in ("0p5", "1", "2"))
    x, sr = read_wav(tmp_path / "utt000_x1.wav")
    assert sr == 22050 and x.size == 4400
    assert (tmp_path / "config.ini").exists()


def test_eval(pipeline, tmp_path):
    ck = pipeline / "run" / "checkpoint_0000004.qpv"
    assert main(["eval", "--checkpoint", str(ck), "--corpus", str(pipeline / "corpus"), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "eval.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["f0_ratio"]) for r in rows] == [0.5, 1.0, 2.0]
    assert all(r["scope"] == "pooled" for r in rows)


def test_dissect(pipeline, tmp_path):
    ck = pipeline / "run" / "checkpoint_0000004.qpv"
    feat = pipeline / "corpus" / "utt000.feat"
    assert main(["dissect", "--checkpoint", str(ck), "--features", str(feat), "--ranges", "0-1,2-3", "--out", str(tmp_path)]) == 0
    assert "ranges=2" in (tmp_path / "manifest.txt").read_text()
    assert (tmp_path / "range00_blocks_0-1.wav").exists()


def test_aux_mismatch_message(pipeline, tmp_path, capsys):
    bad = sets(MICRO + ["generator.aux_channels=7"])
    assert main(["train", "--config", "tiny", *bad, "--corpus", str(pipeline / "corpus"), "--out", str(tmp_path)]) == 1
    assert "generator.aux_channels=10" in capsys.readouterr().err


def test_rf_closed_form(capsys):
    assert main(["rf", "--config", "pwg20", "--no-empirical"]) == 0
    assert capsys.readouterr().out.strip() == "4093"


def test_rf_adaptive(tmp_path, capsys):
    assert main(["rf", "--config", "tiny", "--factor", "3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.split()
    # 4 adaptive blocks at E=3 (2*3*15) plus 4 fixed blocks (2*15) plus one
    assert out == ["121", "empirical=121"]
    assert (tmp_path / "rf.txt").read_text().splitlines() == ["closed_form=121", "empirical=121"]


def test_rf_needs_factor(capsys):
    assert main(["rf", "--config", "qppwg20"]) == 1
    assert "--factor" in capsys.readouterr().err


def test_bad_override(capsys):
    assert main(["gen-corpus", "--set", "nosuch.key=1", "--out", "unused"]) == 1
    assert "nosuch" in capsys.readouterr().err


def test_bench(tmp_path):
    args = ["bench", "--models", "pwg16", "--channels", "4", "--seconds", "0.05", "--out", str(tmp_path)]
    assert main(args) == 0
    with open(tmp_path / "bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["model"] == "pwg16" and float(rows[0]["rtf"]) > 0
    assert "wall_seconds_2x" in rows[0]
