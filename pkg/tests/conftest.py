from dataclasses import replace

import numpy as np
import pytest

from qpv.config import Experiment
from qpv.features import CorpusRecipe, synth_corpus
from qpv.loss import LossConfig
from qpv.model import DiscriminatorConfig, GeneratorConfig, MacroblockSpec
from qpv.signal import STFTSetting
from qpv.train import TrainConfig

SMALL_GROUPS = (STFTSetting(128, 32, 96), STFTSetting(256, 64, 192), STFTSetting(64, 16, 48))


def micro_experiment(structure="stacked-af", **train_kw) -> Experiment:
    """A few-second training setup for loop-level tests."""
    if structure == "single":
        layout = (MacroblockSpec("fixed", 3),)
    else:
        layout = (MacroblockSpec("adaptive", 2), MacroblockSpec("fixed", 2))
    kw = dict(total_iters=6, warmup_iters=3, lr_g=1e-3, lr_d=5e-4, batch_size=2,
              batch_len_samples=440, checkpoint_every=2)
    kw.update(train_kw)
    return Experiment(
        corpus=CorpusRecipe(n_utterances=3, duration_s=0.2),
        generator=GeneratorConfig(structure, layout, 4, 4, 10, 4.0),
        discriminator=DiscriminatorConfig(layers=3, channels=4),
        loss=LossConfig(SMALL_GROUPS),
        train=TrainConfig(**kw),
    )


@pytest.fixture(scope="session")
def micro_corpus():
    return synth_corpus(CorpusRecipe(n_utterances=3, duration_s=0.2), seed=0)


def with_train(exp: Experiment, **kw) -> Experiment:
    return replace(exp, train=replace(exp.train, **kw))


def files_equal(a, b) -> bool:
    return open(a, "rb").read() == open(b, "rb").read()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
