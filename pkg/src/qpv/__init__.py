"""Quasi-periodic neural waveform vocoders on a small numpy autodiff engine."""

from .config import Experiment, load_config, tiny_experiment
from .errors import (
    ConfigurationError,
    EmptyInputError,
    FormatError,
    QPVError,
    UndefinedResultError,
    UsageError,
)
from .features import CorpusRecipe, FeatureTrack, Utterance, synth_corpus
from .model import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, preset, receptive_field_length
from .train import TrainConfig, run_training

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CorpusRecipe",
    "Discriminator",
    "DiscriminatorConfig",
    "EmptyInputError",
    "Experiment",
    "FeatureTrack",
    "FormatError",
    "Generator",
    "GeneratorConfig",
    "QPVError",
    "TrainConfig",
    "UndefinedResultError",
    "UsageError",
    "Utterance",
    "load_config",
    "preset",
    "receptive_field_length",
    "run_training",
    "synth_corpus",
    "tiny_experiment",
]
