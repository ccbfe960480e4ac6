import pytest

from qpv.config import Experiment, from_ini, load_config, parse_layout, tiny_experiment, to_ini
from qpv.errors import ConfigurationError
from qpv.model import MacroblockSpec


def test_ini_round_trip():
    exp = tiny_experiment("stacked-fa")
    assert from_ini(to_ini(exp)) == exp


def test_defaults_round_trip():
    assert from_ini(to_ini(Experiment())) == Experiment()


def test_builtin_names():
    assert load_config("pwg30").generator.n_blocks == 30
    assert load_config("tiny-pwg").generator.structure == "single"


def test_missing_file():
    with pytest.raises(ConfigurationError):
        load_config("/no/such/file.ini")


def test_file_then_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(to_ini(tiny_experiment()))
    exp = load_config(p, ["train.total_iters=7", "generator.channels=8", "loss.lambda_adv=2.5"])
    assert exp.train.total_iters == 7
    assert exp.generator.residual_channels == exp.generator.skip_channels == 8
    assert exp.train.lambda_adv == exp.loss.lambda_adv == 2.5


def test_stft_lists_change_together():
    exp = load_config(None, ["loss.fft_sizes=64", "loss.frame_shifts=16", "loss.frame_lengths=48"])
    assert [(s.fft_size, s.frame_shift, s.frame_length) for s in exp.loss.stft_groups] == [(64, 16, 48)]


@pytest.mark.parametrize("item", ["train.total_iters", "nosection.x=1", "train.unknown=3", "train.total_iters=abc"])
def test_bad_overrides(item):
    with pytest.raises((ConfigurationError, ValueError)):
        load_config(None, [item])


def test_layout_parsing():
    assert parse_layout("adaptive:4x1, fixed:3x2") == (MacroblockSpec("adaptive", 4, 1), MacroblockSpec("fixed", 3, 2))
    with pytest.raises(ConfigurationError):
        parse_layout("adaptive4")


def test_boolean_values():
    assert load_config(None, ["generator.weight_norm=no"]).generator.weight_norm is False
    with pytest.raises(ConfigurationError):
        load_config(None, ["generator.weight_norm=maybe"])
