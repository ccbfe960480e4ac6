"""Adversarial (least-squares) and multi-resolution STFT objectives."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import numgrad as ng
from .errors import ConfigurationError
from .numgrad import Tensor
from .signal import DEFAULT_STFT_GROUPS, MAG_FLOOR, STFTSetting, stft_magnitude

LAMBDA_ADV = 4.0


@dataclass(frozen=True)
class LossConfig:
    stft_groups: tuple[STFTSetting, ...] = field(default=DEFAULT_STFT_GROUPS)
    lambda_adv: float = LAMBDA_ADV

    def __post_init__(self):
        object.__setattr__(self, "stft_groups", tuple(self.stft_groups))
        if not self.stft_groups:
            raise ConfigurationError("at least one STFT setting group is required")
        if self.lambda_adv < 0:
            raise ConfigurationError("lambda_adv must be non-negative")

    @property
    def max_frame_length(self) -> int:
        return max(s.frame_length for s in self.stft_groups)


def adv_loss_g(fake_scores) -> Tensor:
    """Mean of ``(1 - D(G(z)))^2``."""
    s = ng.as_tensor(fake_scores)
    return ng.mean(ng.square(1.0 - s))


def disc_loss(real_scores, fake_scores) -> Tensor:
    """Mean of ``(1 - D(x))^2`` plus mean of ``D(G(z))^2``."""
    real, fake = ng.as_tensor(real_scores), ng.as_tensor(fake_scores)
    return ng.mean(ng.square(1.0 - real)) + ng.mean(ng.square(fake))


def _sc_from_mags(ref: Tensor, est: Tensor) -> Tensor:
    num = ng.sqrt(ng.sum(ng.square(ref - est)))
    den = ng.clamp_min(ng.sqrt(ng.sum(ng.square(ref))), MAG_FLOOR)
    return ng.div(num, den)


def _mag_from_mags(ref: Tensor, est: Tensor) -> Tensor:
    diff = ng.log(ng.clamp_min(ref, MAG_FLOOR)) - ng.log(ng.clamp_min(est, MAG_FLOOR))
    return ng.mean(ng.absolute(diff))


def spectral_convergence(x, xh, s: STFTSetting) -> Tensor:
    """``|| |X| - |X^| ||_F / || |X| ||_F`` with the reference ``x`` in the denominator."""
    return _sc_from_mags(stft_magnitude(x, s), stft_magnitude(xh, s))


def log_stft_magnitude_loss(x, xh, s: STFTSetting) -> Tensor:
    """Mean absolute difference of log magnitudes (floored at 1e-7)."""
    return _mag_from_mags(stft_magnitude(x, s), stft_magnitude(xh, s))


def multi_res_stft_loss(x, xh, cfg: LossConfig = LossConfig()) -> Tensor:
    """Average over setting groups of spectral convergence plus log-magnitude loss."""
    total = None
    for s in cfg.stft_groups:
        ref, est = stft_magnitude(x, s), stft_magnitude(xh, s)
        term = _sc_from_mags(ref, est) + _mag_from_mags(ref, est)
        total = term if total is None else total + term
    return total * (1.0 / len(cfg.stft_groups))


def generator_loss(x, xh, fake_scores, cfg: LossConfig = LossConfig()) -> Tensor:
    """``L_sp + lambda_adv * L_adv``; with ``lambda_adv == 0`` the scores are ignored."""
    sp = multi_res_stft_loss(x, xh, cfg)
    if cfg.lambda_adv == 0 or fake_scores is None:
        return sp
    return sp + adv_loss_g(fake_scores) * cfg.lambda_adv
