"""Link budget forward model: free-space loss, log-distance path loss,
shadowing/noise sampling, and decode decisions.

The simulated observation handed to the estimator is, by construction,
``template_vector(u) + offset + noise``: the offset collects transmit
power, transmit gain, bulk path loss, canopy loss, and the per-packet
shadowing draw, so the estimator must recover ``u`` independent of it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .antenna import AntennaLayout, sample_template
from .errors import ConfigError, DomainError
from .geometry import Direction
from .lens import SPEED_OF_LIGHT, BeamTemplate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelParams:
    frequency_hz: float = 5.745e9
    path_loss_exponent: float = 3.2
    reference_distance_m: float = 1.0
    shadowing_sigma_db: float = 4.0
    per_antenna_sigma_db: float = 2.0
    canopy_loss_db: float = 0.0
    noise_floor_dbm: float = -100.0
    decode_sensitivity_dbm: float = -94.0

    def __post_init__(self) -> None:
        if self.frequency_hz <= 0:
            raise ConfigError("frequency must be > 0")
        if not (1.6 <= self.path_loss_exponent <= 6.0):
            raise ConfigError(
                f"path loss exponent {self.path_loss_exponent} outside [1.6, 6]"
            )
        if self.reference_distance_m <= 0:
            raise ConfigError("reference distance must be > 0")
        if self.shadowing_sigma_db < 0 or self.per_antenna_sigma_db < 0:
            raise ConfigError("noise sigmas must be >= 0")
        if self.canopy_loss_db < 0:
            raise ConfigError("canopy loss must be >= 0")
        if self.decode_sensitivity_dbm < self.noise_floor_dbm:
            raise ConfigError("decode sensitivity must be >= noise floor")


@dataclass(frozen=True)
class RadioEndpoint:
    """A transmitter or receiver: ENU position, power, and antenna gain."""

    position: tuple[float, float, float]
    tx_power_dbm: float = 15.0
    antenna_gain_dbi: float = 0.0

    def __post_init__(self) -> None:
        if not (-10.0 <= self.tx_power_dbm <= 30.0):
            raise ConfigError(f"tx power {self.tx_power_dbm} dBm outside [-10, 30]")


def fspl_db(d_m: float, frequency_hz: float) -> float:
    """Free-space path loss 20*log10(4*pi*d/lambda)."""
    if d_m <= 0:
        raise DomainError(f"distance {d_m} must be > 0")
    lam = SPEED_OF_LIGHT / frequency_hz
    return 20.0 * math.log10(4.0 * math.pi * d_m / lam)


def path_loss_db(d_m: float, p: ChannelParams) -> float:
    """Log-distance loss anchored at the reference distance.

    Distances under the reference are clamped (logged as a warning)."""
    d0 = p.reference_distance_m
    if d_m < d0:
        logger.warning("distance %.3f m below reference %.3f m; clamped", d_m, d0)
        d_m = d0
    return fspl_db(d0, p.frequency_hz) + 10.0 * p.path_loss_exponent * math.log10(d_m / d0)


def mean_rx_dbm(tx: RadioEndpoint, rx_gain_dbi: float, d_m: float, p: ChannelParams) -> float:
    """Mean received power: powers and gains minus path and canopy loss."""
    return (
        tx.tx_power_dbm
        + tx.antenna_gain_dbi
        + rx_gain_dbi
        - path_loss_db(d_m, p)
        - p.canopy_loss_db
    )


def sample_rx_dbm(mean: float, p: ChannelParams, rng: np.random.Generator) -> float:
    """One noisy sample: shared shadowing plus one per-antenna draw."""
    return (
        mean
        + (rng.normal(0.0, p.shadowing_sigma_db) if p.shadowing_sigma_db > 0 else 0.0)
        + (rng.normal(0.0, p.per_antenna_sigma_db) if p.per_antenna_sigma_db > 0 else 0.0)
    )


def sample_rx_vector(means: np.ndarray, p: ChannelParams, rng: np.random.Generator) -> np.ndarray:
    """Noisy per-antenna vector for one packet.

    The shadowing draw is shared across antennas (it folds into the
    per-packet offset); the per-antenna draws are i.i.d. Gaussian in dB.
    """
    means = np.asarray(means, dtype=float)
    shadow = rng.normal(0.0, p.shadowing_sigma_db) if p.shadowing_sigma_db > 0 else 0.0
    noise = (
        rng.normal(0.0, p.per_antenna_sigma_db, size=means.shape)
        if p.per_antenna_sigma_db > 0
        else np.zeros_like(means)
    )
    return means + shadow + noise


def decode(rx_dbm: float, p: ChannelParams) -> bool:
    """True iff the received power reaches the decode sensitivity."""
    return rx_dbm >= p.decode_sensitivity_dbm


def iso_range_m(
    p: ChannelParams,
    tx_power_dbm: float,
    tx_gain_dbi: float,
    rx_gain_dbi: float,
    sensitivity_dbm: float | None = None,
) -> float:
    """Distance where the mean link budget meets the sensitivity.

    Closed form of mean_rx(d) = sensitivity for the log-distance model;
    gain changes scale the range by 10^(delta/(10*n)).
    """
    sens = p.decode_sensitivity_dbm if sensitivity_dbm is None else sensitivity_dbm
    margin = (
        tx_power_dbm
        + tx_gain_dbi
        + rx_gain_dbi
        - p.canopy_loss_db
        - fspl_db(p.reference_distance_m, p.frequency_hz)
        - sens
    )
    return p.reference_distance_m * 10.0 ** (margin / (10.0 * p.path_loss_exponent))


def observe_rss(
    template: BeamTemplate,
    layout: AntennaLayout,
    u: Direction,
    tx: RadioEndpoint,
    d_m: float,
    p: ChannelParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-antenna RSS vector for a packet arriving from direction ``u``."""
    gains = sample_template(template, layout, u)
    bulk = tx.tx_power_dbm + tx.antenna_gain_dbi - path_loss_db(d_m, p) - p.canopy_loss_db
    return sample_rx_vector(gains + bulk, p, rng)
