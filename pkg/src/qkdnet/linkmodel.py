"""Analytic model of a single fibre QKD link.

A weak-coherent-pulse source with two intensities (signal ``mu1`` and decoy
``mu2``) feeds a lossy channel and a single effective threshold detector.
Everything here is closed form; the stochastic realisation lives in
:mod:`qkdnet.simnet`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np


class LinkModelError(ValueError):
    """Invalid physical input to the link model."""


class NoSignalError(LinkModelError):
    """Nothing ever clicks, so a block can never be completed."""


@dataclass(frozen=True)
class ProtocolParams:
    """Source, detector and security settings of one QKD link.

    Device values (pulse rate, efficiency, dead time, dark counts) follow the
    deployed hardware. Intensities, basis biases, optical error, error
    correction efficiency, security parameters and block size are not
    published for the deployment and are ordinary configuration.
    """

    pulse_rate: float = 6.0e8
    mu1: float = 0.5
    mu2: float = 0.1
    p_mu1: float = 0.7
    pz_tx: float = 0.9
    pz_rx: float = 0.9
    det_efficiency: float = 0.04
    dead_time: float = 4.0e-5
    p_dc: float = 8.5e-7
    e_opt: float = 0.01
    f_ec: float = 1.16
    eps_sec: float = 1e-9
    eps_corr: float = 1e-15
    block_size_nz: float = 1e6

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise LinkModelError(f"{f.name} must be a finite number, got {v!r}")
        if self.pulse_rate <= 0:
            raise LinkModelError("pulse_rate must be positive")
        if not 0 <= self.mu2 < self.mu1:
            raise LinkModelError("intensities must satisfy 0 <= mu2 < mu1")
        if not 0 < self.p_mu1 < 1:
            raise LinkModelError("p_mu1 must lie in (0, 1)")
        for name in ("pz_tx", "pz_rx"):
            if not 0 < getattr(self, name) < 1:
                raise LinkModelError(f"{name} must lie in (0, 1)")
        if not 0 <= self.det_efficiency <= 1:
            raise LinkModelError("det_efficiency must lie in [0, 1]")
        if not 0 <= self.p_dc <= 1:
            raise LinkModelError("p_dc must lie in [0, 1]")
        if not 0 <= self.e_opt <= 0.5:
            raise LinkModelError("e_opt must lie in [0, 0.5]")
        if self.dead_time < 0:
            raise LinkModelError("dead_time must be non-negative")
        if self.f_ec < 1:
            raise LinkModelError("f_ec must be >= 1")
        for name in ("eps_sec", "eps_corr"):
            if not 0 < getattr(self, name) < 1:
                raise LinkModelError(f"{name} must lie in (0, 1)")
        if self.block_size_nz < 1:
            raise LinkModelError("block_size_nz must be >= 1")

    @property
    def p_mu2(self) -> float:
        return 1.0 - self.p_mu1

    @property
    def intensities(self) -> tuple[float, float]:
        return (self.mu1, self.mu2)

    @property
    def intensity_probs(self) -> tuple[float, float]:
        return (self.p_mu1, self.p_mu2)

    @property
    def sift_z(self) -> float:
        return self.pz_tx * self.pz_rx

    @property
    def sift_x(self) -> float:
        return (1.0 - self.pz_tx) * (1.0 - self.pz_rx)

    def with_overrides(self, **kw) -> "ProtocolParams":
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise LinkModelError(f"unknown protocol parameter(s): {sorted(unknown)}")
        return replace(self, **kw)


@dataclass(frozen=True)
class ChannelState:
    loss_db: float

    def __post_init__(self):
        if not isinstance(self.loss_db, (int, float)) or not math.isfinite(self.loss_db):
            raise LinkModelError(f"loss_db must be finite, got {self.loss_db!r}")
        if self.loss_db < 0:
            raise LinkModelError(f"loss_db must be >= 0, got {self.loss_db}")


@dataclass(frozen=True)
class ExpectedBlockStats:
    """Expected per-block quantities; tuples are indexed (mu1, mu2)."""

    duration_s: float
    n_pulses_by_intensity: tuple[float, float]
    det_prob_by_intensity: tuple[float, float]
    n_z_by_intensity: tuple[float, float]
    n_x_by_intensity: tuple[float, float]
    m_z_by_intensity: tuple[float, float]
    m_x_by_intensity: tuple[float, float]
    sifted_rate_cps: float
    deadtime_scale: float = 1.0


def _check_prob(name, x):
    if not math.isfinite(x) or not 0 <= x <= 1:
        raise LinkModelError(f"{name} must lie in [0, 1], got {x!r}")


def channel_transmittance(loss_db: float) -> float:
    """Convert attenuation in dB to a power transmittance."""
    if not math.isfinite(loss_db) or loss_db < 0:
        raise LinkModelError(f"loss_db must be finite and >= 0, got {loss_db!r}")
    return 10.0 ** (-loss_db / 10.0)


def detection_prob(mu: float, t: float, p_dc: float) -> float:
    """Per-pulse click probability ``1 - (1 - p_dc) exp(-mu t)``."""
    if not math.isfinite(mu) or mu < 0:
        raise LinkModelError(f"mu must be >= 0, got {mu!r}")
    _check_prob("t", t)
    _check_prob("p_dc", p_dc)
    # -expm1 keeps precision when mu*t is tiny
    return p_dc + (1.0 - p_dc) * -math.expm1(-mu * t)


def qber_expected(mu: float, t: float, p_dc: float, e_opt: float) -> float:
    """Error fraction of clicks: dark clicks err half the time, signal clicks at ``e_opt``."""
    if not math.isfinite(e_opt) or not 0 <= e_opt <= 0.5:
        raise LinkModelError(f"e_opt must lie in [0, 0.5], got {e_opt!r}")
    d = detection_prob(mu, t, p_dc)
    if d == 0:
        raise NoSignalError("detection probability is zero; QBER undefined")
    signal = -math.expm1(-mu * t)
    e = (0.5 * p_dc + e_opt * signal * (1.0 - p_dc)) / d
    return min(max(e, 0.0), 0.5)


def deadtime_throttle(raw_rate_cps: float, dead_time_s: float) -> float:
    """Non-paralyzable dead-time saturation ``R / (1 + R tau)``."""
    if not math.isfinite(raw_rate_cps) or raw_rate_cps < 0:
        raise LinkModelError(f"raw rate must be >= 0, got {raw_rate_cps!r}")
    if not math.isfinite(dead_time_s) or dead_time_s < 0:
        raise LinkModelError(f"dead time must be >= 0, got {dead_time_s!r}")
    return raw_rate_cps / (1.0 + raw_rate_cps * dead_time_s)


def photon_number_prob(params: ProtocolParams, n: int) -> float:
    """Probability that a pulse carries ``n`` photons, averaged over intensities."""
    if n < 0:
        raise LinkModelError("photon number must be >= 0")
    log_fact = math.lgamma(n + 1)
    total = 0.0
    for mu, p in zip(params.intensities, params.intensity_probs):
        if mu == 0:
            total += p if n == 0 else 0.0
        else:
            total += p * math.exp(-mu + n * math.log(mu) - log_fact)
    return total


def expected_block(params: ProtocolParams, channel: ChannelState) -> ExpectedBlockStats:
    """Expected sifted counts for one block of ``block_size_nz`` key-basis detections.

    The dead-time throttle acts on the aggregate sifted click rate; one common
    scale factor is then applied to every sifted count.
    """
    t = channel_transmittance(channel.loss_db) * params.det_efficiency
    dets = tuple(detection_prob(mu, t, params.p_dc) for mu in params.intensities)
    errs = tuple(
        qber_expected(mu, t, params.p_dc, params.e_opt) if d > 0 else 0.0
        for mu, d in zip(params.intensities, dets)
    )

    rate_z = [params.pulse_rate * p * params.sift_z * d for p, d in zip(params.intensity_probs, dets)]
    rate_x = [params.pulse_rate * p * params.sift_x * d for p, d in zip(params.intensity_probs, dets)]
    raw = sum(rate_z) + sum(rate_x)
    if raw <= 0:
        raise NoSignalError(f"no detections at {channel.loss_db} dB")
    throttled = deadtime_throttle(raw, params.dead_time)
    scale = throttled / raw

    duration = params.block_size_nz / (scale * sum(rate_z))
    n_pulses = tuple(params.pulse_rate * duration * p for p in params.intensity_probs)
    n_z = tuple(r * scale * duration for r in rate_z)
    n_x = tuple(r * scale * duration for r in rate_x)
    return ExpectedBlockStats(
        duration_s=duration,
        n_pulses_by_intensity=n_pulses,
        det_prob_by_intensity=dets,
        n_z_by_intensity=n_z,
        n_x_by_intensity=n_x,
        m_z_by_intensity=tuple(n * e for n, e in zip(n_z, errs)),
        m_x_by_intensity=tuple(n * e for n, e in zip(n_x, errs)),
        sifted_rate_cps=throttled,
        deadtime_scale=scale,
    )


def photon_number_yields(params: ProtocolParams, channel: ChannelState, n_max: int = 50):
    """Per-photon-number click and error yields ``(Y_n, E_n Y_n)`` for n = 0..n_max.

    A photon-number resolved restatement of the click model, used as an
    independent reference for the decoy bounds.
    """
    t = channel_transmittance(channel.loss_db) * params.det_efficiency
    n = np.arange(n_max + 1)
    miss = (1.0 - t) ** n
    y = 1.0 - (1.0 - params.p_dc) * miss
    err = 0.5 * params.p_dc + params.e_opt * (1.0 - params.p_dc) * (1.0 - miss)
    return y, err
