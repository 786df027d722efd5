"""One-decoy finite-key analysis for the three-state BB84 protocol.

Counts are rescaled per intensity, combined into vacuum and single-photon
lower bounds, and the phase error of the key basis is bounded from the
monitoring (X) basis with a random-sampling correction.  All bounds are
clamped to physically meaningful ranges before they enter the key length.

Fluctuation-free evaluation (``finite=False``) removes every Hoeffding
deviation and the sampling correction; it is what the asymptotic envelope
and the closed-form consistency checks use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linkmodel import (
    ChannelState,
    ExpectedBlockStats,
    LinkModelError,
    ProtocolParams,
    expected_block,
    photon_number_prob,
)

# Number of error terms in the one-decoy composable bound; each estimate
# fails with probability eps_sec / SECURITY_SPLIT.
SECURITY_SPLIT = 19


class KeyRateError(ValueError):
    pass


class DegenerateDecoyError(KeyRateError):
    """Signal and decoy intensities coincide."""


class InsufficientMonitoringError(KeyRateError):
    """No single-photon events could be certified in the monitoring basis."""


@dataclass(frozen=True)
class BlockCounts:
    n_z_mu1: float
    n_z_mu2: float
    n_x_mu1: float
    n_x_mu2: float
    m_z_mu1: float
    m_z_mu2: float
    m_x_mu1: float
    m_x_mu2: float
    params: ProtocolParams

    def __post_init__(self):
        for basis in "zx":
            for k in ("mu1", "mu2"):
                n = getattr(self, f"n_{basis}_{k}")
                m = getattr(self, f"m_{basis}_{k}")
                if n < 0 or m < 0:
                    raise KeyRateError("counts must be non-negative")
                if m > n * (1 + 1e-12):
                    raise KeyRateError(f"m_{basis}_{k}={m} exceeds n_{basis}_{k}={n}")

    @property
    def n_z(self) -> float:
        return self.n_z_mu1 + self.n_z_mu2

    @property
    def n_x(self) -> float:
        return self.n_x_mu1 + self.n_x_mu2

    @property
    def m_z(self) -> float:
        return self.m_z_mu1 + self.m_z_mu2

    @property
    def m_x(self) -> float:
        return self.m_x_mu1 + self.m_x_mu2

    @classmethod
    def from_expected(cls, stats: ExpectedBlockStats, params: ProtocolParams) -> "BlockCounts":
        return cls(
            n_z_mu1=stats.n_z_by_intensity[0],
            n_z_mu2=stats.n_z_by_intensity[1],
            n_x_mu1=stats.n_x_by_intensity[0],
            n_x_mu2=stats.n_x_by_intensity[1],
            m_z_mu1=stats.m_z_by_intensity[0],
            m_z_mu2=stats.m_z_by_intensity[1],
            m_x_mu1=stats.m_x_by_intensity[0],
            m_x_mu2=stats.m_x_by_intensity[1],
            params=params,
        )


@dataclass(frozen=True)
class KeyLengthResult:
    secret_bits: int
    s_z0_low: float
    s_z1_low: float
    phi_z_up: float
    lambda_ec: float
    qber_z: float
    s_z0_up: float = 0.0
    s_x1_low: float = 0.0
    v_x1_up: float = 0.0


@dataclass(frozen=True)
class SweepPoint:
    loss_db: float
    skr_bps: float
    qber: float


def binary_entropy(x: float) -> float:
    if not 0 <= x <= 1:
        raise KeyRateError(f"binary entropy argument must lie in [0, 1], got {x!r}")
    if x == 0 or x == 1:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def hoeffding_delta(n: float, eps: float) -> float:
    """Deviation ``sqrt(n/2 ln(1/eps))`` of a count of ``n`` events."""
    if not eps > 0 or eps > 1:
        raise KeyRateError(f"eps must lie in (0, 1], got {eps!r}")
    if n < 0:
        raise KeyRateError("n must be >= 0")
    if n == 0 or eps == 1:
        return 0.0
    return math.sqrt(n / 2 * math.log(1 / eps))


def _eps_est(params: ProtocolParams, finite: bool) -> float:
    return params.eps_sec / SECURITY_SPLIT if finite else 1.0


def _tau(params: ProtocolParams, n: int) -> float:
    return photon_number_prob(params, n)


def _rescaled(count, total, mu, p, eps):
    """Intensity-rescaled count pair (minus, plus)."""
    d = hoeffding_delta(total, eps)
    f = math.exp(mu) / p
    return f * (count - d), f * (count + d)


def _check_decoy(params: ProtocolParams):
    if params.mu1 == params.mu2:
        raise DegenerateDecoyError("mu1 == mu2: decoy estimate is singular")


def _vacuum_bounds_basis(n1, n2, m2, n_tot, m_tot, params, eps):
    mu1, mu2 = params.mu1, params.mu2
    p1, p2 = params.p_mu1, params.p_mu2
    tau0 = _tau(params, 0)
    n1_lo, n1_hi = _rescaled(n1, n_tot, mu1, p1, eps)
    n2_lo, n2_hi = _rescaled(n2, n_tot, mu2, p2, eps)
    low = tau0 * (mu1 * n2_lo - mu2 * n1_hi) / (mu1 - mu2)
    # vacuum clicks err with probability 1/2
    _, m2_hi = _rescaled(m2, m_tot, mu2, p2, eps)
    up = 2.0 * tau0 * m2_hi
    up = min(max(up, 0.0), n_tot)
    low = min(max(low, 0.0), up)
    return low, up


def _single_photon_basis(n1, n2, n_tot, s0_up, params, eps):
    mu1, mu2 = params.mu1, params.mu2
    p1, p2 = params.p_mu1, params.p_mu2
    tau0, tau1 = _tau(params, 0), _tau(params, 1)
    _, n1_hi = _rescaled(n1, n_tot, mu1, p1, eps)
    n2_lo, _ = _rescaled(n2, n_tot, mu2, p2, eps)
    bracket = (
        n2_lo
        - (mu2 / mu1) ** 2 * n1_hi
        - (mu1**2 - mu2**2) / mu1**2 * s0_up / tau0
    )
    s1 = tau1 * mu1 / (mu2 * (mu1 - mu2)) * bracket
    return min(max(s1, 0.0), n_tot)


def vacuum_bounds(counts: BlockCounts, *, finite: bool = True) -> tuple[float, float]:
    """Lower and upper bounds on vacuum contributions to the Z-basis detections."""
    p = counts.params
    _check_decoy(p)
    return _vacuum_bounds_basis(
        counts.n_z_mu1, counts.n_z_mu2, counts.m_z_mu2,
        counts.n_z, counts.m_z, p, _eps_est(p, finite),
    )


def single_photon_bound(counts: BlockCounts, s_z0_up: float, *, finite: bool = True) -> float:
    p = counts.params
    _check_decoy(p)
    return _single_photon_basis(
        counts.n_z_mu1, counts.n_z_mu2, counts.n_z, s_z0_up, p, _eps_est(p, finite)
    )


def monitoring_bounds(counts: BlockCounts, *, finite: bool = True) -> tuple[float, float]:
    """Single-photon detections and single-photon errors in the X basis, ``(s_x1_low, v_x1_up)``."""
    p = counts.params
    _check_decoy(p)
    eps = _eps_est(p, finite)
    _, s_x0_up = _vacuum_bounds_basis(
        counts.n_x_mu1, counts.n_x_mu2, counts.m_x_mu2, counts.n_x, counts.m_x, p, eps
    )
    s_x1 = _single_photon_basis(counts.n_x_mu1, counts.n_x_mu2, counts.n_x, s_x0_up, p, eps)
    _, m1_hi = _rescaled(counts.m_x_mu1, counts.m_x, p.mu1, p.p_mu1, eps)
    m2_lo, _ = _rescaled(counts.m_x_mu2, counts.m_x, p.mu2, p.p_mu2, eps)
    v = _tau(p, 1) * (m1_hi - m2_lo) / (p.mu1 - p.mu2)
    v = max(v, 0.0)
    return s_x1, v


def sampling_correction(eps: float, ratio: float, s_z1: float, s_x1: float) -> float:
    """Random-sampling term extrapolating the X-basis error ratio to the Z basis."""
    if s_z1 <= 0 or s_x1 <= 0:
        return 0.0
    if ratio <= 0 or ratio >= 1:
        return 0.0
    c, d, b = s_z1, s_x1, ratio
    spread = (c + d) * (1 - b) * b / (c * d * math.log(2))
    arg = (c + d) / (c * d * (1 - b) * b) * (SECURITY_SPLIT / eps) ** 2
    if arg <= 1:
        return 0.0
    return math.sqrt(spread * math.log2(arg))


def phase_error_bound(
    counts: BlockCounts,
    s_z1_low: float,
    s_x1_low: float,
    v_x1_up: float,
    *,
    finite: bool = True,
) -> float:
    if s_x1_low <= 0:
        raise InsufficientMonitoringError("no certified single-photon events in the X basis")
    ratio = v_x1_up / s_x1_low
    phi = ratio
    if finite:
        phi += sampling_correction(counts.params.eps_sec, ratio, s_z1_low, s_x1_low)
    return min(max(phi, 0.0), 0.5)


def _key_bracket(counts: BlockCounts, finite: bool, security_terms: bool):
    p = counts.params
    s0_low, s0_up = vacuum_bounds(counts, finite=finite)
    s1_low = single_photon_bound(counts, s0_up, finite=finite)
    s_x1, v_x1 = monitoring_bounds(counts, finite=finite)
    try:
        phi = phase_error_bound(counts, s1_low, s_x1, v_x1, finite=finite)
    except InsufficientMonitoringError:
        phi = 0.5
    qber = counts.m_z / counts.n_z if counts.n_z > 0 else 0.0
    qber = min(qber, 1.0)
    leak = p.f_ec * counts.n_z * binary_entropy(qber)
    value = s0_low + s1_low * (1 - binary_entropy(phi)) - leak
    if security_terms:
        value -= 6 * math.log2(SECURITY_SPLIT / p.eps_sec) + math.log2(2 / p.eps_corr)
    parts = dict(
        s_z0_low=s0_low, s_z0_up=s0_up, s_z1_low=s1_low, phi_z_up=phi,
        lambda_ec=leak, qber_z=qber, s_x1_low=s_x1, v_x1_up=v_x1,
    )
    return value, parts


def secret_key_length(counts: BlockCounts, *, finite: bool = True) -> KeyLengthResult:
    """Extractable secret bits for one block of observed counts.

    With ``finite=False`` every statistical deviation is dropped; the
    composable security overhead is still subtracted.
    """
    value, parts = _key_bracket(counts, finite, security_terms=True)
    bits = max(0, math.floor(value)) if math.isfinite(value) else 0
    bits = min(bits, math.floor(counts.n_z))
    return KeyLengthResult(secret_bits=int(bits), **parts)


def finite_skr(params: ProtocolParams, channel: ChannelState) -> tuple[float, ExpectedBlockStats, KeyLengthResult]:
    """Finite-key rate (bits/s) at the expected counts for one block."""
    stats = expected_block(params, channel)
    res = secret_key_length(BlockCounts.from_expected(stats, params))
    return res.secret_bits / stats.duration_s, stats, res


def asymptotic_skr(params: ProtocolParams, channel: ChannelState) -> float:
    """Infinite-key envelope: no deviations, no sampling term, no security overhead."""
    stats = expected_block(params, channel)
    value, _ = _key_bracket(BlockCounts.from_expected(stats, params), finite=False, security_terms=False)
    return max(value, 0.0) / stats.duration_s


def sweep(params: ProtocolParams, loss_grid) -> list[SweepPoint]:
    """Finite-key SKR and Z-basis QBER at expected counts for each loss."""
    grid = [float(x) for x in loss_grid]
    if not grid:
        raise KeyRateError("loss grid is empty")
    if any(x < 0 or not math.isfinite(x) for x in grid):
        raise KeyRateError("loss grid values must be finite and >= 0")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise KeyRateError("loss grid must be strictly increasing")
    points = []
    for loss in grid:
        skr, _, res = finite_skr(params, ChannelState(loss))
        points.append(SweepPoint(loss_db=loss, skr_bps=skr, qber=res.qber_z))
    return points


def calibrate_loss(
    params: ProtocolParams,
    target_bps: float,
    bracket: tuple[float, float] = (1.0, 15.0),
    xtol: float = 1e-6,
) -> float:
    """Channel loss in ``bracket`` at which the finite-key SKR equals ``target_bps``.

    Raises ``KeyRateError`` when the target is not bracketed.
    """
    from scipy.optimize import brentq

    def f(loss):
        return finite_skr(params, ChannelState(loss))[0] - target_bps

    lo, hi = bracket
    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise KeyRateError(
            f"target {target_bps} bps not bracketed on [{lo}, {hi}] dB "
            f"(SKR spans {f_lo + target_bps:.1f}..{f_hi + target_bps:.1f} bps)"
        )
    return brentq(f, lo, hi, xtol=xtol)


def calibrate_e_opt(
    params: ProtocolParams,
    loss_db: float,
    target_bps: float,
    bracket: tuple[float, float] = (0.0, 0.2),
) -> float:
    """Optical error at which the finite-key SKR at ``loss_db`` equals ``target_bps``."""
    from scipy.optimize import brentq

    def f(e):
        return finite_skr(params.with_overrides(e_opt=e), ChannelState(loss_db))[0] - target_bps

    lo, hi = bracket
    if np.sign(f(lo)) == np.sign(f(hi)):
        raise KeyRateError(f"target {target_bps} bps not reachable by e_opt in {bracket}")
    return brentq(f, lo, hi, xtol=1e-10)


__all__ = [
    "BlockCounts", "KeyLengthResult", "SweepPoint", "KeyRateError",
    "DegenerateDecoyError", "InsufficientMonitoringError", "LinkModelError",
    "binary_entropy", "hoeffding_delta", "vacuum_bounds", "single_photon_bound",
    "monitoring_bounds", "phase_error_bound", "sampling_correction",
    "secret_key_length", "finite_skr", "asymptotic_skr", "sweep",
    "calibrate_loss", "calibrate_e_opt",
]
