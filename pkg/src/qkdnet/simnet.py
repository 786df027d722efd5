"""Seeded block-level simulation of the QKD links and the network.

Each block closes once ``block_size_nz`` key-basis detections are expected,
so its duration follows the link loss.  Per block the detection efficiency
drifts by a lognormal factor, counts are sampled around the link-model
expectations, and the finite-key length is evaluated on the sample.

Random streams are derived from the root seed as
``SeedSequence(seed, spawn_key=(link_index, block_index, stream))`` with
stream 0 for counts and drift and stream 1 for key material, so a block's
outcome does not depend on how many links or blocks are run alongside it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .keyrate import BlockCounts, KeyLengthResult, secret_key_length
from .kms import KeyManager, SeededMaterial
from .linkmodel import ChannelState, ExpectedBlockStats, ProtocolParams, expected_block

COUNT_STREAM, MATERIAL_STREAM = 0, 1
_COUNT_FIELDS = ("n_z_mu1", "n_z_mu2", "n_x_mu1", "n_x_mu2", "m_z_mu1", "m_z_mu2", "m_x_mu1", "m_x_mu2")


@dataclass(frozen=True)
class DeviceNoise:
    skr_jitter_rel: float = 0.08

    def __post_init__(self):
        if not self.skr_jitter_rel >= 0:
            raise ValueError("skr_jitter_rel must be >= 0")


@dataclass(frozen=True)
class ObservedBlockStats:
    n_z_mu1: int
    n_z_mu2: int
    n_x_mu1: int
    n_x_mu2: int
    m_z_mu1: int
    m_z_mu2: int
    m_x_mu1: int
    m_x_mu2: int
    start_s: float = 0.0
    end_s: float = 0.0
    link_id: str = ""

    def counts(self, params: ProtocolParams) -> BlockCounts:
        return BlockCounts(*(getattr(self, f) for f in _COUNT_FIELDS), params=params)


@dataclass
class LinkTimeSeries:
    link_id: str
    timestamps: np.ndarray
    skr_bps: np.ndarray
    qber: np.ndarray
    secret_bits: np.ndarray
    blocks: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.timestamps)

    @property
    def total_bits(self) -> int:
        return int(self.secret_bits.sum())


def block_rng(seed: int, link_index: int, block_index: int, stream: int = COUNT_STREAM):
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(int(link_index), int(block_index), stream))
    )


def sample_block(
    expected: ExpectedBlockStats,
    rng: np.random.Generator,
    *,
    start_s: float = 0.0,
    link_id: str = "",
) -> ObservedBlockStats:
    """Draw one block: Poisson detections, binomial errors given the detections."""
    n_exp = expected.n_z_by_intensity + expected.n_x_by_intensity
    m_exp = expected.m_z_by_intensity + expected.m_x_by_intensity
    n = rng.poisson(np.asarray(n_exp, dtype=float))
    p_err = np.divide(m_exp, n_exp, out=np.zeros(4), where=np.asarray(n_exp) > 0)
    m = rng.binomial(n, np.clip(p_err, 0.0, 1.0))
    return ObservedBlockStats(
        *(int(v) for v in n), *(int(v) for v in m),
        start_s=start_s, end_s=start_s + expected.duration_s, link_id=link_id,
    )


def _drifted(params: ProtocolParams, noise: DeviceNoise, rng) -> ProtocolParams:
    s = noise.skr_jitter_rel
    if s == 0:
        return params
    factor = math.exp(s * rng.standard_normal() - 0.5 * s * s)
    return params.with_overrides(det_efficiency=min(1.0, params.det_efficiency * factor))


def iter_link_blocks(
    params: ProtocolParams,
    channel: ChannelState,
    duration_s: float,
    noise: DeviceNoise | None = None,
    seed: int = 0,
    link_index: int = 0,
    link_id: str = "",
):
    """Yield ``(block_index, observed, key_result, block_params)`` for every complete block."""
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    noise = noise or DeviceNoise()
    cached = None if noise.skr_jitter_rel else expected_block(params, channel)
    t = 0.0
    k = 0
    while True:
        rng = block_rng(seed, link_index, k)
        p = _drifted(params, noise, rng)
        exp = cached or expected_block(p, channel)
        if t + exp.duration_s > duration_s:
            return
        obs = sample_block(exp, rng, start_s=t, link_id=link_id)
        res = secret_key_length(obs.counts(p))
        yield k, obs, res, p
        t = obs.end_s
        k += 1


def run_link(
    params: ProtocolParams,
    channel: ChannelState,
    duration_s: float,
    noise: DeviceNoise | None = None,
    seed: int = 0,
    link_index: int = 0,
    link_id: str = "link",
    keep_blocks: bool = False,
) -> LinkTimeSeries:
    """Simulate one link for ``duration_s`` seconds; partial trailing blocks are dropped."""
    ts, skr, qber, bits, blocks = [], [], [], [], []
    for _, obs, res, _p in iter_link_blocks(
        params, channel, duration_s, noise, seed, link_index, link_id
    ):
        dur = obs.end_s - obs.start_s
        ts.append(obs.end_s)
        skr.append(res.secret_bits / dur)
        qber.append(res.qber_z)
        bits.append(res.secret_bits)
        if keep_blocks:
            blocks.append((obs, res))
    return LinkTimeSeries(
        link_id,
        np.asarray(ts, dtype=float),
        np.asarray(skr, dtype=float),
        np.asarray(qber, dtype=float),
        np.asarray(bits, dtype=np.int64),
        blocks,
    )


@dataclass
class NetworkRun:
    series: dict[str, LinkTimeSeries]
    kms: KeyManager
    seed: int


def run_network(
    topology,
    params_per_link,
    duration_s: float,
    seed: int = 0,
    noise: DeviceNoise | None = None,
    kms: KeyManager | None = None,
) -> NetworkRun:
    """Simulate every quantum link and deposit its secret bits into the KMS.

    ``params_per_link`` is one :class:`ProtocolParams` for all links or a
    mapping from link id to parameters.  Deposits are applied in (link id,
    block index) order regardless of how the links were computed.
    """
    kms = kms or KeyManager.for_topology(topology, seed=seed)
    series = {}
    for idx, link in enumerate(topology.links):
        p = params_per_link[link.id] if isinstance(params_per_link, dict) else params_per_link
        series[link.id] = run_link(
            p, ChannelState(link.total_loss_db), duration_s, noise, seed, idx, link.id
        )
    index = {lk.id: i for i, lk in enumerate(topology.links)}
    for lid in sorted(series):
        link = topology.link(lid)
        for k, bits in enumerate(series[lid].secret_bits):
            if bits > 0:
                entropy = _material_entropy(seed, index[lid], k)
                kms.deposit(link.tx_node, link.rx_node, int(bits), SeededMaterial(entropy, int(bits)))
    return NetworkRun(series, kms, seed)


def _material_entropy(seed, link_index, block_index):
    return (int(seed) & (2**64 - 1), link_index, block_index, MATERIAL_STREAM)
