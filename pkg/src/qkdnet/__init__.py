"""Simulator for a four-node trusted-node QKD ring over shared metro fibre."""
from .keyrate import (
    BlockCounts,
    KeyLengthResult,
    SweepPoint,
    asymptotic_skr,
    binary_entropy,
    finite_skr,
    hoeffding_delta,
    secret_key_length,
    sweep,
)
from .kms import ConsumerProfile, KeyDeliveryService, KeyManager, run_consumers
from .linkmodel import (
    ChannelState,
    ExpectedBlockStats,
    ProtocolParams,
    channel_transmittance,
    deadtime_throttle,
    detection_prob,
    expected_block,
    photon_number_prob,
    qber_expected,
)
from .simnet import DeviceNoise, run_link, run_network, sample_block
from .topology import bundled_path, load_topology, quantum_path, validate

__version__ = "0.1.0"
