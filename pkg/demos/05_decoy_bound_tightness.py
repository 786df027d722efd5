"""How tight are the one-decoy bounds?

Evaluates the vacuum and single-photon bounds on exact expected counts (no
statistical deviations) and compares them with the true photon-number
contributions, summed term by term up to 50 photons.  At the default
intensities the bounds are sound but loose; they close up as the
intensities shrink and the optical error goes to zero.
"""
import numpy as np
from scipy.stats import poisson

from qkdnet import ChannelState, ProtocolParams, expected_block
from qkdnet.keyrate import BlockCounts, secret_key_length
from qkdnet.linkmodel import photon_number_yields


def truth(p, loss):
    stats = expected_block(p, ChannelState(loss))
    y, err = photon_number_yields(p, ChannelState(loss))
    pulses = sum(stats.n_pulses_by_intensity)
    tau = [sum(q * poisson.pmf(n, mu) for q, mu in zip(p.intensity_probs, p.intensities)) for n in (0, 1)]
    scaled = pulses * p.sift_z * stats.deadtime_scale
    return stats, scaled * tau[0] * y[0], scaled * tau[1] * y[1], err[1] / y[1]


cases = [
    ("defaults", ProtocolParams()),
    ("mu = 0.2 / 0.05", ProtocolParams(mu1=0.2, mu2=0.05)),
    ("mu = 0.05 / 0.01", ProtocolParams(mu1=0.05, mu2=0.01)),
    ("mu = 0.01 / 0.002, e_opt 0.1%", ProtocolParams(mu1=0.01, mu2=0.002, e_opt=0.001)),
]
print(f"{'case':<32} {'s0 low/true':>12} {'s1 low/true':>12} {'phi/e1':>8}")
for name, p in cases:
    stats, s0, s1, e1 = truth(p, 20.0)
    res = secret_key_length(BlockCounts.from_expected(stats, p), finite=False)
    print(f"{name:<32} {res.s_z0_low / s0:12.3f} {res.s_z1_low / s1:12.3f} {res.phi_z_up / e1:8.3f}")

# with only one decoy there is no vacuum intensity, so the vacuum bound has
# to come from differencing signal and decoy; multi-photon terms survive the
# difference at order mu1*mu2 and swamp the dark-count contribution
