"""Run configuration: which topology, which protocol settings, what to run."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linkmodel import LinkModelError, ProtocolParams
from .simnet import DeviceNoise
from .topology import TopologySchemaError, bundled_path, read_document

_FIELDS = {
    "topology", "protocol", "link_overrides", "device_noise", "sweep",
    "days", "seed", "out", "warmup_hours",
}


class ConfigError(TopologySchemaError):
    kind = "config"


@dataclass(frozen=True)
class RunConfig:
    topology: Path
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    link_overrides: dict = field(default_factory=dict)
    noise: DeviceNoise = field(default_factory=DeviceNoise)
    sweep_grid: tuple[float, ...] = tuple(np.round(np.arange(0.0, 25.0001, 0.5), 6))
    days: float = 5.0
    seed: int = 0
    out: Path = Path("out")
    warmup_hours: float = 1.0

    def params_for(self, link_id: str) -> ProtocolParams:
        over = self.link_overrides.get(link_id)
        return self.protocol.with_overrides(**over) if over else self.protocol

    def params_per_link(self, topology) -> dict:
        return {lk.id: self.params_for(lk.id) for lk in topology.links}


def _grid(spec) -> tuple[float, ...]:
    if isinstance(spec, list):
        grid = [float(x) for x in spec]
    elif isinstance(spec, dict) and set(spec) <= {"start", "stop", "step"}:
        start, stop, step = (float(spec.get(k, d)) for k, d in (("start", 0), ("stop", 25), ("step", 0.5)))
        if step <= 0:
            raise ConfigError("sweep step must be positive", "sweep")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        grid = [round(start + i * step, 9) for i in range(max(n, 0))]
    else:
        raise ConfigError("sweep must be a list of losses or {start, stop, step}", "sweep")
    if not grid:
        raise ConfigError("sweep grid is empty", "sweep")
    if any(not math.isfinite(x) or x < 0 for x in grid):
        raise ConfigError("sweep losses must be finite and >= 0", "sweep")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("sweep grid must be strictly increasing", "sweep")
    return tuple(grid)


def parse_seed(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {value!r}", "seed")
    return value


def load_run_config(path) -> RunConfig:
    """Read a run configuration; the topology path is relative to the config file."""
    path = Path(path)
    if not path.exists() and bundled_path(str(path)).exists():
        path = bundled_path(str(path))
    doc = read_document(path)
    if not isinstance(doc, dict):
        raise ConfigError("run config must be an object", str(path))
    extra = set(doc) - _FIELDS
    if extra:
        raise ConfigError(f"unknown field(s) {sorted(extra)}", str(path))
    if "topology" not in doc:
        raise ConfigError("missing field 'topology'", str(path))
    topo = Path(doc["topology"])
    if not topo.is_absolute():
        topo = path.parent / topo
    if not topo.exists():
        raise ConfigError(f"topology file {topo} does not exist", "topology")
    try:
        protocol = ProtocolParams().with_overrides(**doc.get("protocol", {}))
        overrides = doc.get("link_overrides", {})
        for lid, over in overrides.items():
            protocol.with_overrides(**over)
        noise = DeviceNoise(**doc.get("device_noise", {}))
    except (LinkModelError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), str(path)) from None
    out = Path(doc.get("out", "out"))
    days = float(doc.get("days", 5.0))
    if not days > 0:
        raise ConfigError("days must be positive", "days")
    kw = {}
    if "sweep" in doc:
        kw["sweep_grid"] = _grid(doc["sweep"])
    return RunConfig(
        topology=topo,
        protocol=protocol,
        link_overrides=dict(overrides),
        noise=noise,
        days=days,
        seed=parse_seed(doc.get("seed", 0)),
        out=out,
        warmup_hours=float(doc.get("warmup_hours", 1.0)),
        **kw,
    )
