"""Network topology: sites, dual-fibre segments, circulators, quantum links, DWDM plan.

Nodes are listed in anti-clockwise ring order; the quantum layer must be the
directed ring that follows this order.  Circulators route light from the
port facing one neighbour to the next port in their rotation, so the port
list of every circulator ODF fixes which traversals are physically possible.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations
from pathlib import Path

ODF_ROLES = ("passive", "circulator-4port", "circulator-3port")
CHANNEL_PURPOSES = ("encryption", "sync", "kms")
CHANNEL_ROLES = ("ring", "mesh")

_TOP_LEVEL = {"nodes", "odfs", "segments", "quantum_links", "classical_channels", "defaults"}
_NODE_FIELDS = {"id", "transmitter", "receiver", "circulator", "label"}
_ODF_FIELDS = {"id", "role", "ports", "label"}
_SEGMENT_FIELDS = {"id", "a", "b", "length_km", "loss_db", "placeholder"}
_LINK_FIELDS = {"id", "tx", "rx", "via"}
_CHANNEL_FIELDS = {"id", "purpose", "wavelength", "topology_role", "edges"}
_DEFAULT_FIELDS = {
    "circulator_loss_db",
    "fibre_attenuation_db_per_km",
    "splice_allowance_db",
    "max_wavelengths",
}


class TopologyError(ValueError):
    """Base class; ``location`` names the offending element."""

    kind = "topology"

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class TopologySchemaError(TopologyError):
    kind = "schema"


class TopologyParseError(TopologySchemaError):
    kind = "parse"

    def __init__(self, message: str, line: int, column: int, source: str = ""):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})", source)


class UnknownSiteError(TopologyError):
    kind = "unknown-site"


class TopologyInvariantError(TopologyError):
    kind = "invariant"

    def __init__(self, diagnostic: "Diagnostic"):
        self.diagnostic = diagnostic
        super().__init__(f"[{diagnostic.rule}] {diagnostic.message}", diagnostic.element)


class PathError(TopologyError):
    pass


class NotADirectLinkError(PathError):
    kind = "not-a-direct-link"


class DirectionError(PathError):
    kind = "direction"


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    element: str
    message: str

    def __str__(self):
        return f"[{self.rule}] {self.element}: {self.message}"


@dataclass(frozen=True)
class Defaults:
    circulator_loss_db: float = 0.8
    fibre_attenuation_db_per_km: float = 0.35
    splice_allowance_db: float = 0.3
    max_wavelengths: int = 7


@dataclass(frozen=True)
class Node:
    id: str
    transmitter: bool = True
    receiver: bool = True
    circulator: bool = True
    label: str = ""


@dataclass(frozen=True)
class ODF:
    id: str
    role: str = "passive"
    ports: tuple[str, ...] = ()
    label: str = ""

    @property
    def has_circulator(self) -> bool:
        return self.role != "passive"


@dataclass(frozen=True)
class FibreSegment:
    """One dual-fibre segment: fibre 1 quantum, fibre 2 classical."""

    id: str
    endpoint_a: str
    endpoint_b: str
    length_km: float
    loss_db: float
    placeholder: bool = False
    quantum_occupancy: frozenset = frozenset()


@dataclass(frozen=True)
class PathElement:
    kind: str  # "circulator" or "segment"
    ref: str
    direction: str = ""  # "a->b" / "b->a" for segments
    loss_db: float = 0.0


@dataclass(frozen=True)
class QuantumLink:
    id: str
    tx_node: str
    rx_node: str
    sites: tuple[str, ...]
    path: tuple[PathElement, ...]
    total_loss_db: float

    @property
    def circulator_hops(self) -> int:
        return sum(1 for e in self.path if e.kind == "circulator")

    @property
    def segment_ids(self) -> tuple[str, ...]:
        return tuple(e.ref for e in self.path if e.kind == "segment")


@dataclass(frozen=True)
class ClassicalChannel:
    id: str
    purpose: str
    wavelength: str
    topology_role: str
    edges: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class NetworkTopology:
    nodes: tuple[Node, ...]
    odfs: tuple[ODF, ...]
    segments: tuple[FibreSegment, ...]
    links: tuple[QuantumLink, ...]
    classical_channels: tuple[ClassicalChannel, ...]
    defaults: Defaults = field(default_factory=Defaults)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    @property
    def site_ids(self) -> tuple[str, ...]:
        return self.node_ids + tuple(o.id for o in self.odfs)

    def ring_successor(self, node_id: str) -> str:
        ids = self.node_ids
        return ids[(ids.index(node_id) + 1) % len(ids)]

    def ring_predecessor(self, node_id: str) -> str:
        ids = self.node_ids
        return ids[(ids.index(node_id) - 1) % len(ids)]

    def segment(self, seg_id: str) -> FibreSegment:
        for s in self.segments:
            if s.id == seg_id:
                return s
        raise KeyError(seg_id)

    def segment_between(self, u: str, v: str) -> FibreSegment | None:
        for s in self.segments:
            if {s.endpoint_a, s.endpoint_b} == {u, v}:
                return s
        return None

    def odf(self, odf_id: str) -> ODF | None:
        for o in self.odfs:
            if o.id == odf_id:
                return o
        return None

    def link(self, link_id: str) -> QuantumLink:
        for lk in self.links:
            if lk.id == link_id:
                return lk
        raise KeyError(link_id)

    def link_between(self, tx: str, rx: str) -> QuantumLink | None:
        for lk in self.links:
            if lk.tx_node == tx and lk.rx_node == rx:
                return lk
        return None


# -- parsing -----------------------------------------------------------------


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise TopologySchemaError(f"expected an object, got {type(obj).__name__}", where)
    extra = set(obj) - allowed
    if extra:
        raise TopologySchemaError(f"unknown field(s) {sorted(extra)}", where)


def _require(obj, key, types, where):
    if key not in obj:
        raise TopologySchemaError(f"missing field '{key}'", where)
    v = obj[key]
    if not isinstance(v, types):
        raise TopologySchemaError(f"field '{key}' has wrong type {type(v).__name__}", where)
    return v


def _number(obj, key, where, default=None):
    if key not in obj:
        if default is None:
            raise TopologySchemaError(f"missing field '{key}'", where)
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
        raise TopologySchemaError(f"field '{key}' must be a finite number >= 0", where)
    return float(v)


def read_document(path) -> dict:
    """Read a topology or run-config JSON document, locating syntax errors."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyParseError(exc.msg, exc.lineno, exc.colno, str(path)) from None


def bundled_path(name: str = "nicosia.ring") -> Path:
    """Path of a configuration shipped with the package (``nicosia.ring``, ``nicosia.run``)."""
    fname = name if name.endswith(".json") else name + ".json"
    p = resources.files("qkdnet") / "data" / fname
    return Path(str(p))


def parse_topology(doc: dict) -> NetworkTopology:
    """Resolve a configuration document into a topology without invariant checks.

    Schema violations and references to undeclared sites raise; everything
    else is left to :func:`validate`.
    """
    _reject_unknown(doc, _TOP_LEVEL, "document")
    missing = _TOP_LEVEL - {"defaults"} - set(doc)
    if missing:
        raise TopologySchemaError(f"missing section(s) {sorted(missing)}", "document")

    d = doc.get("defaults", {})
    _reject_unknown(d, _DEFAULT_FIELDS, "defaults")
    base = Defaults()
    defaults = Defaults(
        circulator_loss_db=_number(d, "circulator_loss_db", "defaults", base.circulator_loss_db),
        fibre_attenuation_db_per_km=_number(
            d, "fibre_attenuation_db_per_km", "defaults", base.fibre_attenuation_db_per_km
        ),
        splice_allowance_db=_number(d, "splice_allowance_db", "defaults", base.splice_allowance_db),
        max_wavelengths=int(_number(d, "max_wavelengths", "defaults", base.max_wavelengths)),
    )

    nodes = []
    for i, raw in enumerate(_section(doc, "nodes")):
        where = f"nodes[{i}]"
        _reject_unknown(raw, _NODE_FIELDS, where)
        nid = _require(raw, "id", str, where)
        nodes.append(
            Node(
                id=nid,
                transmitter=bool(raw.get("transmitter", True)),
                receiver=bool(raw.get("receiver", True)),
                circulator=bool(raw.get("circulator", True)),
                label=str(raw.get("label", "")),
            )
        )
    odfs = []
    for i, raw in enumerate(_section(doc, "odfs")):
        where = f"odfs[{i}]"
        _reject_unknown(raw, _ODF_FIELDS, where)
        oid = _require(raw, "id", str, where)
        role = raw.get("role", "passive")
        if role not in ODF_ROLES:
            raise TopologySchemaError(f"role must be one of {ODF_ROLES}", oid)
        ports = tuple(raw.get("ports", ()))
        if role != "passive":
            want = 4 if role == "circulator-4port" else 3
            if len(ports) > want or len(ports) < 2:
                raise TopologySchemaError(f"{role} takes 2..{want} ports, got {len(ports)}", oid)
        elif ports:
            raise TopologySchemaError("passive ODFs have no circulator ports", oid)
        odfs.append(ODF(id=oid, role=role, ports=ports, label=str(raw.get("label", ""))))

    ids = [n.id for n in nodes] + [o.id for o in odfs]
    dup = {x for x in ids if ids.count(x) > 1}
    if dup:
        raise TopologySchemaError(f"duplicate site id(s) {sorted(dup)}", "document")
    sites = set(ids)
    for o in odfs:
        for p in o.ports:
            if p not in sites:
                raise UnknownSiteError(f"circulator port refers to unknown site '{p}'", o.id)

    segments = []
    for i, raw in enumerate(_section(doc, "segments")):
        where = f"segments[{i}]"
        _reject_unknown(raw, _SEGMENT_FIELDS, where)
        sid = _require(raw, "id", str, where)
        a = _require(raw, "a", str, sid)
        b = _require(raw, "b", str, sid)
        for s in (a, b):
            if s not in sites:
                raise UnknownSiteError(f"unknown site '{s}'", sid)
        if a == b:
            raise TopologySchemaError("segment endpoints must differ", sid)
        length = _number(raw, "length_km", sid, 0.0)
        if "loss_db" in raw:
            loss = _number(raw, "loss_db", sid)
        else:
            if "length_km" not in raw:
                raise TopologySchemaError("either loss_db or length_km is required", sid)
            loss = length * defaults.fibre_attenuation_db_per_km + defaults.splice_allowance_db
        segments.append(
            FibreSegment(sid, a, b, length, loss, placeholder=bool(raw.get("placeholder", False)))
        )
    seg_ids = [s.id for s in segments]
    if len(set(seg_ids)) != len(seg_ids):
        raise TopologySchemaError("duplicate segment id", "segments")

    node_ids = {n.id for n in nodes}
    partial = NetworkTopology(tuple(nodes), tuple(odfs), tuple(segments), (), (), defaults)
    links = []
    for i, raw in enumerate(_section(doc, "quantum_links")):
        where = f"quantum_links[{i}]"
        _reject_unknown(raw, _LINK_FIELDS, where)
        lid = _require(raw, "id", str, where)
        tx = _require(raw, "tx", str, lid)
        rx = _require(raw, "rx", str, lid)
        via = raw.get("via", [])
        if not isinstance(via, list) or not all(isinstance(v, str) for v in via):
            raise TopologySchemaError("'via' must be a list of site ids", lid)
        for s in (tx, rx):
            if s not in node_ids:
                raise UnknownSiteError(f"unknown node '{s}'", lid)
        for s in via:
            if s not in sites:
                raise UnknownSiteError(f"unknown site '{s}'", lid)
        links.append(_resolve_link(partial, lid, tx, rx, tuple(via)))
    lids = [lk.id for lk in links]
    if len(set(lids)) != len(lids):
        raise TopologySchemaError("duplicate quantum link id", "quantum_links")

    occupancy: dict[str, set] = {s.id: set() for s in segments}
    for lk in links:
        for e in lk.path:
            if e.kind == "segment":
                occupancy[e.ref].add((lk.id, e.direction))
    segments = [
        FibreSegment(
            s.id, s.endpoint_a, s.endpoint_b, s.length_km, s.loss_db, s.placeholder,
            frozenset(occupancy[s.id]),
        )
        for s in segments
    ]

    channels = []
    for i, raw in enumerate(_section(doc, "classical_channels")):
        where = f"classical_channels[{i}]"
        _reject_unknown(raw, _CHANNEL_FIELDS, where)
        cid = _require(raw, "id", str, where)
        purpose = _require(raw, "purpose", str, cid)
        if purpose not in CHANNEL_PURPOSES:
            raise TopologySchemaError(f"purpose must be one of {CHANNEL_PURPOSES}", cid)
        role = _require(raw, "topology_role", str, cid)
        if role not in CHANNEL_ROLES:
            raise TopologySchemaError(f"topology_role must be one of {CHANNEL_ROLES}", cid)
        wl = raw.get("wavelength")
        if not isinstance(wl, (str, int)) or isinstance(wl, bool):
            raise TopologySchemaError("wavelength must be an ITU-T grid channel id", cid)
        edges = []
        for e in raw.get("edges", []):
            if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, str) for x in e)):
                raise TopologySchemaError("edges must be [node, node] pairs", cid)
            for x in e:
                if x not in node_ids:
                    raise UnknownSiteError(f"unknown node '{x}'", cid)
            edges.append((e[0], e[1]))
        channels.append(ClassicalChannel(cid, purpose, str(wl), role, tuple(edges)))

    return NetworkTopology(
        tuple(nodes), tuple(odfs), tuple(segments), tuple(links), tuple(channels), defaults
    )


def _section(doc, name):
    v = doc[name]
    if not isinstance(v, list):
        raise TopologySchemaError(f"section '{name}' must be a list", name)
    return v


def _resolve_link(topo: NetworkTopology, lid, tx, rx, via) -> QuantumLink:
    sites = (tx,) + via + (rx,)
    circ_loss = topo.defaults.circulator_loss_db
    path: list[PathElement] = []
    tx_node = next(n for n in topo.nodes if n.id == tx)
    rx_node = next(n for n in topo.nodes if n.id == rx)
    if tx_node.circulator:
        path.append(PathElement("circulator", tx, loss_db=circ_loss))
    for i, (u, v) in enumerate(zip(sites, sites[1:])):
        seg = topo.segment_between(u, v)
        if seg is None:
            raise TopologySchemaError(f"no fibre segment between '{u}' and '{v}'", lid)
        direction = "a->b" if seg.endpoint_a == u else "b->a"
        path.append(PathElement("segment", seg.id, direction, seg.loss_db))
        if i + 1 < len(sites) - 1:
            o = topo.odf(v)
            if o is not None and o.has_circulator:
                path.append(PathElement("circulator", v, loss_db=circ_loss))
    if rx_node.circulator:
        path.append(PathElement("circulator", rx, loss_db=circ_loss))
    total = math.fsum(e.loss_db for e in path)
    return QuantumLink(lid, tx, rx, sites, tuple(path), total)


def load_topology(source) -> NetworkTopology:
    """Load and fully validate a topology from a path, a bundled name, or a dict.

    The first violated invariant raises :class:`TopologyInvariantError`.
    """
    if isinstance(source, dict):
        doc = source
    else:
        p = Path(source)
        if not p.exists() and not p.suffix == ".json" and bundled_path(str(source)).exists():
            p = bundled_path(str(source))
        doc = read_document(p)
    topo = parse_topology(doc)
    diags = validate(topo)
    if diags:
        raise TopologyInvariantError(diags[0])
    return topo


def quantum_path(topology: NetworkTopology, tx_node: str, rx_node: str) -> QuantumLink:
    """The quantum link carrying photons from ``tx_node`` to ``rx_node``."""
    ids = topology.node_ids
    for n in (tx_node, rx_node):
        if n not in ids:
            raise UnknownSiteError(f"unknown node '{n}'", n)
    if topology.ring_successor(tx_node) != rx_node:
        if topology.ring_predecessor(tx_node) == rx_node:
            raise DirectionError(
                "quantum signals flow anti-clockwise only", f"{tx_node}->{rx_node}"
            )
        raise NotADirectLinkError("nodes are not ring-adjacent", f"{tx_node}->{rx_node}")
    link = topology.link_between(tx_node, rx_node)
    if link is None:
        raise NotADirectLinkError("no quantum link configured", f"{tx_node}->{rx_node}")
    return link


# -- validation --------------------------------------------------------------


def validate(topology: NetworkTopology) -> list[Diagnostic]:
    """Every invariant violation of ``topology``; empty when it is consistent."""
    out: list[Diagnostic] = []
    t = topology
    ids = t.node_ids

    seen_pairs: dict[frozenset, str] = {}
    for s in t.segments:
        key = frozenset((s.endpoint_a, s.endpoint_b))
        if key in seen_pairs:
            out.append(Diagnostic(
                "fibre-pair", s.id,
                f"second fibre pair between {s.endpoint_a} and {s.endpoint_b} "
                f"(already {seen_pairs[key]})",
            ))
        else:
            seen_pairs[key] = s.id

    for s in t.segments:
        occ = sorted(s.quantum_occupancy)
        if len(occ) > 2:
            out.append(Diagnostic(
                "occupancy", s.id,
                f"{len(occ)} quantum signals on one fibre: {[o[0] for o in occ]}",
            ))
        elif len(occ) == 2 and occ[0][1] == occ[1][1]:
            out.append(Diagnostic(
                "occupancy", s.id,
                f"links {occ[0][0]} and {occ[1][0]} share direction {occ[0][1]}",
            ))

    for n in t.nodes:
        if not (n.transmitter and n.receiver):
            out.append(Diagnostic("node", n.id, "each node needs a QKD transmitter and receiver"))

    for lk in t.links:
        if lk.tx_node == lk.rx_node:
            out.append(Diagnostic("ring", lk.id, "link starts and ends at the same node"))
            continue
        if t.ring_successor(lk.tx_node) != lk.rx_node:
            if t.ring_predecessor(lk.tx_node) == lk.rx_node:
                out.append(Diagnostic(
                    "direction", lk.id,
                    f"{lk.tx_node}->{lk.rx_node} runs clockwise; quantum flow is anti-clockwise",
                ))
            else:
                out.append(Diagnostic(
                    "ring", lk.id, f"{lk.tx_node} and {lk.rx_node} are not ring-adjacent"
                ))
        for u, v, w in zip(lk.sites, lk.sites[1:], lk.sites[2:]):
            o = t.odf(v)
            if o is None or not o.has_circulator:
                continue
            if u not in o.ports or w not in o.ports:
                out.append(Diagnostic(
                    "circulator", lk.id, f"path {u}->{v}->{w} does not use ports of {v}"
                ))
            elif o.ports.index(w) != (o.ports.index(u) + 1) % len(o.ports):
                out.append(Diagnostic(
                    "direction", lk.id,
                    f"{v} circulator cannot route {u}->{w} against its rotation",
                ))
        for v in lk.sites[1:-1]:
            if v in ids:
                out.append(Diagnostic("ring", lk.id, f"path passes through node {v}"))

    tx_count = {n: 0 for n in ids}
    rx_count = {n: 0 for n in ids}
    for lk in t.links:
        tx_count[lk.tx_node] += 1
        rx_count[lk.rx_node] += 1
    for n in ids:
        if tx_count[n] != 1 or rx_count[n] != 1:
            out.append(Diagnostic(
                "ring", n,
                f"node transmits on {tx_count[n]} and receives on {rx_count[n]} links (need 1 and 1)",
            ))

    by_wl: dict[str, list[str]] = {}
    for c in t.classical_channels:
        by_wl.setdefault(c.wavelength, []).append(c.id)
    if len(by_wl) > t.defaults.max_wavelengths:
        out.append(Diagnostic(
            "wavelength-count", "classical_channels",
            f"{len(by_wl)} distinct wavelengths exceed the plan of {t.defaults.max_wavelengths}",
        ))
    for wl, users in by_wl.items():
        if len(users) > 1:
            out.append(Diagnostic(
                "wavelength-unique", str(wl), f"wavelength assigned to several signals {users}"
            ))

    kms_edges = {
        frozenset(e) for c in t.classical_channels if c.purpose == "kms" for e in c.edges
    }
    for a, b in combinations(ids, 2):
        if frozenset((a, b)) not in kms_edges:
            out.append(Diagnostic("kms-mesh", f"{a}<->{b}", "KMS full mesh is missing this edge"))
    for c in t.classical_channels:
        if c.purpose == "kms" and c.topology_role != "mesh":
            out.append(Diagnostic("kms-mesh", c.id, "KMS channels use the mesh role"))

    quantum_edges = {(lk.tx_node, lk.rx_node) for lk in t.links}
    sync = [c for c in t.classical_channels if c.purpose == "sync"]
    if sync:
        sync_edges = {e for c in sync for e in c.edges}
        if sync_edges != quantum_edges:
            out.append(Diagnostic("sync-ring", "sync", "sync channel does not mirror the quantum ring"))
    ring_edges = {frozenset((n, t.ring_successor(n))) for n in ids}
    enc = [c for c in t.classical_channels if c.purpose == "encryption"]
    if enc:
        enc_edges = {frozenset(e) for c in enc for e in c.edges}
        if not ring_edges <= enc_edges:
            out.append(Diagnostic("encryption-ring", "encryption", "encryptor ring is incomplete"))
    return out
