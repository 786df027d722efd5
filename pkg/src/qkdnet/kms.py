"""Key management: per-link key stores, trusted-node relay and key delivery.

Key material exists only between ring-adjacent nodes (one store per quantum
link).  Keys for any other pair are relayed hop by hop: a fresh end-to-end
key is one-time-pad encrypted with each hop key in turn, so every
intermediate trusted node sees it in the clear once.

Stores hold material lazily.  A block deposited from the simulator carries
a seed, and its bits are only generated when they are handed out.
"""
from __future__ import annotations

import itertools
import json
import math
import socket
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

AVAILABLE, RESERVED, CONSUMED = "available", "reserved", "consumed"


class KMSError(Exception):
    code = "BAD_REQUEST"


class BadRequestError(KMSError, ValueError):
    code = "BAD_REQUEST"


class UnknownNodeError(KMSError, KeyError):
    code = "UNKNOWN_NODE"

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown node"


class DepletedError(KMSError):
    """A hop store cannot cover the request; ``pair`` names it."""

    code = "DEPLETED"

    def __init__(self, pair, needed, available):
        self.pair = tuple(pair)
        self.needed = needed
        self.available = available
        super().__init__(
            f"store {'-'.join(self.pair)} depleted: need {needed} bits, {available} available"
        )


# -- material sources --------------------------------------------------------


class ArrayMaterial:
    """Explicit key bits (uint8 array of 0/1)."""

    def __init__(self, bits):
        self._bits = np.asarray(bits, dtype=np.uint8)
        if self._bits.ndim != 1 or np.any(self._bits > 1):
            raise BadRequestError("material must be a 1-D array of bits")

    def __len__(self):
        return len(self._bits)

    def bits(self, offset: int, n: int) -> np.ndarray:
        return self._bits[offset:offset + n].copy()


@lru_cache(maxsize=32)
def _seeded_bits(entropy: tuple, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(list(entropy)))
    raw = np.frombuffer(rng.bytes((n + 7) // 8), dtype=np.uint8)
    return np.unpackbits(raw)[:n]


class SeededMaterial:
    """Simulated key bits regenerated on demand from a seed tuple."""

    def __init__(self, entropy: Iterable[int], n: int):
        self.entropy = tuple(int(x) for x in entropy)
        self.n = int(n)

    def __len__(self):
        return self.n

    def bits(self, offset: int, n: int) -> np.ndarray:
        return _seeded_bits(self.entropy, self.n)[offset:offset + n].copy()


# -- stores ------------------------------------------------------------------


@dataclass(eq=False)
class KeyBlock:
    id: str
    bits: int
    status: str
    source: object = field(repr=False)
    offset: int = 0

    def material(self) -> np.ndarray:
        return self.source.bits(self.offset, self.bits)


class KeyStore:
    """Key material shared by one ring-adjacent node pair."""

    def __init__(self, pair):
        self.pair = tuple(sorted(pair))
        self.blocks: list[KeyBlock] = []
        self.available_bits = 0
        self.reserved_bits = 0
        self.deposited_bits = 0
        self.consumed_bits = 0
        self._head = 0
        self._ids = itertools.count()

    def __repr__(self):
        return f"KeyStore({'-'.join(self.pair)}, available={self.available_bits})"

    def _new_id(self):
        return f"{self.pair[0]}{self.pair[1]}-{next(self._ids):08d}"

    def deposit(self, bits: int, material) -> str:
        if bits <= 0:
            raise BadRequestError("deposit must carry at least one bit")
        if not hasattr(material, "bits"):
            material = ArrayMaterial(material)
        if len(material) != bits:
            raise BadRequestError(f"material holds {len(material)} bits, deposit declares {bits}")
        block = KeyBlock(self._new_id(), int(bits), AVAILABLE, material)
        self.blocks.append(block)
        self.available_bits += block.bits
        self.deposited_bits += block.bits
        return block.id

    def reserve(self, n: int) -> list[KeyBlock]:
        """Mark the oldest ``n`` available bits reserved, splitting a block if needed."""
        if n > self.available_bits:
            raise DepletedError(self.pair, n, self.available_bits)
        taken = []
        need = n
        i = self._head
        while need > 0:
            b = self.blocks[i]
            if b.status != AVAILABLE:
                i += 1
                continue
            if b.bits > need:
                rest = KeyBlock(self._new_id(), b.bits - need, AVAILABLE, b.source, b.offset + need)
                b.bits = need
                self.blocks.insert(i + 1, rest)
            b.status = RESERVED
            taken.append(b)
            need -= b.bits
            i += 1
        while self._head < len(self.blocks) and self.blocks[self._head].status != AVAILABLE:
            self._head += 1
        self.available_bits -= n
        self.reserved_bits += n
        return taken

    def release(self, blocks: list[KeyBlock]):
        """Undo a reservation.  Released blocks keep their place in the queue."""
        for b in blocks:
            if b.status != RESERVED:
                raise KMSError(f"block {b.id} is {b.status}, not reserved")
            b.status = AVAILABLE
            self.available_bits += b.bits
            self.reserved_bits -= b.bits
        self._head = min([self._head] + [self.blocks.index(b) for b in blocks])

    def commit(self, blocks: list[KeyBlock]) -> np.ndarray:
        parts = []
        for b in blocks:
            if b.status != RESERVED:
                raise KMSError(f"block {b.id} is {b.status}, not reserved")
            parts.append(b.material())
            b.status = CONSUMED
            self.reserved_bits -= b.bits
            self.consumed_bits += b.bits
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)

    def check_conservation(self) -> bool:
        return self.deposited_bits - self.consumed_bits == self.available_bits + self.reserved_bits


def deposit(store: KeyStore, bits: int, material) -> str:
    return store.deposit(bits, material)


# -- relay -------------------------------------------------------------------


@dataclass(frozen=True)
class RelayTicket:
    src: str
    dst: str
    hop_chain: tuple[str, ...]
    key_id: str
    size_bits: int


@dataclass
class Delivery:
    key_id: str
    src: str
    dst: str
    hop_chain: tuple[str, ...]
    src_material: np.ndarray
    dst_material: np.ndarray
    wire_words: list = field(default_factory=list)

    @property
    def relayed(self) -> bool:
        return len(self.hop_chain) > 2


def bits_to_hex(bits: np.ndarray) -> str:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


class KeyManager:
    """Key stores and relay logic for one ring network.

    ``ring`` lists nodes in anti-clockwise order.  Every public operation
    takes the instance lock, so concurrent callers see a single command order.
    """

    def __init__(self, ring: Iterable[str], seed: int = 0):
        self.ring = tuple(ring)
        if len(self.ring) < 2 or len(set(self.ring)) != len(self.ring):
            raise BadRequestError("ring needs at least two distinct nodes")
        self.stores: dict[tuple, KeyStore] = {}
        for i, n in enumerate(self.ring):
            pair = tuple(sorted((n, self.ring[(i + 1) % len(self.ring)])))
            self.stores.setdefault(pair, KeyStore(pair))
        self._rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4B4D53]))
        self._key_ids = itertools.count()
        self.exposure: dict[str, list[str]] = defaultdict(list)
        self.pending: dict[str, tuple] = {}
        self.lock = threading.RLock()

    @classmethod
    def for_topology(cls, topology, seed: int = 0) -> "KeyManager":
        return cls(topology.node_ids, seed=seed)

    def store(self, a: str, b: str) -> KeyStore:
        self._check_node(a)
        self._check_node(b)
        try:
            return self.stores[tuple(sorted((a, b)))]
        except KeyError:
            raise BadRequestError(f"{a} and {b} share no quantum link") from None

    def _check_node(self, n):
        if n not in self.ring:
            raise UnknownNodeError(f"unknown node '{n}'")

    def hop_chain(self, src: str, dst: str) -> tuple[str, ...]:
        """Shorter ring arc from ``src`` to ``dst``; ties go anti-clockwise."""
        self._check_node(src)
        self._check_node(dst)
        if src == dst:
            raise BadRequestError("source and destination coincide")
        k = len(self.ring)
        i, j = self.ring.index(src), self.ring.index(dst)
        acw = (j - i) % k
        if acw <= k - acw:
            return tuple(self.ring[(i + s) % k] for s in range(acw + 1))
        return tuple(self.ring[(i - s) % k] for s in range(k - acw + 1))

    def balances(self) -> dict[str, int]:
        return {"-".join(p): s.available_bits for p, s in self.stores.items()}

    def deposit(self, a: str, b: str, bits: int, material) -> str:
        with self.lock:
            return self.store(a, b).deposit(bits, material)

    def _next_key_id(self):
        return f"key-{next(self._key_ids):010d}"

    def request_key(self, src: str, dst: str, size_bits: int) -> Delivery:
        """Deliver ``size_bits`` of identical key to ``src`` and ``dst``."""
        if not isinstance(size_bits, (int, np.integer)) or isinstance(size_bits, bool) or size_bits <= 0:
            raise BadRequestError("size_bits must be a positive integer")
        with self.lock:
            chain = self.hop_chain(src, dst)
            ticket = RelayTicket(src, dst, chain, self._next_key_id(), int(size_bits))
            return self.relay_key(ticket)

    def relay_key(self, ticket: RelayTicket, key=None) -> Delivery:
        """Two-phase relay along ``ticket.hop_chain``; aborts without side effects.

        ``key`` fixes the end-to-end key (bits); by default a fresh one is drawn.
        """
        with self.lock:
            chain = ticket.hop_chain
            if len(chain) < 2 or chain[0] != ticket.src or chain[-1] != ticket.dst:
                raise BadRequestError("hop chain must run from src to dst")
            hops = [self.store(a, b) for a, b in zip(chain, chain[1:])]
            n = ticket.size_bits
            if key is not None:
                key = np.asarray(key, dtype=np.uint8)
                if key.shape != (n,):
                    raise BadRequestError("end-to-end key length must equal size_bits")
            reserved = []
            try:
                for st in hops:
                    reserved.append((st, st.reserve(n)))
            except DepletedError:
                for st, blocks in reversed(reserved):
                    st.release(blocks)
                raise
            hop_keys = [st.commit(blocks) for st, blocks in reserved]

            if len(hop_keys) == 1:
                key = hop_keys[0]
                return Delivery(ticket.key_id, ticket.src, ticket.dst, chain, key, key.copy())

            if key is None:
                key = self._rng.integers(0, 2, size=n, dtype=np.uint8)
            wire = []
            for node, hk in zip(chain[1:-1], hop_keys):
                wire.append(key ^ hk)
                self.exposure[node].append(ticket.key_id)
            wire.append(key ^ hop_keys[-1])
            recovered = wire[-1] ^ hop_keys[-1]
            return Delivery(ticket.key_id, ticket.src, ticket.dst, chain, key, recovered, wire)

    def check_conservation(self) -> bool:
        return all(s.check_conservation() for s in self.stores.values())


def request_key(kms: KeyManager, src: str, dst: str, size_bits: int) -> Delivery:
    return kms.request_key(src, dst, size_bits)


def relay_key(kms: KeyManager, ticket: RelayTicket, key=None) -> Delivery:
    return kms.relay_key(ticket, key)


# -- application-layer consumers ---------------------------------------------


@dataclass(frozen=True)
class ConsumerProfile:
    src: str
    dst: str
    rekey_interval_s: float = 60.0
    key_bits_per_rekey: int = 256

    def __post_init__(self):
        if self.rekey_interval_s <= 0 or self.key_bits_per_rekey <= 0:
            raise BadRequestError("consumer profile fields must be positive")

    @property
    def demand_bps(self) -> float:
        return self.key_bits_per_rekey / self.rekey_interval_s


@dataclass
class ConsumerReportEntry:
    src: str
    dst: str
    hop_chain: tuple[str, ...]
    demand_bps: float
    supply_bps: float
    requests: int = 0
    delivered: int = 0
    shortfalls: int = 0
    first_shortfall_s: float | None = None
    time_to_depletion_s: float | None = None


@dataclass
class ConsumptionReport:
    duration_s: float
    entries: list[ConsumerReportEntry] = field(default_factory=list)

    @property
    def total_shortfalls(self) -> int:
        return sum(e.shortfalls for e in self.entries)


def run_consumers(
    kms: KeyManager,
    profiles: list[ConsumerProfile],
    duration_s: float,
    generation_bps: dict | None = None,
    seed: int = 0,
) -> ConsumptionReport:
    """Drive encryptor rekeys against the stores for ``duration_s`` seconds.

    ``generation_bps`` maps a store pair (``"N1-N2"`` or a node tuple) to a
    fresh-key supply rate; stores not listed receive nothing.  Supply is
    deposited just before each rekey event.
    """
    report = ConsumptionReport(duration_s)
    if duration_s <= 0 or not profiles:
        return report

    supply = {}
    for key, rate in (generation_bps or {}).items():
        a, b = key.split("-") if isinstance(key, str) else key
        supply[kms.store(a, b).pair] = float(rate)

    entries = []
    for p in profiles:
        chain = kms.hop_chain(p.src, p.dst)
        pairs = [tuple(sorted(h)) for h in zip(chain, chain[1:])]
        # every hop also feeds other consumers; this is the per-pair view
        sup = min(supply.get(pr, 0.0) for pr in pairs)
        entry = ConsumerReportEntry(p.src, p.dst, chain, p.demand_bps, sup)
        if p.demand_bps > sup:
            avail = min(kms.stores[pr].available_bits for pr in pairs)
            entry.time_to_depletion_s = avail / (p.demand_bps - sup)
        entries.append(entry)

    events = []
    for idx, p in enumerate(profiles):
        n = int(math.floor(duration_s / p.rekey_interval_s))
        events.extend((k * p.rekey_interval_s, idx) for k in range(1, n + 1))
    events.sort()

    accrued = {pr: 0.0 for pr in supply}
    last_t = 0.0
    deposit_no = itertools.count()
    for t, idx in events:
        for pr, rate in supply.items():
            accrued[pr] += rate * (t - last_t)
            whole = int(accrued[pr])
            if whole > 0:
                entropy = (int(seed), 0x434F4E, next(deposit_no))
                kms.stores[pr].deposit(whole, SeededMaterial(entropy, whole))
                accrued[pr] -= whole
        last_t = t
        p, entry = profiles[idx], entries[idx]
        entry.requests += 1
        try:
            kms.request_key(p.src, p.dst, p.key_bits_per_rekey)
            entry.delivered += 1
        except DepletedError:
            entry.shortfalls += 1
            if entry.first_shortfall_s is None:
                entry.first_shortfall_s = t
    report.entries = entries
    return report


# -- key delivery service ----------------------------------------------------


class KeyDeliveryService:
    """Newline-delimited JSON key delivery in the shape of ETSI GS QKD 014.

    Requests::

        {"op": "status", "pair": ["N1", "N3"]}
        {"op": "get_key", "pair": ["N1", "N3"], "size_bits": 256}
        {"op": "get_key_with_id", "pair": ["N1", "N3"], "key_id": "key-0000000000"}

    ``get_key`` is called by the first node of the pair (master) and returns
    its copy; the second node fetches the same key once via
    ``get_key_with_id``.  Material is lowercase hex of the packed bits,
    zero-padded to whole bytes.
    """

    def __init__(self, kms: KeyManager):
        self.kms = kms

    def handle(self, request: dict) -> dict:
        try:
            if not isinstance(request, dict):
                raise BadRequestError("request must be an object")
            op = request.get("op")
            pair = request.get("pair")
            if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, str) for x in pair)):
                raise BadRequestError("'pair' must be [src, dst]")
            src, dst = pair
            if op == "status":
                return self._status(src, dst)
            if op == "get_key":
                size = request.get("size_bits")
                if not isinstance(size, int) or isinstance(size, bool):
                    raise BadRequestError("'size_bits' must be an integer")
                d = self.kms.request_key(src, dst, size)
                with self.kms.lock:
                    self.kms.pending[d.key_id] = (src, dst, d.dst_material)
                return {
                    "status": "ok", "key_id": d.key_id, "size_bits": size,
                    "hop_chain": list(d.hop_chain), "key": bits_to_hex(d.src_material),
                }
            if op == "get_key_with_id":
                key_id = request.get("key_id")
                with self.kms.lock:
                    entry = self.kms.pending.get(key_id)
                    if entry is None or entry[:2] != (src, dst):
                        raise BadRequestError(f"no pending key '{key_id}' for {src}-{dst}")
                    del self.kms.pending[key_id]
                return {
                    "status": "ok", "key_id": key_id, "size_bits": int(len(entry[2])),
                    "key": bits_to_hex(entry[2]),
                }
            raise BadRequestError(f"unknown op {op!r}")
        except KMSError as exc:
            return {"status": "error", "error": exc.code, "message": str(exc)}

    def _status(self, src, dst):
        chain = self.kms.hop_chain(src, dst)
        with self.kms.lock:
            avail = [self.kms.store(a, b).available_bits for a, b in zip(chain, chain[1:])]
        return {
            "status": "ok", "pair": [src, dst], "hop_chain": list(chain),
            "available_bits": min(avail), "hop_available_bits": avail,
        }

    def handle_line(self, line: str) -> str:
        try:
            req = json.loads(line)
        except json.JSONDecodeError as exc:
            resp = {"status": "error", "error": "BAD_REQUEST", "message": f"invalid JSON: {exc.msg}"}
        else:
            resp = self.handle(req)
        return json.dumps(resp, sort_keys=True)

    def serve_stream(self, infile, outfile):
        for line in infile:
            if not line.strip():
                continue
            outfile.write(self.handle_line(line) + "\n")
            outfile.flush()

    def serve_unix(self, path: str, stop: threading.Event | None = None):
        """Serve on a Unix socket, one thread per connection, until ``stop`` is set."""
        srv = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        srv.bind(path)
        srv.listen()
        srv.settimeout(0.2)
        threads = []
        try:
            while stop is None or not stop.is_set():
                try:
                    conn, _ = srv.accept()
                except socket.timeout:
                    continue
                th = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
                th.start()
                threads.append(th)
        finally:
            srv.close()
            for th in threads:
                th.join(timeout=1)

    def _serve_conn(self, conn):
        with conn, conn.makefile("r", encoding="utf-8") as rf, conn.makefile("w", encoding="utf-8") as wf:
            self.serve_stream(rf, wf)
