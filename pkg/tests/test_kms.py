import io
import json
import socket
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdnet.kms import (
    ArrayMaterial,
    BadRequestError,
    ConsumerProfile,
    DepletedError,
    KeyDeliveryService,
    KeyManager,
    KeyStore,
    RelayTicket,
    SeededMaterial,
    UnknownNodeError,
    bits_to_hex,
    deposit,
    request_key,
    run_consumers,
)

RING = ("N1", "N2", "N3", "N4")
PAIRS = ("N1-N2", "N2-N3", "N3-N4", "N1-N4")


def byte_bits(value):
    return np.unpackbits(np.array([value], dtype=np.uint8))


def filled(bits=100_000, seed=0):
    kms = KeyManager(RING, seed=seed)
    for i, a in enumerate(RING):
        b = RING[(i + 1) % 4]
        kms.deposit(a, b, bits, SeededMaterial((seed, i), bits))
    return kms


def test_store_deposit_and_conservation():
    s = KeyStore(("N2", "N1"))
    assert s.pair == ("N1", "N2")
    deposit(s, 1000, SeededMaterial((1,), 1000))
    assert s.available_bits == 1000
    blocks = s.reserve(300)
    assert s.available_bits == 700 and s.reserved_bits == 300
    s.release(blocks)
    assert s.available_bits == 1000
    s.commit(s.reserve(256))
    assert s.available_bits == 744 and s.consumed_bits == 256
    assert s.check_conservation()


def test_store_rejects_bad_deposit():
    s = KeyStore(("N1", "N2"))
    with pytest.raises(BadRequestError):
        s.deposit(0, SeededMaterial((1,), 0))
    with pytest.raises(BadRequestError):
        s.deposit(10, SeededMaterial((1,), 5))


def test_reserve_splits_blocks_fifo():
    s = KeyStore(("N1", "N2"))
    s.deposit(8, ArrayMaterial(byte_bits(0xF0)))
    s.deposit(8, ArrayMaterial(byte_bits(0x0F)))
    out = s.commit(s.reserve(12))
    assert out.tolist() == byte_bits(0xF0).tolist() + [0, 0, 0, 0]
    assert s.commit(s.reserve(4)).tolist() == [1, 1, 1, 1]


def test_direct_request_uses_hop_key():
    kms = KeyManager(RING)
    kms.deposit("N1", "N2", 1000, SeededMaterial((3,), 1000))
    d = kms.request_key("N1", "N2", 256)
    assert d.hop_chain == ("N1", "N2") and not d.relayed
    assert np.array_equal(d.src_material, d.dst_material)
    assert np.array_equal(d.src_material, SeededMaterial((3,), 1000).bits(0, 256))
    assert kms.balances()["N1-N2"] == 744


def test_relay_routes_shortest_arc():
    kms = filled()
    assert kms.hop_chain("N1", "N3") == ("N1", "N2", "N3")
    assert kms.hop_chain("N3", "N1") == ("N3", "N4", "N1")
    assert kms.hop_chain("N1", "N4") == ("N1", "N4")
    assert kms.hop_chain("N4", "N1") == ("N4", "N1")


def test_relay_consumes_each_hop():
    kms = filled()
    before = kms.balances()
    d = kms.request_key("N1", "N3", 256)
    after = kms.balances()
    assert d.relayed
    assert np.array_equal(d.src_material, d.dst_material)
    assert before["N1-N2"] - after["N1-N2"] == 256
    assert before["N2-N3"] - after["N2-N3"] == 256
    assert before["N3-N4"] == after["N3-N4"] and before["N1-N4"] == after["N1-N4"]
    assert kms.exposure["N2"] == [d.key_id]


def test_xor_relay_worked_example():
    kms = KeyManager(RING)
    kms.deposit("N1", "N2", 8, ArrayMaterial(byte_bits(0x3C)))
    kms.deposit("N2", "N3", 8, ArrayMaterial(byte_bits(0x0F)))
    ticket = RelayTicket("N1", "N3", ("N1", "N2", "N3"), "k", 8)
    d = kms.relay_key(ticket, key=byte_bits(0xA5))
    assert [bits_to_hex(w) for w in d.wire_words] == ["99", "aa"]
    assert bits_to_hex(d.dst_material) == "a5"
    # the trusted relay sees both hop keys and can therefore read K
    assert bits_to_hex(d.wire_words[0] ^ byte_bits(0x3C)) == "a5"


def test_depletion_is_atomic():
    kms = KeyManager(RING)
    kms.deposit("N1", "N2", 1000, SeededMaterial((1,), 1000))
    kms.deposit("N2", "N3", 100, SeededMaterial((2,), 100))
    before = kms.balances()
    with pytest.raises(DepletedError) as ei:
        kms.request_key("N1", "N3", 256)
    assert ei.value.pair == ("N2", "N3")
    assert kms.balances() == before
    assert kms.check_conservation()
    assert all(s.reserved_bits == 0 for s in kms.stores.values())


def test_bad_requests():
    kms = filled()
    with pytest.raises(BadRequestError):
        kms.request_key("N1", "N3", 0)
    with pytest.raises(BadRequestError):
        kms.request_key("N1", "N1", 8)
    with pytest.raises(UnknownNodeError):
        kms.request_key("N1", "N9", 8)
    with pytest.raises(BadRequestError):
        kms.relay_key(RelayTicket("N1", "N3", ("N1", "N2", "N3"), "x", 8), key=np.zeros(4, np.uint8))
    assert kms.check_conservation()


def test_wrapper_matches_method():
    a, b = filled(seed=4), filled(seed=4)
    assert np.array_equal(
        request_key(a, "N2", "N4", 64).src_material, b.request_key("N2", "N4", 64).src_material
    )


def test_same_seed_same_keys():
    a, b = filled(seed=9), filled(seed=9)
    for src, dst in [("N1", "N3"), ("N2", "N4"), ("N4", "N1")]:
        da, db = a.request_key(src, dst, 128), b.request_key(src, dst, 128)
        assert da.key_id == db.key_id
        assert np.array_equal(da.src_material, db.src_material)


@given(st.lists(
    st.tuples(st.sampled_from(RING), st.sampled_from(RING), st.integers(1, 3000)), max_size=60,
))
@settings(max_examples=60, deadline=None)
def test_random_requests_property(reqs):
    kms = filled(bits=40_000)
    for src, dst, n in reqs:
        if src == dst:
            continue
        before = kms.balances()
        try:
            d = kms.request_key(src, dst, n)
        except DepletedError:
            assert kms.balances() == before
            continue
        assert np.array_equal(d.src_material, d.dst_material)
        after = kms.balances()
        hop_pairs = {"-".join(sorted(h)) for h in zip(d.hop_chain, d.hop_chain[1:])}
        for pair in PAIRS:
            assert before[pair] - after[pair] == (n if pair in hop_pairs else 0)
    assert kms.check_conservation()


def test_concurrent_requests_conserve():
    kms = filled(bits=200_000)
    errors = []

    def worker(k):
        rng = np.random.default_rng(k)
        for _ in range(200):
            i, j = rng.choice(4, 2, replace=False)
            try:
                d = kms.request_key(RING[i], RING[j], int(rng.integers(1, 500)))
                if not np.array_equal(d.src_material, d.dst_material):
                    errors.append("mismatch")
            except DepletedError:
                pass

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert kms.check_conservation()
    for s in kms.stores.values():
        assert s.deposited_bits == s.available_bits + s.consumed_bits


def test_encryptor_rekeys_never_starve():
    kms = filled(bits=10_000)
    profiles = [ConsumerProfile(a, RING[(i + 1) % 4]) for i, a in enumerate(RING)]
    assert profiles[0].demand_bps == pytest.approx(4.2667, abs=1e-4)
    report = run_consumers(kms, profiles, 86400.0, {p: 2400.0 for p in PAIRS})
    assert report.total_shortfalls == 0
    assert all(e.delivered == 1440 for e in report.entries)
    assert all(e.time_to_depletion_s is None for e in report.entries)
    assert kms.check_conservation()


def test_consumers_without_generation_deplete():
    kms = filled(bits=2560)
    report = run_consumers(kms, [ConsumerProfile("N1", "N2")], 3600.0)
    (e,) = report.entries
    assert e.time_to_depletion_s == pytest.approx(2560 / (256 / 60))
    assert e.delivered == 10 and e.shortfalls == 50
    assert e.first_shortfall_s == pytest.approx(660.0)


def test_consumers_zero_duration():
    kms = filled()
    report = run_consumers(kms, [ConsumerProfile("N1", "N2")], 0.0)
    assert report.entries == [] and report.total_shortfalls == 0


def _ask(service, **req):
    return json.loads(service.handle_line(json.dumps(req)))


def test_service_get_key_roundtrip():
    svc = KeyDeliveryService(filled())
    st0 = _ask(svc, op="status", pair=["N1", "N3"])
    assert st0["hop_chain"] == ["N1", "N2", "N3"] and st0["available_bits"] == 100_000
    got = _ask(svc, op="get_key", pair=["N1", "N3"], size_bits=256)
    assert got["status"] == "ok" and len(got["key"]) == 64
    peer = _ask(svc, op="get_key_with_id", pair=["N1", "N3"], key_id=got["key_id"])
    assert peer["key"] == got["key"]
    again = _ask(svc, op="get_key_with_id", pair=["N1", "N3"], key_id=got["key_id"])
    assert again["error"] == "BAD_REQUEST"
    assert _ask(svc, op="status", pair=["N1", "N3"])["available_bits"] == 100_000 - 256


@pytest.mark.parametrize("req,code", [
    (dict(op="get_key", pair=["N1", "N9"], size_bits=8), "UNKNOWN_NODE"),
    (dict(op="get_key", pair=["N1", "N3"], size_bits=0), "BAD_REQUEST"),
    (dict(op="get_key", pair=["N1", "N3"], size_bits=10**9), "DEPLETED"),
    (dict(op="explode", pair=["N1", "N3"]), "BAD_REQUEST"),
    (dict(op="status"), "BAD_REQUEST"),
])
def test_service_errors(req, code):
    svc = KeyDeliveryService(filled())
    assert _ask(svc, **req)["error"] == code


def test_service_stream_and_bad_json():
    svc = KeyDeliveryService(filled())
    out = io.StringIO()
    svc.serve_stream(io.StringIO('not json\n\n{"op": "status", "pair": ["N2", "N4"]}\n'), out)
    lines = [json.loads(x) for x in out.getvalue().splitlines()]
    assert lines[0]["error"] == "BAD_REQUEST"
    assert lines[1]["hop_chain"] == ["N2", "N3", "N4"]


def test_service_unix_socket(tmp_path):
    path = str(tmp_path / "kms.sock")
    svc = KeyDeliveryService(filled())
    stop = threading.Event()
    th = threading.Thread(target=svc.serve_unix, args=(path, stop), daemon=True)
    th.start()
    for _ in range(50):
        try:
            c = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            c.connect(path)
            break
        except (FileNotFoundError, ConnectionRefusedError):
            time.sleep(0.05)
    with c, c.makefile("rw", encoding="utf-8") as f:
        f.write(json.dumps({"op": "get_key", "pair": ["N4", "N2"], "size_bits": 16}) + "\n")
        f.flush()
        resp = json.loads(f.readline())
    stop.set()
    th.join(timeout=2)
    assert resp["status"] == "ok" and len(resp["key"]) == 4
