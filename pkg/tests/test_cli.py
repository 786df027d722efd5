import csv
import json
import subprocess
import sys

import pytest

from qkdnet.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, SERIES_HEADER, SUMMARY_HEADER, SWEEP_HEADER, main
from qkdnet.keyrate import sweep
from qkdnet.topology import bundled_path


@pytest.fixture
def config(tmp_path):
    doc = json.loads(bundled_path("nicosia.run").read_text())
    doc["topology"] = str(bundled_path("nicosia.ring"))
    doc["sweep"] = {"start": 0, "stop": 4, "step": 1}
    doc["warmup_hours"] = 0.1
    p = tmp_path / "run.json"
    p.write_text(json.dumps(doc))
    return p


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_validate_bundled(capsys):
    assert main(["validate", "nicosia.ring"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "OK"


def test_validate_reports_diagnostics(tmp_path, capsys):
    doc = json.loads(bundled_path("nicosia.ring").read_text())
    doc["quantum_links"][3] = {"id": "N1-N4", "tx": "N1", "rx": "N4", "via": ["ODF1", "ODF3"]}
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert main(["validate", str(p)]) == EXIT_CONFIG
    assert "[direction] N1-N4" in capsys.readouterr().out


def test_validate_parse_error_location(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "nodes": [,]\n}\n')
    assert main(["validate", str(p)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_validate_missing_file(tmp_path):
    assert main(["validate", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_sweep_csv_roundtrip(config, tmp_path):
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(config), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "sweep.csv")
    assert tuple(rows[0]) == SWEEP_HEADER
    assert [float(r[0]) for r in rows[1:]] == [0.0, 1.0, 2.0, 3.0, 4.0]
    ref = sweep(json_protocol(config), [0.0, 1.0, 2.0, 3.0, 4.0])
    for row, pt in zip(rows[1:], ref):
        assert float(row[1]) == pt.skr_bps
        assert float(row[2]) == pt.qber


def json_protocol(config):
    from qkdnet.config import load_run_config
    return load_run_config(config).protocol


def test_sweep_rerun_identical(config, tmp_path):
    main(["sweep", "--config", str(config), "--out", str(tmp_path / "a")])
    main(["sweep", "--config", str(config), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/sweep.csv").read_bytes() == (tmp_path / "b/sweep.csv").read_bytes()


def test_sweep_single_point(config, tmp_path):
    doc = json.loads(config.read_text())
    doc["sweep"] = [3.0]
    config.write_text(json.dumps(doc))
    assert main(["sweep", "--config", str(config), "--out", str(tmp_path)]) == EXIT_OK
    assert len(read_csv(tmp_path / "sweep.csv")) == 2


@pytest.mark.parametrize("sweep_spec", [[], [2.0, 1.0], {"start": 0, "stop": 5, "step": 0}])
def test_sweep_bad_grid(config, tmp_path, sweep_spec):
    doc = json.loads(config.read_text())
    doc["sweep"] = sweep_spec
    config.write_text(json.dumps(doc))
    assert main(["sweep", "--config", str(config), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_config_unknown_field(config, tmp_path):
    doc = json.loads(config.read_text())
    doc["colour"] = "blue"
    config.write_text(json.dumps(doc))
    assert main(["sweep", "--config", str(config), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_simulate_outputs_and_determinism(config, tmp_path):
    args = ["simulate", "--config", str(config), "--days", "0.02", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["series_N1-N2.csv", "series_N2-N3.csv", "series_N3-N4.csv", "series_N4-N1.csv", "summary.csv"]
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert tuple(read_csv(tmp_path / "a/summary.csv")[0]) == SUMMARY_HEADER
    assert tuple(read_csv(tmp_path / "a/series_N1-N2.csv")[0]) == SERIES_HEADER


def test_simulate_seed_changes_output(config, tmp_path):
    base = ["simulate", "--config", str(config), "--days", "0.02"]
    main(base + ["--seed", "1", "--out", str(tmp_path / "a")])
    main(base + ["--seed", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/summary.csv").read_bytes() != (tmp_path / "b/summary.csv").read_bytes()


@pytest.mark.parametrize("extra", [["--days", "0"], ["--days", "-1"], ["--seed", "-5"]])
def test_simulate_rejects_bad_arguments(config, tmp_path, extra):
    args = ["simulate", "--config", str(config), "--out", str(tmp_path)] + extra
    assert main(args) == EXIT_CONFIG


def test_relay_reports_chain_and_balances(config, capsys):
    assert main(["relay", "--config", str(config), "--src", "N1", "--dst", "N3", "--bits", "256"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "N1 -> N2 -> N3" in out and "(2 hop(s))" in out
    deltas = {}
    for line in out.splitlines()[2:]:
        pair, before, _, after = line.split()
        deltas[pair] = int(before) - int(after)
    assert deltas == {"N1-N2": 256, "N2-N3": 256, "N3-N4": 0, "N1-N4": 0}


def test_relay_bad_size(config):
    assert main(["relay", "--config", str(config), "--src", "N1", "--dst", "N3", "--bits", "0"]) == EXIT_CONFIG


def test_relay_unknown_node(config):
    assert main(["relay", "--config", str(config), "--src", "N1", "--dst", "N7", "--bits", "8"]) == EXIT_CONFIG


def test_relay_depletion_exit_code(config, capsys):
    rc = main(["relay", "--config", str(config), "--src", "N1", "--dst", "N3", "--bits", "10000000000"])
    assert rc == EXIT_RUNTIME
    assert "DEPLETED" in capsys.readouterr().out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "qkdnet", "validate", "nicosia.ring"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "OK"


def test_kms_serve_stdio(config):
    reqs = "\n".join(json.dumps(r) for r in [
        {"op": "status", "pair": ["N1", "N3"]},
        {"op": "get_key", "pair": ["N1", "N3"], "size_bits": 128},
    ]) + "\n"
    r = subprocess.run(
        [sys.executable, "-m", "qkdnet", "kms-serve", "--config", str(config), "--socket", "-"],
        input=reqs, capture_output=True, text=True, timeout=120,
    )
    assert r.returncode == 0, r.stderr
    status, got = (json.loads(x) for x in r.stdout.splitlines())
    assert status["hop_chain"] == ["N1", "N2", "N3"]
    assert got["status"] == "ok" and len(got["key"]) == 32
