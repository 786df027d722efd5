"""Command line front end.

    qkdnet validate <topology>
    qkdnet sweep --config <file> --out <dir>
    qkdnet simulate --config <file> --days <float> --seed <u64> --out <dir>
    qkdnet relay --config <file> --src <node> --dst <node> --bits <n>
    qkdnet kms-serve --config <file> --socket <path|->

Exit status 0 on success, 2 for configuration errors, 3 for runtime
failures such as key depletion or an unusable link model.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_run_config, parse_seed
from .keyrate import KeyRateError, asymptotic_skr, sweep
from .kms import DepletedError, KeyDeliveryService, KeyManager, KMSError
from .linkmodel import ChannelState, LinkModelError
from .simnet import run_network
from .topology import (
    TopologyError,
    bundled_path,
    load_topology,
    parse_topology,
    read_document,
    validate,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SWEEP_HEADER = ("loss_db", "skr_bps", "qber", "skr_asymptotic_bps")
SERIES_HEADER = ("timestamp_s", "skr_bps", "qber", "secret_bits")
SUMMARY_HEADER = (
    "link_id", "loss_db", "n_blocks", "skr_mean_bps", "skr_std_bps",
    "qber_mean", "qber_std", "total_secret_bits",
)


def fmt(x) -> str:
    """Shortest round-trip text for a CSV cell."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _resolve_topology_arg(arg: str) -> Path:
    p = Path(arg)
    if not p.exists() and bundled_path(arg).exists():
        return bundled_path(arg)
    return p


def cmd_validate(args) -> int:
    path = _resolve_topology_arg(args.topology)
    if not path.exists():
        print(f"error: {path} does not exist", file=sys.stderr)
        return EXIT_CONFIG
    try:
        topo = parse_topology(read_document(path))
    except TopologyError as exc:
        print(f"error [{exc.kind}] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    diags = validate(topo)
    if not diags:
        print("OK")
        return EXIT_OK
    for d in diags:
        print(d)
    return EXIT_CONFIG


def sweep_rows(cfg):
    points = sweep(cfg.protocol, cfg.sweep_grid)
    return [
        (p.loss_db, p.skr_bps, p.qber, asymptotic_skr(cfg.protocol, ChannelState(p.loss_db)))
        for p in points
    ]


def cmd_sweep(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out) if args.out else cfg.out
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep_rows(cfg)
    write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} points)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config)
    days = cfg.days if args.days is None else args.days
    if not days > 0:
        raise ConfigError("simulated duration must be positive", "--days")
    seed = cfg.seed if args.seed is None else parse_seed(args.seed)
    out = Path(args.out) if args.out else cfg.out
    topo = load_topology(cfg.topology)
    run = run_network(topo, cfg.params_per_link(topo), days * 86400.0, seed=seed, noise=cfg.noise)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for link in topo.links:
        s = run.series[link.id]
        write_csv(
            out / f"series_{link.id}.csv", SERIES_HEADER,
            zip(s.timestamps, s.skr_bps, s.qber, s.secret_bits),
        )
        summary.append((
            link.id, link.total_loss_db, len(s),
            s.skr_bps.mean() if len(s) else 0.0, s.skr_bps.std() if len(s) else 0.0,
            s.qber.mean() if len(s) else 0.0, s.qber.std() if len(s) else 0.0,
            s.total_bits,
        ))
    write_csv(out / "summary.csv", SUMMARY_HEADER, summary)
    means = [row[3] for row in summary]
    print(f"simulated {days:g} days, seed {seed}, {len(topo.links)} links")
    for row in summary:
        print(f"  {row[0]:>8}  {row[1]:6.2f} dB  {row[2]:6d} blocks  SKR {row[3] / 1e3:7.3f} kbps  QBER {row[5]:.4f}")
    print(f"mean SKR over all links: {np.mean(means) / 1e3:.3f} kbps")
    return EXIT_OK


def _warm_kms(cfg, seed):
    topo = load_topology(cfg.topology)
    run = run_network(
        topo, cfg.params_per_link(topo), cfg.warmup_hours * 3600.0, seed=seed, noise=cfg.noise
    )
    return topo, run.kms


def cmd_relay(args) -> int:
    cfg = load_run_config(args.config)
    seed = cfg.seed if args.seed is None else parse_seed(args.seed)
    _, kms = _warm_kms(cfg, seed)
    if args.bits <= 0:
        print("BAD_REQUEST: bits must be positive", file=sys.stderr)
        return EXIT_CONFIG
    for i in range(args.repeat):
        before = kms.balances()
        try:
            d = kms.request_key(args.src, args.dst, args.bits)
        except DepletedError as exc:
            print(f"DEPLETED: {exc}")
            _print_balances("balances (unchanged)", before, kms.balances())
            return EXIT_RUNTIME
        except KMSError as exc:
            print(f"{exc.code}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"key_id {d.key_id}  hop chain {' -> '.join(d.hop_chain)}  ({len(d.hop_chain) - 1} hop(s))")
        _print_balances("balances", before, kms.balances())
    return EXIT_OK


def _print_balances(title, before, after):
    print(f"{title}:")
    for k in before:
        print(f"  {k:>6}  {before[k]:>14d} -> {after[k]:>14d}")


def cmd_kms_serve(args) -> int:
    cfg = load_run_config(args.config)
    seed = cfg.seed if args.seed is None else parse_seed(args.seed)
    _, kms = _warm_kms(cfg, seed)
    service = KeyDeliveryService(kms)
    if args.socket == "-":
        service.serve_stream(sys.stdin, sys.stdout)
    else:
        print(f"serving key delivery on {args.socket}", file=sys.stderr)
        try:
            service.serve_unix(args.socket)
        except KeyboardInterrupt:
            pass
        finally:
            Path(args.socket).unlink(missing_ok=True)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qkdnet", description="QKD ring network simulator")
    sub = p.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("validate", help="check a topology document")
    v.add_argument("topology", help="topology file or bundled name (nicosia.ring)")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("sweep", help="SKR and QBER versus channel loss")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("simulate", help="stochastic multi-day simulation of all links")
    m.add_argument("--config", required=True)
    m.add_argument("--days", type=float, default=None)
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("relay", help="deliver a key between two nodes")
    r.add_argument("--config", required=True)
    r.add_argument("--src", required=True)
    r.add_argument("--dst", required=True)
    r.add_argument("--bits", type=int, required=True)
    r.add_argument("--repeat", type=int, default=1, help="issue the request this many times")
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(func=cmd_relay)

    k = sub.add_parser("kms-serve", help="serve the key delivery protocol")
    k.add_argument("--config", required=True)
    k.add_argument("--socket", required=True, help="Unix socket path, or - for stdin/stdout")
    k.add_argument("--seed", type=int, default=None)
    k.set_defaults(func=cmd_kms_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TopologyError, ConfigError) as exc:
        print(f"error [{exc.kind}] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LinkModelError, KeyRateError, KMSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
