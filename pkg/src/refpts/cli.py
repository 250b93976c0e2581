"""Command-line entry point: ``refpts run|sweep|bandwidth-table|decode``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from refpts import wire
from refpts.config import apply_overrides, load_config
from refpts.harness import (
    bandwidth_rows,
    format_bandwidth_table,
    load_grid,
    rows_to_csv,
    run_sweep,
)
from refpts.sim import ConfigError, run_scenario

log = logging.getLogger("refpts")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=int, help="number of frames")
    p.add_argument("--fps", type=float)
    p.add_argument("--tau-d", type=float, dest="tau_d")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--k", type=int)
    p.add_argument("--attrs", choices=("p", "pv", "ps", "pvs"))
    p.add_argument("--fn-rate", type=float, dest="fn_rate")
    p.add_argument("--fp-rate", type=float, dest="fp_rate")
    p.add_argument("--points", type=int, help="query capacity per sender frame")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(
        cfg, seed=args.seed, duration=args.duration, fps=args.fps, tau_d=args.tau_d,
        lam=args.lam, k=args.k, attrs=args.attrs, fn_rate=args.fn_rate,
        fp_rate=args.fp_rate, points=args.points,
    )
    report = run_scenario(cfg)
    paths = report.write(args.out)
    b, m = report.bandwidth, report.metrics
    print(f"report: {paths['report']}")
    print(f"frames: {b['frames']}  seed: {report.seed}")
    print(f"max payload/frame: {b['max_payload_per_frame']} B "
          f"({wire.to_kib(b['max_payload_per_frame']):.1f} KB)")
    print(f"mean traffic: {b['mean_bytes_per_second']:.1f} B/s")
    print(f"fused recall: {m['fused_detection_recall']:.4f}  recall: {m['recall']:.4f}  "
          f"id switches: {m['id_switches']}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    grid = load_grid(args.grid)
    if args.seed is not None:
        grid = type(grid)(grid.base, grid.axes, args.seed, grid.repeats)
    rows = run_sweep(grid, workers=args.workers)
    text = rows_to_csv(rows, delimiter="\t" if args.tsv else ",")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    failed = [r for r in rows if r.get("status") != "ok"]
    for r in failed:
        log.error("cell %s failed: %s", r["cell"], r["status"])
    return 1 if failed else 0


def cmd_bandwidth_table(args: argparse.Namespace) -> int:
    print(format_bandwidth_table(bandwidth_rows(args.fps, args.points)))
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    src = args.input
    if src == "-":
        data = sys.stdin.buffer.read()
    else:
        data = Path(src).read_bytes()
    if args.hex:
        data = bytes.fromhex(data.decode().replace(" ", "").replace("\n", ""))
    msg = wire.decode(data)
    f = msg.flags
    print(f"magic RPF1 version {msg.version} agent {msg.agent_id} frame {msg.frame_index} "
          f"t={msg.timestamp_us}us count {msg.count} embed_dim {msg.embed_dim}")
    print(f"flags velocity={int(f.has_velocity)} size={int(f.has_size)} "
          f"confidence={int(f.has_confidence)} semantics={int(f.has_semantics)} "
          f"record={wire.record_width(f, msg.embed_dim)} B")
    for i in range(min(msg.count, args.limit)):
        parts = [f"p=({', '.join(f'{v:.3f}' for v in msg.positions[i])})"]
        if msg.velocities is not None:
            parts.append(f"v=({', '.join(f'{v:.3f}' for v in msg.velocities[i])})")
        if msg.sizes is not None:
            parts.append(f"s=({', '.join(f'{v:.3f}' for v in msg.sizes[i])})")
        if msg.confidences is not None:
            parts.append(f"c={msg.confidences[i]:.3f}")
        print(f"  [{i}] " + " ".join(parts))
    print(wire.hexdump(data))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="refpts", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and write its report")
    p.add_argument("--config", default="builtin:canonical")
    p.add_argument("--out", default="out")
    _add_overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid")
    p.add_argument("--grid", "--config", dest="grid", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--tsv", action="store_true", help="tab-separated output")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bandwidth-table", help="payload and bandwidth comparison")
    p.add_argument("--fps", type=float, default=5.0)
    p.add_argument("--points", type=int, default=900)
    p.set_defaults(func=cmd_bandwidth_table)

    p = sub.add_parser("decode", help="dump a binary payload")
    p.add_argument("input", help="file path or - for stdin")
    p.add_argument("--hex", action="store_true", help="input is a hex string")
    p.add_argument("--limit", type=int, default=20)
    p.set_defaults(func=cmd_decode)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"refpts: config error: {exc}", file=sys.stderr)
        return 2
    except wire.WireError as exc:
        print(f"refpts: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"refpts: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
