"""Command-line entry point: ``phantomnet run|bench-spoof|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phantomnet", description="In-network ICS honeypot simulator")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out-dir", type=Path, default=Path("out"), help="directory for output files (default: out)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario", type=Path)

    b = sub.add_parser("bench-spoof", help="measure spoof-path throughput")
    b.add_argument("--packet-size", type=int, default=1024)
    b.add_argument("--points", type=int, default=200)
    b.add_argument("--duration", type=float, default=3.0)
    b.add_argument("--workers", type=int, default=1)

    rep = sub.add_parser("report", help="summarize a metrics.json into CSV or JSON")
    rep.add_argument("metrics", type=Path)
    rep.add_argument("--format", choices=["csv", "json"], default="csv")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "run":
            sc = harness.load_scenario(args.scenario, seed=args.seed)
            result = harness.run(sc, args.out_dir)
            c = result.metrics.counters
            print(f"{sc.name} seed={sc.seed}: {c['events']} events, {c['quarantined']} quarantined, {c['spoofed_responses']} spoofed responses")
            for f in result.files.values():
                print(f"wrote {f}")
        elif args.verb == "bench-spoof":
            res = harness.bench_spoof(args.packet_size, args.points, args.duration, args.workers, args.seed or 0)
            args.out_dir.mkdir(parents=True, exist_ok=True)
            path = args.out_dir / "bench.json"
            path.write_text(json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
            print(
                f"{res.workers} worker(s): {res.packets_per_second:.0f} pkts/s, "
                f"mean {res.latency_mean * 1e3:.3f} ms, p99 {res.latency_p99 * 1e3:.3f} ms, "
                f"{res.framed_octets} octets framed ({res.mbps:.2f} Mbps derived)"
            )
            print(f"wrote {path}")
        else:
            metrics = harness.MetricsReport.from_dict(json.loads(args.metrics.read_text(encoding="utf-8")))
            args.out_dir.mkdir(parents=True, exist_ok=True)
            path = harness.report(metrics, args.out_dir / f"report.{args.format}", args.format)
            print(f"wrote {path}")
    except harness.ConfigError as exc:
        print(f"config error at {exc.path}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
