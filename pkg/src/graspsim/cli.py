"""Command line interface.

    graspsim run --scenario s.json [--seed N] [--headless]
                 [--metrics-out m.csv] [--log-out run.ndjson]
    graspsim serve --port 7600 --scenario s.json [--ws]
    graspsim batch --dir scenarios/ --metrics-out metrics.csv

Exit codes: 0 ok (including failed grasps, which are outcome statuses),
2 scenario/config error, 3 internal failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ParseError, SchemaError
from .config import load_scenario


def _cmd_run(args) -> int:
    config = load_scenario(args.scenario)
    if args.seed is not None:
        raw = config.effective()
        raw["seed"] = args.seed
        from .config import parse_scenario

        config = parse_scenario(raw, config.path)
    if not config.prompt_script:
        raise SchemaError("prompt_script: required for a run (nothing would select a target)")
    from .runner import MetricsReport, run_scenario

    row = run_scenario(config, log_path=args.log_out, realtime=not args.headless)
    print(json.dumps(row, sort_keys=True))
    if args.metrics_out:
        report = MetricsReport([row])
        report.to_csv(args.metrics_out)
    return 0


def _cmd_serve(args) -> int:
    config = load_scenario(args.scenario)
    from .service import serve

    kind = "websocket" if args.ws else "ndjson/tcp"
    print(f"serving {config.name} on {args.host}:{args.port} ({kind})", flush=True)
    try:
        serve(config, args.port, host=args.host, websocket=args.ws, log_dir=args.log_dir)
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_batch(args) -> int:
    from .runner import run_batch

    report = run_batch(args.dir, metrics_out=args.metrics_out, log_dir=args.log_dir)
    for row in report.rows:
        print(json.dumps(row, sort_keys=True))
    print(f"success rate: {report.success_rate:.2%} ({len(report.rows)} scenarios)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspsim", description="Segmentation-driven mobile grasping simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one scenario headlessly")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--headless", action="store_true", help="run as fast as possible (no real-time pacing)")
    run.add_argument("--metrics-out", default=None)
    run.add_argument("--log-out", default=None)
    run.set_defaults(func=_cmd_run)

    serve_p = sub.add_parser("serve", help="serve live sessions for the operator console")
    serve_p.add_argument("--port", type=int, required=True)
    serve_p.add_argument("--scenario", required=True)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--ws", action="store_true", help="speak WebSocket instead of raw NDJSON/TCP")
    serve_p.add_argument("--log-dir", default=None, help="write one session log per connection here")
    serve_p.set_defaults(func=_cmd_serve)

    batch = sub.add_parser("batch", help="run every scenario in a directory")
    batch.add_argument("--dir", required=True)
    batch.add_argument("--metrics-out", default=None)
    batch.add_argument("--log-dir", default=None)
    batch.set_defaults(func=_cmd_batch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
