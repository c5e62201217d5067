"""Command-line entry points.

  vigil serve     --config PATH [--port N]
  vigil replay    --trace PATH --speed F [--config PATH]
  vigil gen-trace --kind {hr-episode|crash|nominal} --seed N --duration-s D --out PATH
  vigil decode    --in PATH
"""

from __future__ import annotations

import argparse
import json
import math
import socket
import sys
from pathlib import Path

from .gateway import ConfigError, Gateway, ServiceConfig
from .protocol import Deframer
from .simulate import EpisodeSpec, TraceError, generate_trace, write_trace


def _load_config(path: str | None) -> ServiceConfig:
    if path:
        return ServiceConfig.from_file(path)
    return ServiceConfig()


def _parse_speed(text: str) -> float:
    if text.lower() in ("inf", "infinity", "max"):
        return math.inf
    return float(text)


def cmd_serve(args) -> int:
    config = _load_config(args.config)
    if args.port is not None:
        config.port = args.port
        if not 1 <= config.port <= 65535:
            raise ConfigError(f"port {config.port} outside 1-65535")
    # Preflight the bind so a taken port fails fast with a clear message.
    try:
        probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((args.host, config.port))
        probe.close()
    except OSError as exc:
        raise ConfigError(f"cannot bind {args.host}:{config.port}: {exc}") from exc

    import uvicorn

    from .webapi import create_app

    gateway = Gateway(config)
    gateway.start()
    console_dir = args.console_dir
    if console_dir is None:
        candidate = Path("frontend/dist")
        console_dir = str(candidate) if candidate.is_dir() else None
    app = create_app(gateway, console_dir=console_dir)
    try:
        uvicorn.run(app, host=args.host, port=config.port, log_level="warning")
    finally:
        gateway.stop()
    return 0


def cmd_replay(args) -> int:
    config = _load_config(args.config)
    gateway = Gateway(config)
    gateway.start()
    try:
        report = gateway.replay_file(args.trace, _parse_speed(args.speed))
    finally:
        gateway.stop()
    print(json.dumps({"report": report, "state": gateway.status()}, indent=2))
    return 0


def cmd_gen_trace(args) -> int:
    if args.kind == "nominal":
        spec = EpisodeSpec(kind="nominal")
    elif args.kind == "crash":
        spec = EpisodeSpec(kind="crash", onset_s=args.onset_s, duration_s=args.episode_s)
    else:  # hr-episode
        hr_kind = "tachy" if args.peak_bpm >= 75 else "brady"
        spec = EpisodeSpec(
            kind=hr_kind, onset_s=args.onset_s, duration_s=args.episode_s, peak_bpm=args.peak_bpm
        )
    records = generate_trace(spec, seed=args.seed, duration_s=args.duration_s)
    write_trace(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_decode(args) -> int:
    raw = Path(args.infile).read_bytes()
    text = raw.decode("ascii", errors="ignore").strip()
    if text and all(c in "0123456789abcdefABCDEF \t\r\n" for c in text):
        data = bytes.fromhex("".join(text.split()))
    else:
        data = raw
    deframer = Deframer()
    packets = []
    for off in range(0, len(data), 16):
        packets.extend(deframer.feed(data[off : off + 16]))
    for p in packets:
        print(
            f"bpm={p.heart_rate_bpm} battery={p.battery_pct}% beats={p.heartbeat_count} "
            f"speed={p.speed_ms:.2f} m/s distance={p.distance_m:.2f} m"
        )
    s = deframer.stats
    print(f"packets_ok={s.packets_ok} crc_failures={s.crc_failures} resyncs={s.resyncs}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vigil", description="Emergency tracking gateway")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("serve", help="run the HTTP/WS gateway")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--console-dir", default=None, help="static console assets to serve at /")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("replay", help="replay a trace through an in-process gateway")
    p.add_argument("--trace", required=True)
    p.add_argument("--speed", default="inf", help="speed factor, or 'inf'")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("gen-trace", help="generate a deterministic sensor trace")
    p.add_argument("--kind", choices=["hr-episode", "crash", "nominal"], required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--duration-s", type=int, default=60)
    p.add_argument("--out", required=True)
    p.add_argument("--peak-bpm", type=int, default=125)
    p.add_argument("--onset-s", type=int, default=20)
    p.add_argument("--episode-s", type=int, default=30, help="episode length in seconds")
    p.set_defaults(fn=cmd_gen_trace)

    p = sub.add_parser("decode", help="dump packets from a hex or raw byte capture")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(fn=cmd_decode)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TraceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
