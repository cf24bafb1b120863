"""Command line entry point: ``zrpfluct <command> --config run.yaml``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, RunConfig
from .gibbs import FrameConditionError
from .harness import (COMMANDS, AcceptanceFailure, Context, Output, ValidationFailure, cmd_validate)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_STATISTICAL = 0, 1, 2, 3

log = logging.getLogger("zrpfluct")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zrpfluct", description="Multi-species long-jump zero range fluctuations.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML or JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides sim.seed)")
    p.add_argument("--replicas", type=int, help="number of replicas (overrides sim.replicas)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replicas")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must fit in an unsigned 64-bit integer")
            cfg = cfg.override(**{"sim.seed": args.seed})
        if args.replicas is not None:
            if args.replicas < 1:
                raise ConfigError("--replicas must be positive")
            cfg = cfg.override(**{"sim.replicas": args.replicas})
        if args.out is not None:
            cfg = cfg.override(**{"output.dir": args.out})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    sim = cfg.sim
    ctx = Context(cfg, sim["seed"], sim["replicas"], max(1, args.threads))
    out = Output(cfg.data["output"]["dir"], cfg, args.command, ctx.seed, ctx.replicas)
    try:
        if args.command == "validate":
            rows = cmd_validate(ctx, out)
            for check, status, detail in rows:
                print(f"{check:18s} {status:8s} {detail}")
            return EXIT_INVALID if any(r[1] == "fail" for r in rows) else EXIT_OK
        COMMANDS[args.command](ctx, out)
    except (ValidationFailure, ConfigError, FrameConditionError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AcceptanceFailure as exc:
        print(f"statistical acceptance failure: {exc}", file=sys.stderr)
        return EXIT_STATISTICAL
    except Exception as exc:  # noqa: BLE001 - reported as a runtime error
        log.debug("runtime error", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in out.files:
        log.info("wrote %s", f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
