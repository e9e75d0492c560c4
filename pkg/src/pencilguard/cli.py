"""Command-line harness: one subcommand per pipeline stage.

Exit codes: 0 success, 1 config validation failure, 2 runtime failure
(partial outputs are left in place).  Errors are emitted as one JSON
object on stderr so callers can parse them.  Timestamps appear only in
``<out>/pipeline.log``; every other artifact is byte-stable.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import load_config, save_config, validate_config
from .exceptions import PencilGuardError, ValidationError
from .pipeline import STAGES

ENV_WORKERS = "PENCIL_GUARD_WORKERS"


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pencil-guard",
        description="Eigenvalue-based adversarial-example detection "
                    "experiments on audio spectrograms.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name, fn in STAGES.items():
        stage = sub.add_parser(name, help=fn.__doc__.splitlines()[0].lower())
        stage.add_argument("--config", required=True,
                           help="experiment config JSON")
        stage.add_argument("--out", default=None,
                           help="output directory (overrides config)")
        stage.add_argument("--workers", type=int, default=None,
                           help="worker pool width (overrides config and "
                                f"${ENV_WORKERS})")
        stage.add_argument("--seed", type=int, default=None,
                           help="top-level seed (overrides config)")
    return parser


def _resolve_workers(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get(ENV_WORKERS)
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise ValidationError(
            f"{ENV_WORKERS} must be an integer, got {env!r}"
        ) from None


def _setup_logging(log_path):
    root = logging.getLogger("pencilguard")
    root.setLevel(logging.INFO)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    file_handler = logging.FileHandler(log_path)
    file_handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    )
    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(file_handler)
    root.addHandler(stream_handler)


def _emit_error(stage, exc):
    payload = {
        "error": type(exc).__name__,
        "message": str(exc),
        "stage": stage,
    }
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out_dir = args.out
        workers = _resolve_workers(args)
        if workers is not None:
            cfg.workers = workers
        if args.seed is not None:
            cfg.seed = args.seed
        validate_config(cfg)
    except ValidationError as exc:
        _emit_error(args.stage, exc)
        return 1

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _setup_logging(out_dir / "pipeline.log")
    save_config(cfg, out_dir / "config.json")

    log = logging.getLogger("pencilguard.cli")
    try:
        log.info("stage %s starting (out=%s, workers=%d, seed=%d)",
                 args.stage, cfg.out_dir, cfg.workers, cfg.seed)
        STAGES[args.stage](cfg)
        log.info("stage %s done", args.stage)
        return 0
    except ValidationError as exc:
        log.exception("stage %s failed validation", args.stage)
        _emit_error(args.stage, exc)
        return 1
    except (PencilGuardError, OSError) as exc:
        log.exception("stage %s failed", args.stage)
        _emit_error(args.stage, exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI must not traceback
        log.exception("stage %s crashed", args.stage)
        _emit_error(args.stage, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
