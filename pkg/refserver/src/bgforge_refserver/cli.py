"""Command line entry point: bgforge-refserver --mode mirror --port 8000"""

import argparse

from .app import serve
from .config import DEFAULT_MODEL, MODES, ServerConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bgforge-refserver",
        description="Reference inpainting service (mirror mode needs no model weights)",
    )
    parser.add_argument("--mode", choices=MODES, default="mirror")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--model", default=DEFAULT_MODEL, help="model identifier for real mode")
    parser.add_argument("--device", default="cuda", help="device selector for real mode")
    parser.add_argument("--max-jobs", type=int, default=4, help="concurrent job limit (503 beyond)")
    parser.add_argument("--max-steps", type=int, default=50, help="largest accepted step budget")
    parser.add_argument("--log-level", default="info")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = ServerConfig(
        mode=args.mode,
        model=args.model,
        device=args.device,
        max_jobs=args.max_jobs,
        max_steps=args.max_steps,
    )
    serve(config, host=args.host, port=args.port, log_level=args.log_level)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
