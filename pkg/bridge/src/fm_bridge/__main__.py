"""Run the bridge under uvicorn: `python -m fm_bridge --port 8191`."""

from __future__ import annotations

import argparse

from .models import BridgeConfig
from .service import create_app


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fm-bridge")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8191)
    parser.add_argument("--segmenter", default="stub",
                        help="stub | none | import:<module>:<factory>")
    parser.add_argument("--detector", default="stub",
                        help="stub | none | import:<module>:<factory>")
    parser.add_argument("--segmenter-checkpoint")
    parser.add_argument("--detector-checkpoint")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-side", type=int, default=1024)
    return parser


def main(argv: list[str] | None = None) -> int:
    import uvicorn

    args = build_parser().parse_args(argv)
    config = BridgeConfig(
        segmenter=args.segmenter,
        detector=args.detector,
        segmenter_checkpoint=args.segmenter_checkpoint,
        detector_checkpoint=args.detector_checkpoint,
        device=args.device,
        max_image_side=args.max_side,
        port=args.port,
    )
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
