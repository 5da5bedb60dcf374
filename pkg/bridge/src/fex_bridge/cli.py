"""fex-bridge entry point: serve FEX0 over stdin/stdout."""

from __future__ import annotations

import argparse
import sys

from . import descriptor, protocol


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fex-bridge", description=__doc__)
    parser.add_argument("--mode", choices=["builtin-equiv", "cnn"], default="builtin-equiv")
    parser.add_argument("--model", default="resnet18", help="torchvision model for cnn mode")
    args = parser.parse_args(argv)

    if args.mode == "builtin-equiv":
        return protocol.serve(descriptor.describe, descriptor.DIM)

    try:
        from .cnn import CnnExtractor
        extractor = CnnExtractor(args.model)
    except Exception as exc:
        print(f"fex-bridge: cannot start cnn mode: {exc}", file=sys.stderr)
        return 1
    return protocol.serve(extractor, extractor.dim)


if __name__ == "__main__":
    sys.exit(main())
