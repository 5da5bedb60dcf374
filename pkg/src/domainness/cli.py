"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 subprocess-extractor
error. Option precedence: flags > --config JSON file > built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline as pl
from .errors import DataError, ProtocolError
from .pipeline import Params
from .synthgen import SynthConfig, generate

log = logging.getLogger("domainness")

USAGE_EXIT = 1
DATA_EXIT = 2
BRIDGE_EXIT = 3


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _add_pair_options(sp):
    sp.add_argument("--src", required=True, help="source manifest JSON")
    sp.add_argument("--tgt", required=True, help="target manifest JSON")
    sp.add_argument("--out", required=True, help="run directory for artifacts")
    sp.add_argument("--config", help="JSON config file (flags take precedence)")
    sp.add_argument("--jobs", type=int, help="worker count (outputs do not depend on it)")
    sp.add_argument("--force", action="store_true", help="recompute cached stages")
    sp.add_argument("--extractor", help="FEX0 command line (default: builtin; env DOMAINNESS_EXTRACTOR)")
    sp.add_argument("--seed", type=int, help="master seed (default 7)")


def _add_param_options(sp):
    sp.add_argument("--side", type=int, help="canonical image side (default 256)")
    sp.add_argument("--domain-train-frac", type=float, dest="domain_train_frac",
                    help="fraction of each side used to train the discriminator (default 1.0)")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--learning-rate", type=float, dest="learning_rate")
    sp.add_argument("--l2-lambda", type=float, dest="l2_lambda")
    sp.add_argument("--tolerance", type=float)
    sp.add_argument("--patch", type=int, help="occluder side (default 16)")
    sp.add_argument("--stride", type=int, help="occluder stride (default 8)")
    sp.add_argument("--fill", help="occluder color: 'auto' or 'r,g,b' (default auto)")
    sp.add_argument("--weighting", choices=["none", "abs-w"], help="feature weighting (default abs-w)")
    sp.add_argument("--heatmaps", action="store_true", default=None,
                    help="also write heatmap and overlay PNGs")
    sp.add_argument("--overlay-threshold", type=float, dest="overlay_threshold")
    sp.add_argument("--crop", type=int, help="central analysis crop (default 227)")
    sp.add_argument("--scales", help="patch scales, comma separated (default 32,64,128)")
    sp.add_argument("--patches", type=int, dest="n_patches", help="patches per scale (default 100)")
    sp.add_argument("--eps", type=float, help="alignment ridge, relative (default 1e-3)")
    sp.add_argument("--repeats", type=int,
                    help="level-seed repetitions for accuracy stderr (default 1)")
    sp.add_argument("--ft-src", dest="ft_src", help=".dfea with alternate global source features")
    sp.add_argument("--ft-tgt", dest="ft_tgt", help=".dfea with alternate global target features")


def build_parser() -> Parser:
    parser = Parser(prog="domainness", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    synth = sub.add_parser("synth", help="generate a synthetic two-domain dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--classes", type=int, default=5)
    synth.add_argument("--per-domain", type=int, default=100, dest="per_domain")
    synth.add_argument("--shift", choices=["background", "foreground", "both"], default="both")
    synth.add_argument("--seed", type=int, default=7)
    synth.add_argument("--side", type=int, default=256)

    for name, help_text in [
        ("train-domain", "train the binary domain discriminator"),
        ("map", "build domainness maps for every image"),
        ("analyze", "foreground/background domainness statistics"),
        ("levels", "build L/M/H level descriptors"),
        ("train-object", "train global and per-level object classifiers"),
        ("adapt", "fit alignment transforms and adapted classifiers"),
        ("evaluate", "produce the accuracy report and predictions"),
        ("pipeline", "run every stage for a manifest pair"),
    ]:
        sp = sub.add_parser(name, help=help_text)
        _add_pair_options(sp)
        _add_param_options(sp)
        if name == "evaluate":
            sp.add_argument("--no-adapt", action="store_true",
                            help="report without the aligned-DL stage")
    return parser


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed config JSON in {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"config {p}: top level must be an object")
    return doc


def build_params(args: argparse.Namespace, config: dict) -> Params:
    params = Params()
    known = {f.name for f in dataclasses.fields(Params)}
    unknown = set(config) - known - {"jobs"}
    if unknown:
        raise DataError(f"config has unknown keys: {sorted(unknown)}")
    for f in dataclasses.fields(Params):
        value = getattr(args, f.name, None)
        if value is None:
            value = config.get(f.name)
        if value is None:
            continue
        if f.name == "scales":
            if isinstance(value, str):
                value = tuple(int(v) for v in value.split(","))
            else:
                value = tuple(int(v) for v in value)
        setattr(params, f.name, value)
    if params.extractor is None:
        params.extractor = os.environ.get("DOMAINNESS_EXTRACTOR") or None
    return params


def _make_run(args, config) -> pl.Run:
    jobs = args.jobs if args.jobs is not None else int(config.get("jobs", 1))
    return pl.make_run(
        out_dir=args.out,
        src_manifest=args.src,
        tgt_manifest=args.tgt,
        params=build_params(args, config),
        jobs=max(1, jobs),
        force=args.force,
    )


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    if args.command is None:
        parser.print_help(sys.stderr)
        return USAGE_EXIT
    try:
        if args.command == "synth":
            cfg = SynthConfig(classes=args.classes, per_domain=args.per_domain,
                              shift=args.shift, seed=args.seed, side=args.side)
            generate(cfg, args.out)
            print(str(Path(args.out) / "manifest_P.json"))
            print(str(Path(args.out) / "manifest_Q.json"))
            return 0

        config = _load_config(args.config)
        run = _make_run(args, config)
        if args.command == "train-domain":
            pl.stage_train_domain(run)
        elif args.command == "map":
            pl.stage_maps(run)
        elif args.command == "analyze":
            pl.stage_analyze(run)
        elif args.command == "levels":
            pl.stage_levels(run)
        elif args.command == "train-object":
            pl.stage_train_object(run)
        elif args.command == "adapt":
            pl.stage_adapt(run)
        elif args.command == "evaluate":
            pl.stage_evaluate(run, with_adapt=not args.no_adapt)
        elif args.command == "pipeline":
            pl.run_pipeline(run)
        return 0
    except ProtocolError as exc:
        log.error("extractor error: %s", exc)
        return BRIDGE_EXIT
    except DataError as exc:
        log.error("%s", exc)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
