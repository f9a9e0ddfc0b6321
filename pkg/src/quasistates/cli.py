"""Command-line entry point: ``quasistates <stage> [--config PATH] [--out DIR] [--seed N]``.

Exit codes: 0 success, 1 usage, 2 input error, 3 stage run out of order,
4 estimation failed everywhere.
"""
from __future__ import annotations

import argparse
import sys

from filelock import FileLock, Timeout

from . import __version__
from .config import PipelineConfig, load_config
from .errors import (
    AllWindowsFailedError,
    EstimationError,
    PipelineOrderError,
    QuasiStatesError,
)
from .pipeline import LOCK, RUNNERS, Workspace, run_all

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_ORDER, EXIT_ESTIMATION = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS so a flag given before the stage name survives the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides `out`)")
    common.add_argument("--seed", type=int, metavar="N", help="overrides `seed`")
    parser = _Parser(prog="quasistates", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="stage", metavar="stage", parser_class=_Parser)
    sub.required = True
    helps = {
        "synth": "write a synthetic price panel, sector map and regime labels",
        "ingest": "returns and locally normalized returns",
        "correlate": "rolling sector-averaged correlation state points",
        "cluster": "bisecting k-means, timeline, distances to centers",
        "potentials": "sliding-window drift and potential per reference cluster",
        "merge": "merge proposals from potential minima",
        "fixedpoint": "sphere-constrained fixed point and Delta(t)",
        "report": "SVG figures",
        "all": "every stage in order (synth only if `scenario` is set)",
    }
    for name, text in helps.items():
        sub.add_parser(name, help=text, parents=[common])
    return parser


def resolve_config(args) -> PipelineConfig:
    path = getattr(args, "config", None)
    cfg = load_config(path) if path else PipelineConfig()
    changes = {k: getattr(args, k) for k in ("out", "seed") if hasattr(args, k)}
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except QuasiStatesError as exc:
        print(f"quasistates: config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    ws = Workspace(cfg)
    try:
        ws.root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"quasistates: cannot create {ws.root}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    stage = args.stage
    try:
        with FileLock(str(ws.path(LOCK)), timeout=0):
            runner = run_all if stage == "all" else RUNNERS[stage]
            for line in runner(cfg, ws):
                print(line)
    except Timeout:
        print(f"quasistates: {ws.root} is locked by another run", file=sys.stderr)
        return EXIT_INPUT
    except PipelineOrderError as exc:
        print(f"quasistates: {exc}", file=sys.stderr)
        return EXIT_ORDER
    except (AllWindowsFailedError, EstimationError) as exc:
        print(f"quasistates: {stage}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (QuasiStatesError, OSError) as exc:
        print(f"quasistates: {stage}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
