"""Command-line entry point for the experiment harness.

Subcommands mirror the experiment kinds plus ``emit-default-config``. A JSON
config file supplies parameters; command-line flags override the common ones.
Exit status: 0 when the run's acceptance summary passes, 2 when it fails its
thresholds, 1 on error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .configs import EXPERIMENT_KINDS, default_config, dump_config, from_dict, load_config, to_dict
from .runner import RUNNERS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specband",
        description="Gradient-band, selection, and whitening experiments on synthetic embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    emit = sub.add_parser("emit-default-config", help="print a complete config template")
    emit.add_argument("kind", choices=EXPERIMENT_KINDS)

    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind.replace("_", "-"), help=f"run the {kind} experiment")
        p.add_argument("--config", help="JSON config file (defaults are used otherwise)")
        p.add_argument("--seed", type=int, default=0, help="master 64-bit seed")
        p.add_argument("--out", default=None, help="output directory for rows.csv / summary.json / manifest.json")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--full", action="store_true", help="paper-scale Monte-Carlo counts")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "emit-default-config":
        print(dump_config(default_config(args.kind)))
        return 0

    kind = args.command.replace("-", "_")
    cfg_cls, run = RUNNERS[kind]
    try:
        if args.config:
            config = load_config(args.config)
            if not isinstance(config, cfg_cls):
                raise ValueError(f"config file is for {config.kind!r}, expected {kind!r}")
        else:
            config = default_config(kind)
        report = run(config, seed=args.seed, jobs=args.jobs, full=args.full)
    except Exception as exc:  # config or runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.out:
        report.write(args.out)
    if not args.quiet:
        print(json.dumps(report.summary, indent=2, sort_keys=True))
        print(f"pass: {report.passed}")
    return 0 if report.passed else 2


if __name__ == "__main__":
    sys.exit(main())
