"""Command-line front end.

Subcommands: coherence-scan, full-pipeline, invert, stabilize-sim.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import NumericsError, ScenarioError
from .scenario import load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="h2beats",
        description="Simulator of entanglement-controlled vibrational quantum "
                    "beats: pulse-pair ionization, VMI synthesis, Abel "
                    "inversion, beat analysis, interferometer stabilization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", default=None,
                       help="scenario TOML (defaults used when omitted)")
        p.add_argument("--out", metavar="DIR", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")

    p = sub.add_parser("coherence-scan",
                       help="coherence, purity and entropy versus two-pulse delay")
    common(p)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("full-pipeline",
                       help="quantum -> probe -> VMI -> analysis closure run")
    common(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--skip-vmi", action="store_true",
                   help="analyze exact beta maps instead of inverted images")
    p.add_argument("--save-images", action="store_true",
                   help="also write the showcase delays' PGM frames")

    p = sub.add_parser("invert", help="batch Abel inversion of PGM frames")
    p.add_argument("images", nargs="+", metavar="PGM")
    p.add_argument("--out", metavar="DIR", required=True)
    p.add_argument("--r-max", type=int, default=110)
    p.add_argument("--l-max", type=int, default=6)
    p.add_argument("--center", metavar="ROW,COL", default=None,
                   help="override the sidecar image center")
    p.add_argument("--keep-going", action="store_true",
                   help="continue past unreadable frames")

    p = sub.add_parser("stabilize-sim",
                       help="closed-loop delay stabilization simulation")
    common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


def _dispatch(args) -> int:
    from . import pipeline

    if args.command == "invert":
        center = None
        if args.center:
            try:
                row, col = (float(x) for x in args.center.split(","))
            except ValueError as exc:
                raise ScenarioError(f"bad --center {args.center!r}: expected ROW,COL") from exc
            center = (row, col)
        if args.r_max < 4 or args.l_max not in (0, 2, 4, 6, 8):
            raise ScenarioError("invert requires --r-max >= 4 and even --l-max <= 8")
        summary = pipeline.run_invert(
            args.images, args.r_max, args.l_max, args.out,
            center=center, keep_going=args.keep_going,
        )
        print(f"inverted {summary['n_done']} frame(s), {summary['n_failed']} failed")
        return EXIT_OK if summary["n_failed"] == 0 else EXIT_NUMERICS

    scenario = load_scenario(args.config, seed_override=args.seed)

    if args.command == "coherence-scan":
        result = pipeline.run_coherence_scan(scenario, args.out, threads=args.threads)
        print(f"wrote {result['rows']} rows to {result['artifacts'][0]}")
        return EXIT_OK

    if args.command == "full-pipeline":
        report = pipeline.run_full_pipeline(
            scenario, args.out, skip_vmi=args.skip_vmi, threads=args.threads,
            save_images=args.save_images or None,
        )
        for row in report["rows"]:
            print(
                f"{row['assignment']}: col2 {row['col2_cm1']:.1f} cm^-1, "
                f"col3 {row['col3_cm1']:.1f} cm^-1, literature "
                f"{row['literature_cm1']:.1f} cm^-1, "
                f"{'pass' if row['col2_pass'] and row['col3_pass'] else 'FAIL'}"
            )
        print(f"report: {'all pass' if report['all_pass'] else 'FAILURES'}")
        return EXIT_OK

    if args.command == "stabilize-sim":
        summary = pipeline.run_stabilize(scenario, args.out)
        print(f"residual rms {summary['rms_as']:.2f} as, p95 {summary['p95_as']:.2f} as")
        return EXIT_OK

    raise ScenarioError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
