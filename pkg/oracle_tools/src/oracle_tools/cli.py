"""Batch entry points: make-wavs, make-fixtures, export-weights."""

from __future__ import annotations

import argparse
import json
import sys

from oracle_tools.export import export_weights
from oracle_tools.fixtures import make_fixtures
from oracle_tools.wavgen import write_test_wavs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="oracle-tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-wavs", help="write the deterministic shared WAV set")
    p.add_argument("--out", required=True)

    p = sub.add_parser("make-fixtures", help="generate reference fixture JSON")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-weights", help="torch checkpoint -> weight container")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--spec", required=True, help="UNet spec JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--prefix", default="")
    p.add_argument("--sigma-data", type=float, default=0.5)

    args = parser.parse_args(argv)
    if args.command == "make-wavs":
        paths = write_test_wavs(args.out)
        print(json.dumps(paths, indent=2, sort_keys=True))
    elif args.command == "make-fixtures":
        make_fixtures(args.wav_dir, args.out)
        print(f"fixtures -> {args.out}")
    else:
        export_weights(args.checkpoint, args.spec, args.out,
                       prefix=args.prefix, sigma_data=args.sigma_data)
        print(f"container -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
