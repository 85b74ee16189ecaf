"""Command-line entry points: export a checkpoint, verify parity."""

import argparse
import sys

from .errors import ExportError
from .export import export
from .manifest import manifest_path_for
from .parity import verify_parity

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARITY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def main(argv=None) -> int:
    parser = _Parser(prog="lsnbw-export",
                     description="Convert pretrained checkpoints to LSNBW001 archives")
    sub = parser.add_subparsers(dest="command")

    p_export = sub.add_parser("export", help="convert a checkpoint")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--mapping", required=True)
    p_export.add_argument("--out", required=True)

    p_verify = sub.add_parser("verify", help="check inference parity")
    p_verify.add_argument("--checkpoint", required=True)
    p_verify.add_argument("--archive", required=True)
    p_verify.add_argument("--probes", type=int, default=16)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--tolerance", type=float, default=1e-4)

    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "export":
            manifest = export(args.checkpoint, args.mapping, args.out)
            print(f"archive: {args.out}")
            print(f"manifest: {manifest_path_for(args.out)}")
            print(f"sha256: {manifest.archive_sha256}")
            return EXIT_OK
        diff = verify_parity(args.checkpoint, args.archive,
                             n_probes=args.probes, seed=args.seed)
        print(f"max_abs_logit_diff = {diff!r}")
        if diff < args.tolerance:
            print("parity: ok")
            return EXIT_OK
        print(f"parity: FAIL (tolerance {args.tolerance!r})")
        return EXIT_PARITY
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
