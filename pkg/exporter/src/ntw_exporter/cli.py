"""CLI: ntw-export export --out mobilenet_imagenet.ntw"""

import argparse
import sys


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ntw-export",
        description="Convert canonical pretrained MobileNet weights to NTW")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="write the NTW file and manifest")
    p.add_argument("--out", required=True, help="output NTW path")
    p.add_argument("--manifest", help="manifest JSON path (default: <out>.manifest.json)")
    p.add_argument("--weights", choices=("imagenet", "random"), default="imagenet",
                   help="'random' fills the architecture deterministically, "
                        "for offline testing")
    p.add_argument("--seed", type=int, default=0)
    return parser


def run(argv) -> int:
    args = build_parser().parse_args(argv)
    from .exporter import ExportError, FetchError, export_pretrained

    try:
        manifest = export_pretrained(args.out, args.manifest,
                                     weights=args.weights, seed=args.seed)
    except FetchError as exc:
        print(f"fetch error: {exc}", file=sys.stderr)
        return 2
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {manifest['tensor_count']} tensors "
          f"({manifest['parameter_count']:,} parameters) to {args.out}")
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
