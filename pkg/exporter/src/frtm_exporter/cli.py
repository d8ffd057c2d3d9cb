"""CLI for the feature exporter."""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportSpec, export_sequence


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frtm-exporter",
        description="Export backbone activations to FRTM feature files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    export = sub.add_parser("export", help="export one .frtm file per frame")
    export.add_argument("--frames", required=True, help="directory of frame images")
    export.add_argument("--out", required=True, help="output directory")
    export.add_argument("--backbone", default="resnet18",
                        choices=("resnet18", "resnet34", "resnet50", "resnet101"))
    export.add_argument("--layer", default="layer3",
                        choices=("layer1", "layer2", "layer3", "layer4"),
                        help="backbone stage to tap (layer3 = stride 16)")
    export.add_argument("--weights", help="local state-dict path (.pth)")
    export.add_argument("--random-init", action="store_true",
                        help="seeded random weights instead of pretrained ones")
    export.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExportSpec(backbone=args.backbone, layer=args.layer,
                          weights=args.weights, random_init=args.random_init,
                          seed=args.seed, out_dir=args.out)
        written = export_sequence(args.frames, spec)
        print(f"wrote {len(written)} feature files to {args.out}")
        return 0
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
