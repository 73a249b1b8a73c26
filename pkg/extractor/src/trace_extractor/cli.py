"""Command-line front end for the feature extractor."""

from __future__ import annotations

import argparse
import sys

from .extract import (
    ExtractionSpec,
    LayerSelectorError,
    available_blocks,
    build_model,
    run_extraction,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trace-extract",
        description=(
            "Run a frozen classifier over a dataset and dump per-layer "
            "average-pooled features, logits and labels as NPY files plus a "
            "manifest."
        ),
    )
    parser.add_argument(
        "--model", required=True,
        help="torchvision model name, e.g. resnet34 (weights stay random "
             "unless --weights is given)",
    )
    parser.add_argument("--weights", default=None, help="local state-dict file")
    parser.add_argument("--images", default=None,
                        help="NPY file of images, N x C x H x W")
    parser.add_argument("--labels", default=None, help="NPY file of class ids")
    parser.add_argument("--dataset", default=None,
                        help="named dataset (cifar10); needs --data-root")
    parser.add_argument("--data-root", default=None)
    parser.add_argument("--split", default="test", choices=("train", "test"))
    parser.add_argument(
        "--layers", default=None,
        help="comma-separated module paths; default: every Sequential block",
    )
    parser.add_argument("--list-layers", action="store_true",
                        help="print the model's top-level blocks and exit")
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--name", default="extracted")
    parser.add_argument("--role", default="test_in",
                        choices=("train_in", "test_in", "test_ood"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    layers = tuple(args.layers.split(",")) if args.layers else None
    spec = ExtractionSpec(
        model=args.model,
        out_dir=args.out_dir or ".",
        images=args.images,
        labels=args.labels,
        dataset=args.dataset,
        data_root=args.data_root,
        split=args.split,
        weights=args.weights,
        layers=layers,
        batch_size=args.batch_size,
        device=args.device,
        name=args.name,
        role=args.role,
    )
    try:
        if args.list_layers:
            for name in available_blocks(build_model(spec)):
                print(name)
            return 0
        if args.out_dir is None:
            print("error: --out-dir is required", file=sys.stderr)
            return 2
        manifest = run_extraction(spec)
    except LayerSelectorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(manifest)
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
