"""actextract command line: image directory -> actfile/labfile."""

import argparse
import logging
import sys

from . import __version__
from .extract import ExtractJob, run_extract
from .models import Vgg16Model


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actextract",
        description="Extract CNN activations or top-K predicted labels from an "
                    "image directory into acttopics feature files.",
    )
    parser.add_argument("--version", action="version", version=f"actextract {__version__}")
    parser.add_argument("--images", required=True, help="image directory")
    parser.add_argument("--mode", required=True, choices=["labels", "acts"])
    parser.add_argument("--layer", default="block5_pool",
                        help="activation layer (acts mode), default block5_pool")
    parser.add_argument("--k", type=int, default=10,
                        help="classes per image (labels mode), default 10")
    parser.add_argument("--labels-csv", dest="labels_csv",
                        help="filename,label csv of gold labels")
    parser.add_argument("--out", required=True, help="feature file to write")
    parser.add_argument("--weights", help="local VGG16 state-dict file (offline)")
    parser.add_argument("--class-names", dest="class_names",
                        help="file with one class name per line")
    parser.add_argument("--batch-size", type=int, default=16, dest="batch_size")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        names = None
        if args.class_names:
            with open(args.class_names, encoding="utf-8") as fh:
                names = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        model = Vgg16Model(layer=args.layer, weights_path=args.weights,
                           class_names=names)
        job = ExtractJob(images_dir=args.images, mode=args.mode, out=args.out,
                         layer=args.layer, k=args.k, labels_csv=args.labels_csv,
                         batch_size=args.batch_size)
        result = run_extract(job, model)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.out}: {result.n_images} records, "
          f"{result.n_skipped} skipped")
    if result.sidecar:
        print(f"skipped files listed in {result.sidecar}")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
