"""Command-line mirror of the extraction job fields."""

from __future__ import annotations

import argparse
import json
import sys

from sgextract.embeddings import export_label_embeddings
from sgextract.jobs import ExtractionJob, run_job


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sgextract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("visual", help="extract visual graphs from image files")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--confidence-floor", type=float, default=0.0)

    p = sub.add_parser("language", help="extract language graphs from a sentence file")
    p.add_argument("--sentences", required=True, help="text file, one sentence per line")
    p.add_argument("--out", required=True)

    p = sub.add_parser("embeddings", help="export label embeddings")
    p.add_argument("--labels", required=True, help="text file, one label per line")
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "visual":
            job = ExtractionJob(manifest=args.images, modality="visual",
                                out_dir=args.out, confidence_floor=args.confidence_floor)
            result = run_job(job)
        elif args.command == "language":
            with open(args.sentences, encoding="utf-8") as fh:
                sentences = [line.rstrip("\n") for line in fh]
            job = ExtractionJob(manifest=sentences, modality="language", out_dir=args.out)
            result = run_job(job)
        else:
            with open(args.labels, encoding="utf-8") as fh:
                labels = [line.strip() for line in fh if line.strip()]
            count = export_label_embeddings(labels, args.out)
            print(json.dumps({"out": args.out, "labels": count}))
            return 0
    except (OSError, ValueError) as err:
        print(json.dumps({"error": str(err)}), file=sys.stderr)
        return 1
    print(json.dumps({"written": len(result.written), "skipped": len(result.skipped),
                      "errors": len(result.errors)}))
    return 0 if not result.errors else 1


if __name__ == "__main__":
    sys.exit(main())
