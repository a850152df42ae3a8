"""Command-line interface.

Subcommands: gen-centroids, train, score, fuse, eval, ablate, make-glyphs.
Exit codes: 0 success, 1 invalid config, 2 missing or mismatched artifact,
3 numerical failure.
"""

import argparse
import os
import sys

from .config import load_experiment_config
from .data import make_glyph_corpus, write_idx
from .errors import (
    ArchitectureMismatchError,
    ConfigError,
    DimensionError,
    MalformedFileError,
    NumericalError,
    VersionMismatchError,
)
from . import pipeline

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ARTIFACT = 2
EXIT_NUMERICAL = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="oodkit",
        description="OOD detection via subspace projection of network features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's global seed")

    p = sub.add_parser("gen-centroids", help="generate and store the centroid file")
    common(p)

    p = sub.add_parser("train", help="train the classifier, write checkpoints")
    common(p)

    p = sub.add_parser("score", help="score a dataset with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("dataset_ref",
                   help="id_train, id_test, or ood_<name> from the config")

    p = sub.add_parser("fuse", help="fit the fusion model from score files")
    common(p)
    p.add_argument("id_scores", help="ID-train score CSV")
    p.add_argument("reference_ood_scores", help="reference-OOD score CSV")

    p = sub.add_parser("eval", help="evaluate all scores against OOD sets")
    common(p)
    p.add_argument("--fusion-model", required=True)
    p.add_argument("id_scores", help="ID-test score CSV")
    p.add_argument("ood_scores", nargs="+", help="OOD score CSVs")

    p = sub.add_parser("ablate", help="comparative runs along one axis")
    common(p)
    p.add_argument("axis", choices=("bn_relu", "bias_mode", "fusion_kind"))

    p = sub.add_parser("make-glyphs",
                       help="write the procedural IDX image corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--ood-count", type=int, default=600)
    return parser


def _dispatch(args):
    if args.command == "make-glyphs":
        os.makedirs(args.out, exist_ok=True)
        images, labels = make_glyph_corpus("digits", args.count, args.seed)
        write_idx(images, os.path.join(args.out, "digits_images.idx"))
        write_idx(labels.astype("uint8"),
                  os.path.join(args.out, "digits_labels.idx"))
        ood_images, _ = make_glyph_corpus("garments", args.ood_count, args.seed + 1)
        write_idx(ood_images, os.path.join(args.out, "garments_images.idx"))
        print(f"wrote IDX corpus to {args.out}")
        return

    config = load_experiment_config(args.config, seed_override=args.seed)
    if args.command == "gen-centroids":
        path = pipeline.gen_centroids(config, args.out)
        print(f"wrote {path}")
    elif args.command == "train":
        _, report = pipeline.run_train(config, args.out)
        final = report.epochs[-1]
        print(
            "trained %d epochs: loss %.6g, accuracy %.4f"
            % (final["epoch"], final["total"], final["accuracy"])
        )
        for path in report.checkpoint_paths:
            print(f"wrote {path}")
    elif args.command == "score":
        path, records = pipeline.run_score(
            config, args.out, args.checkpoint, args.dataset_ref
        )
        print(f"wrote {path} ({len(records)} records)")
    elif args.command == "fuse":
        print("fusion features:", ", ".join(
            ("cos_alpha", "max_cos_beta", "cos_gamma", "norm_fn")
        ))
        path, _ = pipeline.run_fuse(
            config, args.out, args.id_scores, args.reference_ood_scores
        )
        print(f"wrote {path}")
    elif args.command == "eval":
        reports = pipeline.run_eval(
            config, args.out, args.fusion_model, args.id_scores,
            args.ood_scores,
        )
        for (score_name, ood_name), report in sorted(reports.items()):
            print(
                "%s vs %s: auroc %.6g tnr95 %.6g tnr98 %.6g"
                % (score_name, ood_name, report.auroc,
                   report.tnr_at_tpr95, report.tnr_at_tpr98)
            )
    elif args.command == "ablate":
        results = pipeline.run_ablate(config, args.out, args.axis)
        for setting, reports in results.items():
            for (score_name, ood_name), report in sorted(reports.items()):
                print(
                    "%s=%s %s vs %s: auroc %.6g"
                    % (args.axis, setting, score_name, ood_name, report.auroc)
                )


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except (ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MalformedFileError, VersionMismatchError, ArchitectureMismatchError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
