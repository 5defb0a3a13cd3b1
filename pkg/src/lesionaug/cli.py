"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from PIL import UnidentifiedImageError

from . import balancer, baseline, evalkit, manifest, pipeline
from .imgops import max_rgb_normalize
from .manifest import CLASSES, TABLE_ORDER, ClassLabel, DataError

log = logging.getLogger("lesionaug")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def _echo_config(args: argparse.Namespace, target: Path) -> None:
    """Write the effective flags to ``run-config`` (inside a dir, or ``<file>.run-config``)."""
    dest = target / "run-config" if target.is_dir() else target.with_name(target.name + ".run-config")
    skip = {"func", "verbose"}
    lines = [f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in skip]
    _write(dest, "\n".join(lines) + "\n")


def parse_factors(text: str) -> tuple[int, ...]:
    """Seven factors, either ``CODE=N`` pairs or a bare list in table order (AKIEC..VASC)."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        if parts and all("=" in p for p in parts):
            named = {}
            for p in parts:
                code, value = p.split("=", 1)
                named[ClassLabel.from_code(code)] = int(value)
            if len(named) != len(CLASSES):
                raise UsageError("--factors needs a value for all 7 classes")
            return tuple(named[c] for c in CLASSES)
        values = [int(p) for p in parts]
    except (ValueError, DataError) as exc:
        raise UsageError(f"bad --factors value: {exc}") from None
    if len(values) != len(CLASSES):
        raise UsageError(f"--factors needs 7 values ({','.join(c.code for c in TABLE_ORDER)}), got {len(values)}")
    if any(v < 0 for v in values):
        raise UsageError("--factors values must be >= 0")
    return manifest.in_table_order(values)


def parse_weights(text: str | None, n_models: int) -> tuple[float, ...]:
    if text is None:
        return (0.5, 0.5) if n_models == 2 else tuple([1.0 / n_models] * n_models)
    try:
        weights = tuple(float(w) for w in text.split(","))
    except ValueError:
        raise UsageError(f"bad --weights value {text!r}") from None
    if len(weights) != n_models:
        raise UsageError(f"--weights has {len(weights)} values for {n_models} prediction files")
    return weights


def _counts_table(counts: manifest.ClassCounts) -> str:
    lines = [f"{c.code:<6} {counts[c]:>7}" for c in CLASSES]
    lines.append(f"{'total':<6} {counts.total:>7}")
    return "\n".join(lines) + "\n"


def _plan_table(plan: balancer.AugmentationPlan) -> str:
    lines = [f"{'class':<6} {'input':>7} {'flipped':>8} {'factor':>6} {'output':>8}"]
    for p in plan.per_class:
        lines.append(
            f"{p.label.code:<6} {p.input_count:>7} {p.after_flip:>8} {p.rotation_factor:>6} {p.expected_output:>8}"
        )
    lines.append(f"{'total':<6} {plan.total_input:>7} {plan.total_after_flip:>8} {'':>6} {plan.total_output:>8}")
    return "\n".join(lines) + "\n"


def _failure_code(exc: pipeline.ExecutionError) -> int:
    cause = exc.failures[0].cause
    io_failure = isinstance(cause, OSError) and not isinstance(cause, UnidentifiedImageError)
    return EXIT_IO if io_failure else EXIT_DATA


def cmd_stats(args) -> int:
    m = manifest.load_manifest(args.ground_truth)
    counts = manifest.class_counts(m)
    sys.stdout.write(_counts_table(counts))
    if args.out:
        out = Path(args.out)
        _write(out, "class,count\n" + "".join(f"{c.code},{counts[c]}\n" for c in CLASSES))
        _echo_config(args, out)
    return EXIT_OK


def cmd_plan(args) -> int:
    m = manifest.load_manifest(args.ground_truth)
    counts = manifest.class_counts(m)
    if args.factors is not None:
        plan = balancer.plan_from_factors(counts, parse_factors(args.factors), args.flip)
    else:
        target = args.target if args.target == "largest-class" else _int_target(args.target)
        plan = balancer.plan_auto(counts, args.flip, target)
    sys.stdout.write(_plan_table(plan))
    if args.out:
        out = Path(args.out)
        _write(out, balancer.format_plan(plan))
        _echo_config(args, out)
    return EXIT_OK


def _int_target(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise UsageError(f"--target must be an integer or 'largest-class', got {text!r}") from None
    if value < 1:
        raise UsageError("--target must be >= 1")
    return value


def cmd_augment(args) -> int:
    plan = balancer.parse_plan(Path(args.plan).read_text(encoding="utf-8"))
    m = manifest.load_manifest(args.manifest)
    counts = manifest.class_counts(m)
    stale = [p.label.code for p in plan.per_class if p.input_count != counts[p.label]]
    if stale:
        raise DataError(f"plan input counts do not match the manifest for: {', '.join(stale)}")

    items = pipeline.expand(plan, m, normalize=args.normalize, normalize_first=args.normalize_first)
    out_dir = Path(args.out)
    log.info("augment: %d items from %d images, %d workers", len(items), len(m), args.workers)
    try:
        om = pipeline.execute(items, args.images, out_dir, workers=args.workers, keep_going=args.keep_going)
        failed = None
    except pipeline.ExecutionError as exc:
        if not args.keep_going:
            raise
        om, failed = exc.completed, exc
    _write(out_dir / "manifest.csv", pipeline.format_output_manifest(om))
    _echo_config(args, out_dir)
    per_class = om.per_class()
    for c in CLASSES:
        print(f"{c.code:<6} {per_class[c]:>8}")
    print(f"{'total':<6} {len(om):>8}")
    if failed is not None:
        for err in failed.failures:
            print(f"failed: {err}", file=sys.stderr)
        return _failure_code(failed)
    return EXIT_OK


def cmd_normalize(args) -> int:
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"not a directory: {in_dir}")
    sources = sorted(
        p for p in in_dir.iterdir() if p.is_file() and p.suffix.lower().lstrip(".") in manifest.IMAGE_EXTENSIONS
    )
    stems = [p.stem for p in sources]
    dupes = sorted({s for s in stems if stems.count(s) > 1})
    if dupes:
        raise DataError(f"several inputs share an output name: {', '.join(dupes)}")
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(src: Path) -> None:
        img = max_rgb_normalize(pipeline.decode_image(src))
        pipeline.write_atomic(out_dir / f"{src.stem}.png", pipeline.encode_png(img))

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        list(pool.map(one, sources))
    _echo_config(args, out_dir)
    print(f"normalized {len(sources)} images")
    return EXIT_OK


def cmd_fuse(args) -> int:
    mats = [evalkit.load_probabilities(Path(p).read_text(encoding="utf-8")) for p in args.predictions]
    cfg = evalkit.EnsembleConfig(parse_weights(args.weights, len(mats)))
    fused = evalkit.vote(mats, cfg) if args.vote else evalkit.fuse(mats, cfg)
    out = Path(args.out)
    _write(out, evalkit.format_probabilities(fused))
    _echo_config(args, out)
    print(f"fused {len(mats)} models over {len(fused)} images, weights {list(cfg.weights)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pm = evalkit.load_probabilities(Path(args.predictions).read_text(encoding="utf-8"))
    truth = manifest.load_manifest(args.ground_truth)
    rep = evalkit.evaluate(pm, truth)
    sys.stdout.write(evalkit.format_report(rep))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "report.txt", evalkit.format_report(rep))
        _write(out / "metrics.csv", evalkit.report_metrics_csv(rep))
        _write(out / "recall.csv", evalkit.report_recall_csv(rep))
        _write(out / "confusion.csv", evalkit.report_confusion_csv(rep))
        _echo_config(args, out)
    return EXIT_OK


def cmd_baseline_train(args) -> int:
    if args.bins < 2:
        raise UsageError("--bins must be >= 2")
    if not args.temperature > 0:
        raise UsageError("--temperature must be positive")
    m = manifest.load_manifest(args.manifest)
    model = baseline.train_centroids(m, args.images, args.bins, args.temperature, workers=args.workers)
    out = Path(args.out)
    _write(out, baseline.format_model(model))
    _echo_config(args, out)
    print(f"trained on {len(m)} images; classes present: {sum(model.present)}")
    return EXIT_OK


def cmd_baseline_predict(args) -> int:
    model = baseline.parse_model(Path(args.model).read_text(encoding="utf-8"))
    if args.manifest:
        m = manifest.load_manifest(args.manifest)
    else:
        images = Path(args.images)
        files = sorted(
            p for p in images.iterdir() if p.is_file() and p.suffix.lower().lstrip(".") in manifest.IMAGE_EXTENSIONS
        )
        # label is a placeholder; only ids and paths matter for prediction
        m = manifest.DatasetManifest(
            tuple(manifest.ManifestEntry(p.stem, p.name, ClassLabel.MEL) for p in files)
        )
    pm = baseline.predict_manifest(model, m, args.images, workers=args.workers)
    out = Path(args.out)
    _write(out, evalkit.format_probabilities(pm))
    _echo_config(args, out)
    print(f"predicted {len(pm)} images")
    return EXIT_OK


def _workers(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lesionaug", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="per-class counts of a ground-truth CSV")
    p.add_argument("ground_truth")
    p.add_argument("-o", "--out", help="also write counts as CSV")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("plan", help="flip/rotation balancing plan")
    p.add_argument("ground_truth")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--factors", help="7 factors in table order AKIEC,BCC,BKL,DF,MEL,NV,VASC, or CODE=N pairs")
    g.add_argument("--target", help="target images per class, or 'largest-class'")
    p.add_argument("--flip", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("-o", "--out", help="plan CSV to write")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("augment", help="execute a plan over a manifest")
    p.add_argument("--plan", required=True)
    p.add_argument("--manifest", required=True, help="ground-truth or canonical manifest CSV")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=_workers, default=1)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--normalize-first", action="store_true")
    p.add_argument("--keep-going", action="store_true")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("normalize", help="standalone max-RGB pass over a directory")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--workers", type=_workers, default=1)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("fuse", help="weighted ensemble of probability CSVs")
    p.add_argument("predictions", nargs="+")
    p.add_argument("--weights", help="comma-separated, one per file (default 0.5,0.5 for two files)")
    p.add_argument("--vote", action="store_true", help="decision-level voting instead of averaging")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="balanced accuracy of a probability CSV")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("-o", "--out", help="directory for report files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="colour-histogram nearest-centroid classifier")
    bsub = p.add_subparsers(dest="baseline_command", required=True)
    t = bsub.add_parser("train")
    t.add_argument("--manifest", required=True)
    t.add_argument("--images", required=True)
    t.add_argument("--bins", type=int, default=baseline.DEFAULT_BINS)
    t.add_argument("--temperature", type=float, default=baseline.DEFAULT_TEMPERATURE)
    t.add_argument("--workers", type=_workers, default=1)
    t.add_argument("-o", "--out", required=True)
    t.set_defaults(func=cmd_baseline_train)
    q = bsub.add_parser("predict")
    q.add_argument("--model", required=True)
    q.add_argument("--images", required=True)
    q.add_argument("--manifest", help="restrict to these ids (default: every image in --images)")
    q.add_argument("--workers", type=_workers, default=1)
    q.add_argument("-o", "--out", required=True)
    q.set_defaults(func=cmd_baseline_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lesionaug: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.ExecutionError as exc:
        print(f"lesionaug: {exc}", file=sys.stderr)
        return _failure_code(exc)
    except (DataError, ValueError, UnidentifiedImageError) as exc:
        print(f"lesionaug: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"lesionaug: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
