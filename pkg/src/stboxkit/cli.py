"""Command-line front end.

Exit codes: 0 success, 1 other failure, 2 unreadable input or bad
arguments, 3 degenerate well/weak partition.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import re
import sys
from pathlib import Path

from stboxkit import __version__
from stboxkit.core import (
    AnnotationFormatError,
    atomic_write_text,
    box_sizes,
    class_ids,
    dumps_json,
    load_dataset,
    save_dataset,
)
from stboxkit.density import (
    GRID_SIZE,
    advise_budget,
    curve_from_csv,
    curve_to_csv,
    fit_priors,
    kl_curve,
)
from stboxkit.pipeline import load_predictions, run_pipeline, select_points, st_boxes_for, substream_seed
from stboxkit.selection import SelectionConfig
from stboxkit.simulate import (
    DegeneratePartitionError,
    NoiseModel,
    box_quality,
    default_noise_model,
    partition_dataset,
    weaken,
)
from stboxkit.stbox import SolverConfig

logger = logging.getLogger("stboxkit")

EXIT_FAILURE = 1
EXIT_PARSE = 2
EXIT_PARTITION = 3

DEFAULT_FRACTIONS = "0.05,0.1,0.2,0.3,0.4,0.5,1.0"


def noise_model_arg(text: str) -> NoiseModel:
    if text == "default":
        return default_noise_model()
    m = re.fullmatch(r"custom\(([^,]+),([^,]+),([^,]+)\)", text.replace(" ", ""))
    if not m:
        raise argparse.ArgumentTypeError("expected 'default' or 'custom(slope,intercept,sigma)'")
    try:
        return NoiseModel(*(float(g) for g in m.groups()))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def fractions_arg(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not values or any(not 0 < v <= 1 for v in values):
        raise argparse.ArgumentTypeError("fractions must lie in (0, 1]")
    return sorted(values)


def unit_interval(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError("value must lie in (0, 1]")
    return value


def non_negative(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("value must be non-negative")
    return value


def positive_int(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("value must be at least 2")
    return value


def _st_rows_output(path: Path, rows: list[dict]) -> None:
    if path.suffix.lower() == ".json":
        atomic_write_text(path, dumps_json(rows))
        return
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["class", "kind", "w", "h", "objective"], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    atomic_write_text(path, buf.getvalue())


def _solver_config(args) -> SolverConfig:
    return SolverConfig(step_tolerance=args.step_tolerance, max_iterations=args.max_iterations)


def cmd_fit_pdf(args) -> int:
    images = load_dataset(args.input)
    for c, prior in fit_priors(images, args.grid_size).items():
        atomic_write_text(Path(args.out_dir) / f"class_{c}_pdf.csv", prior.to_csv())
        logger.info("class %d: %d samples, bandwidth (%.3f, %.3f)",
                    c, prior.n_samples, prior.bandwidth_w, prior.bandwidth_h)
    return 0


def cmd_st_box(args, kind: str) -> int:
    images = load_dataset(args.input)
    boxes = st_boxes_for(fit_priors(images, args.grid_size), _solver_config(args))
    _st_rows_output(Path(args.out), [b[kind].as_row(c) for c, b in boxes.items()])
    return 0


def cmd_select(args) -> int:
    images = load_dataset(args.input)
    source = load_dataset(args.priors_from) if args.priors_from else images
    boxes = st_boxes_for(fit_priors(source, args.grid_size), _solver_config(args))
    sizes = {c: (b["mean_iou"].w, b["mean_iou"].h) for c, b in boxes.items()}
    predictions = load_predictions(args.predictions) if args.predictions else None
    out, counts = select_points(images, sizes, predictions,
                                SelectionConfig(args.tau_s, args.tau_iou))
    save_dataset(args.out, out)
    logger.info("selected boxes: %s", dict(sorted(counts.items())))
    return 0


def cmd_gen_points(args) -> int:
    images = load_dataset(args.input)
    well, weak = partition_dataset(images, args.well_fraction, substream_seed(args.seed, "partition"))
    save_dataset(args.out_well, well)
    save_dataset(args.out_weak, weaken(weak, args.alpha_model, substream_seed(args.seed, "points")))
    if args.out_reference:
        save_dataset(args.out_reference, weak)
    logger.info("well: %d images, weak: %d images", len(well), len(weak))
    return 0


def cmd_kl_curve(args) -> int:
    images = load_dataset(args.input)
    classes = [args.class_id] if args.class_id is not None else class_ids(images, boxes_only=True)
    for c in classes:
        if len(box_sizes(images, c)) < 2:
            logger.warning("skipping class %d: insufficient samples for class %d", c, c)
            continue
        curve = kl_curve(images, c, args.fractions, args.seed, args.grid_size)
        atomic_write_text(Path(args.out_dir) / f"class_{c}_kl.csv", curve_to_csv(curve))
        logger.info("class %d: advised box fraction %g", c, advise_budget(curve, args.threshold))
    return 0


def cmd_advise(args) -> int:
    curve = curve_from_csv(Path(args.curve).read_text(encoding="utf-8"))
    fraction = advise_budget(curve, args.threshold)
    print(repr(fraction))
    if args.out:
        atomic_write_text(args.out, dumps_json({"fraction": fraction, "threshold": args.threshold}))
    return 0


def cmd_eval_quality(args) -> int:
    quality = box_quality(load_dataset(args.produced), load_dataset(args.reference))
    print(repr(quality))
    if args.out:
        atomic_write_text(args.out, dumps_json({"quality": quality}))
    return 0


def cmd_pipeline(args) -> int:
    images = load_dataset(args.input)
    predictions = load_predictions(args.predictions) if args.predictions else None
    report = run_pipeline(
        images,
        args.well_fraction,
        args.alpha_model,
        seed=args.seed,
        alpha=args.alpha,
        predictions=predictions,
        selection=SelectionConfig(args.tau_s, args.tau_iou),
        solver=_solver_config(args),
        grid_size=args.grid_size,
    )
    text = dumps_json(report)
    if args.report_json:
        atomic_write_text(args.report_json, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stboxkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    def grid(p):
        p.add_argument("--grid-size", type=positive_int, default=GRID_SIZE)

    def solver(p):
        grid(p)
        p.add_argument("--step-tolerance", type=float, default=1e-3)
        p.add_argument("--max-iterations", type=int, default=10_000)

    def selection(p):
        p.add_argument("--tau-s", type=unit_interval, default=0.2)
        p.add_argument("--tau-iou", type=unit_interval, default=0.5)

    def noise(p):
        p.add_argument("--alpha-model", "--noise-model", type=noise_model_arg, default="default",
                       help="'default' or 'custom(slope,intercept,sigma)'")
        p.add_argument("--seed", type=int, default=0)

    p = add("fit-pdf", cmd_fit_pdf, "write class_<id>_pdf.csv grids")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    grid(p)

    for name, kind in (("mean-box", "mean"), ("mean-iou-box", "mean_iou")):
        p = add(name, lambda a, k=kind: cmd_st_box(a, k), f"per-class {kind} ST boxes (CSV or JSON)")
        p.add_argument("--input", required=True)
        p.add_argument("--out", required=True, help="*.csv or *.json")
        solver(p)

    p = add("select", cmd_select, "replace points with selected boxes")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--predictions")
    p.add_argument("--priors-from", help="box-labelled file for the priors (default: --input)")
    selection(p)
    solver(p)

    p = add("gen-points", cmd_gen_points, "split a box dataset and turn the weak part into points")
    p.add_argument("--input", required=True)
    p.add_argument("--well-fraction", type=float, required=True)
    noise(p)
    p.add_argument("--out-well", required=True)
    p.add_argument("--out-weak", required=True)
    p.add_argument("--out-reference")

    p = add("kl-curve", cmd_kl_curve, "KL of the full prior from subset priors")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--class", dest="class_id", type=int)
    p.add_argument("--fractions", type=fractions_arg, default=fractions_arg(DEFAULT_FRACTIONS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=non_negative, default=0.05)
    grid(p)

    p = add("advise", cmd_advise, "smallest box fraction whose KL is under a threshold")
    p.add_argument("--curve", required=True)
    p.add_argument("--threshold", type=non_negative, default=0.05)
    p.add_argument("--out")

    p = add("eval-quality", cmd_eval_quality, "fraction of produced boxes with IOU > 0.5")
    p.add_argument("--produced", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out")

    p = add("pipeline", cmd_pipeline, "end-to-end desk-scale run")
    p.add_argument("--input", required=True)
    p.add_argument("--well-fraction", type=float, required=True)
    p.add_argument("--alpha", type=non_negative, default=0.0)
    p.add_argument("--predictions")
    p.add_argument("--report-json")
    noise(p)
    selection(p)
    solver(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logger.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except AnnotationFormatError as exc:
        logger.error("parse failure: %s", exc)
        return EXIT_PARSE
    except DegeneratePartitionError as exc:
        logger.error("%s", exc)
        return EXIT_PARTITION
    except (OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
