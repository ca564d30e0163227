"""Command-line entry point wiring all stages into reproducible experiments.

Subcommands: ingest, synth, segment, features, rank, train, evaluate, stats.
Exit codes: 0 success, 1 usage error, 2 data error. Every result is
accompanied by a manifest (resolved configuration, input digests, tool
version, seed) written before the results themselves.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classifiers import save_model, train_classifier
from .ensemble import EnsembleWeights
from .evaluation import (
    AoiSpec,
    EvalReport,
    ExperimentConfig,
    PipelineConfig,
    cohort_stats,
    prepare_channel_tables,
    prepare_sota_table,
    run_experiment_on_tables,
    sd_curve,
    sd_vs_users,
    sota_protocol,
    sweep_feature_counts,
)
from .features import anova_rank, select_top_k
from .ingest import (
    CohortSpec,
    DataError,
    DEFAULT_CAP_MS,
    GOF_GEOMETRY,
    generate_synthetic_cohort,
    load_cohort,
    load_geometry,
    save_cohort,
)
from .classifiers import encode_labels
from .evaluation import _segment_cohort  # segment subcommand reuses the shared stage
from .segmentation import DEFAULT_MFD_MS, DEFAULT_VT_GRID
from .signal import SmoothingConfig

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(message)


def _env_seed() -> int:
    raw = os.environ.get("GAZEFORGE_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"GAZEFORGE_SEED must be an integer, got {raw!r}") from None


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sg-order", type=int, default=6, help="Savitzky-Golay polynomial order (default 6)")
    parser.add_argument("--sg-frame", type=int, default=15, help="Savitzky-Golay frame size, odd (default 15)")
    parser.add_argument("--vt", type=float, default=None, help="velocity threshold deg/s; omit to auto-select")
    parser.add_argument("--mfd", type=float, default=DEFAULT_MFD_MS, help="minimum fixation duration ms (default 100)")
    parser.add_argument(
        "--vt-grid",
        default=",".join(str(v) for v in DEFAULT_VT_GRID),
        help="comma list of candidate thresholds for auto-selection",
    )
    parser.add_argument("--aggregate", choices=("pooled", "per-segment-mean"), default="pooled")
    parser.add_argument("--geometry", default=None, help="geometry config file (key = value); defaults to the GOF screen")
    parser.add_argument("--density-grid-n", type=int, default=8, help="spatial-density grid size (default 8)")


def _parse_float_list(raw: str, flag: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{flag} expects a comma-separated number list, got {raw!r}") from None
    if not values:
        raise UsageError(f"{flag} must not be empty")
    return values


def _parse_int_list(raw: str, flag: str) -> list[int]:
    return [int(v) for v in _parse_float_list(raw, flag)]


def _pipeline_from_args(args) -> PipelineConfig:
    geometry = load_geometry(args.geometry) if args.geometry else GOF_GEOMETRY
    try:
        smoothing = SmoothingConfig(poly_order=args.sg_order, frame_size=args.sg_frame)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return PipelineConfig(
        smoothing=smoothing,
        vt=args.vt,
        mfd=args.mfd,
        vt_grid=_parse_float_list(args.vt_grid, "--vt-grid"),
        aggregate=args.aggregate,
        geometry=geometry,
        density_grid_n=args.density_grid_n,
    )


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_files(*paths) -> None:
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise UsageError(f"missing file: {path}")


def _write_manifest(target: Path, command: str, config: dict, inputs: list, seed: int | None) -> None:
    manifest = {
        "tool": "gazeforge",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
    }
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")


def _out_dir(args, seed: int) -> Path:
    if args.out_dir:
        out = Path(args.out_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
        out = Path("runs") / f"{stamp}-seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report_files(out: Path, report: EvalReport, stem: str = "report") -> None:
    (out / f"{stem}.txt").write_text(report.to_text(), encoding="utf-8")
    with open(out / f"{stem}_runs.csv", "w", encoding="utf-8") as fh:
        fh.write("run,accuracy\n")
        for i, acc in enumerate(report.accuracies):
            fh.write(f"{i},{acc:.12g}\n")


def _write_xy_csv(path: Path, pairs, header=("x", "y")) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for x, y in pairs:
            fh.write(f"{x},{y:.12g}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="gazeforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gazeforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize a gaze CSV", parser_class=_Parser)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cap-ms", type=float, default=DEFAULT_CAP_MS)
    p.add_argument("--geometry", default=None)

    p = sub.add_parser("synth", help="generate a synthetic cohort CSV", parser_class=_Parser)
    p.add_argument("--n", type=int, required=True, help="participant count (even)")
    p.add_argument("--duration-ms", type=float, default=30_000.0)
    p.add_argument("--rate", type=float, default=250.0)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--effect-class", choices=("F", "M"), default="M", help="class receiving the speed offsets")
    p.add_argument("--effect-fix-speed", type=float, default=0.0, help="dwell-phase mean-speed offset, deg/s")
    p.add_argument("--effect-sac-speed", type=float, default=0.0, help="jump-phase mean-speed offset, deg/s")
    p.add_argument("--out", required=True)

    p = sub.add_parser("segment", help="emit I-VT segments as CSV", parser_class=_Parser)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)

    p = sub.add_parser("features", help="emit per-participant feature tables", parser_class=_Parser)
    p.add_argument("--data", required=True)
    p.add_argument("--out-fix", required=True)
    p.add_argument("--out-sac", required=True)
    p.add_argument("--out-sota", default=None)
    _add_pipeline_flags(p)

    p = sub.add_parser("rank", help="emit the ANOVA feature ranking per channel", parser_class=_Parser)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)

    p = sub.add_parser("train", help="fit and save the two channel models", parser_class=_Parser)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--k", type=int, default=1, help="features per channel (default 1)")
    p.add_argument("--classifier", choices=("logreg", "rf"), default="logreg")
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    _add_pipeline_flags(p)

    p = sub.add_parser("evaluate", help="run repeated-split experiments", parser_class=_Parser)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("single", "sweep", "sota", "sd-curve"), default="single")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--k", type=int, default=1, help="features per channel")
    p.add_argument("--classifier", choices=("logreg", "rf"), default="logreg")
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--weights", default=None, metavar="W_SAC,W_FIX", help="manual fusion weights")
    p.add_argument("--optimize-weights", action="store_true", help="tune fusion weights with Nelder-Mead")
    p.add_argument("--tune-on", choices=("train", "test-leaky"), default="train")
    p.add_argument("--rank-on", choices=("train", "all"), default="train")
    p.add_argument("--subset", type=int, default=None, help="balanced cohort subset size")
    p.add_argument("--ks", default="1,2,3,4", help="feature counts for --mode sweep")
    p.add_argument("--sizes", default="20,40,80,160", help="cohort sizes for --mode sd-curve")
    p.add_argument("--sota-females", type=int, default=20)
    p.add_argument("--sota-males", type=int, default=25)
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--jobs", type=int, default=None, help="parallel runs (default: available parallelism)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    _add_pipeline_flags(p)

    p = sub.add_parser("stats", help="descriptive cohort statistics with significance tests", parser_class=_Parser)
    p.add_argument("--data", required=True)
    p.add_argument("--aoi", required=True, help="JSON file: {name: [x0, y0, x1, y1], ...}")
    p.add_argument("--stat-test", choices=("mannwhitney", "ttest"), default="mannwhitney")
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)

    return parser


def _cmd_ingest(args) -> int:
    _require_files(args.data, args.geometry)
    cohort = load_cohort(args.data, cap_ms=args.cap_ms)
    save_cohort(cohort, args.out)
    _write_manifest(
        Path(str(args.out) + ".manifest.json"), "ingest",
        {"cap_ms": args.cap_ms}, [args.data], None,
    )
    n_f = sum(1 for t in cohort if t.gender == "F")
    print(f"loaded {len(cohort)} participants ({n_f} F / {len(cohort) - n_f} M) -> {args.out}")
    return 0


def _cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    effect = {}
    if args.effect_fix_speed or args.effect_sac_speed:
        effect[args.effect_class] = {
            "fixation_speed": args.effect_fix_speed,
            "saccade_speed": args.effect_sac_speed,
        }
    try:
        spec = CohortSpec(
            n_participants=args.n,
            duration_ms=args.duration_ms,
            sample_rate_hz=args.rate,
            class_effect=effect,
            noise_sd_px=args.noise_sd,
            seed=seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_manifest(
        Path(str(args.out) + ".manifest.json"), "synth", dataclasses.asdict(spec), [], seed
    )
    cohort = generate_synthetic_cohort(spec)
    save_cohort(cohort, args.out)
    print(f"wrote {len(cohort)} synthetic participants -> {args.out}")
    return 0


def _cmd_segment(args) -> int:
    _require_files(args.data, args.geometry)
    pipeline = _pipeline_from_args(args)
    cohort = load_cohort(args.data)
    records, vt, excluded = _segment_cohort(cohort, pipeline)
    _write_manifest(
        Path(str(args.out) + ".manifest.json"), "segment",
        {"pipeline": dataclasses.asdict(pipeline)}, [args.data], None,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("participant_id,kind,start_idx,end_idx,start_ms,duration_ms\n")
        for traj, _, segments in records:
            for s in segments:
                fh.write(
                    f"{traj.participant_id},{s.kind},{s.start},{s.end},"
                    f"{traj.t_ms[s.start]:.12g},{s.duration_ms:.12g}\n"
                )
    print(f"velocity threshold: {vt} deg/s; excluded: {len(excluded)}; segments -> {args.out}")
    return 0


def _cmd_features(args) -> int:
    _require_files(args.data, args.geometry)
    pipeline = _pipeline_from_args(args)
    cohort = load_cohort(args.data)
    table_fix, table_sac, excluded = prepare_channel_tables(cohort, pipeline)
    table_fix.to_csv(args.out_fix)
    table_sac.to_csv(args.out_sac)
    _write_manifest(
        Path(str(args.out_fix) + ".manifest.json"), "features",
        {"pipeline": dataclasses.asdict(pipeline)}, [args.data], None,
    )
    if args.out_sota:
        table_sota, _ = prepare_sota_table(cohort, pipeline)
        table_sota.to_csv(args.out_sota)
    print(f"feature tables for {len(table_fix)} participants written (excluded: {len(excluded)})")
    return 0


def _cmd_rank(args) -> int:
    _require_files(args.data, args.geometry)
    pipeline = _pipeline_from_args(args)
    cohort = load_cohort(args.data)
    table_fix, table_sac, _ = prepare_channel_tables(cohort, pipeline)
    _write_manifest(
        Path(str(args.out) + ".manifest.json"), "rank",
        {"pipeline": dataclasses.asdict(pipeline)}, [args.data], None,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("channel,rank,feature,f_score\n")
        for table in (table_fix, table_sac):
            for rank, (name, score) in enumerate(anova_rank(table), start=1):
                fh.write(f"{table.channel},{rank},{name},{score:.12g}\n")
    print(f"ANOVA rankings -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    _require_files(args.data, args.geometry)
    seed = args.seed if args.seed is not None else _env_seed()
    pipeline = _pipeline_from_args(args)
    cohort = load_cohort(args.data)
    out = _out_dir(args, seed)
    _write_manifest(
        out / "manifest.json", "train",
        {"pipeline": dataclasses.asdict(pipeline), "k": args.k, "classifier": args.classifier, "l2": args.l2},
        [args.data], seed,
    )
    table_fix, table_sac, _ = prepare_channel_tables(cohort, pipeline)
    chosen = {}
    for channel_idx, table in enumerate((table_fix, table_sac)):
        names = select_top_k(anova_rank(table), args.k)
        slim = table.select_features(names)
        model = train_classifier(
            args.classifier, slim.values, encode_labels(slim.labels),
            seed=seed + channel_idx, l2=args.l2, feature_names=names,
        )
        save_model(model, out / f"model_{table.channel}.json")
        chosen[table.channel] = names
    (out / "features.json").write_text(json.dumps(chosen, indent=2) + "\n", encoding="utf-8")
    print(f"models and selected features -> {out}")
    return 0


def _experiment_config(args, seed: int, pipeline: PipelineConfig) -> ExperimentConfig:
    if args.optimize_weights and args.weights:
        raise UsageError("--weights and --optimize-weights are mutually exclusive")
    weight_mode = "equal"
    manual = None
    if args.optimize_weights:
        weight_mode = "optimized"
    elif args.weights:
        parts = _parse_float_list(args.weights, "--weights")
        if len(parts) != 2:
            raise UsageError("--weights expects two values: w_sac,w_fix")
        manual = (parts[1], parts[0])  # stored as (w_fix, w_sac)
        weight_mode = "manual"
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    try:
        return ExperimentConfig(
            n_runs=args.runs,
            split_ratio=args.split_ratio,
            k_features_per_channel=args.k,
            classifier_kind=args.classifier,
            weight_mode=weight_mode,
            manual_weights=manual,
            rank_on=args.rank_on,
            tune_on=args.tune_on,
            seed=seed,
            subset_size=args.subset,
            logreg_l2=args.l2,
            n_jobs=jobs,
            pipeline=pipeline,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _cmd_evaluate(args) -> int:
    _require_files(args.data, args.geometry)
    seed = args.seed if args.seed is not None else _env_seed()
    pipeline = _pipeline_from_args(args)
    config = _experiment_config(args, seed, pipeline)
    out = _out_dir(args, seed)
    _write_manifest(
        out / "manifest.json", f"evaluate --mode {args.mode}",
        dataclasses.asdict(config), [args.data, args.geometry], seed,
    )
    cohort = load_cohort(args.data)

    if args.mode == "single":
        table_fix, table_sac, excluded = prepare_channel_tables(cohort, pipeline)
        report = run_experiment_on_tables(table_fix, table_sac, config, excluded)
        _write_report_files(out, report)
        print(report.to_text())
    elif args.mode == "sweep":
        ks = _parse_int_list(args.ks, "--ks")
        reports = sweep_feature_counts(cohort, ks, config)
        for k, report in zip(ks, reports):
            _write_report_files(out, report, stem=f"report_k{k}")
        _write_xy_csv(out / "sweep.csv", [(k, r.mean_accuracy) for k, r in zip(ks, reports)], ("k_per_channel", "mean_accuracy"))
        for k, report in zip(ks, reports):
            print(f"k={k}: {100 * report.mean_accuracy:.2f} +/- {100 * report.sem:.2f} % (SEM)")
    elif args.mode == "sota":
        pipe_report, sota_report = sota_protocol(cohort, config, args.sota_females, args.sota_males)
        _write_report_files(out, pipe_report, stem="report_pipeline")
        _write_report_files(out, sota_report, stem="report_sota")
        for report in (pipe_report, sota_report):
            print(f"{report.label}: {100 * report.mean_accuracy:.2f} % (SD {100 * report.sd:.2f} %)")
    else:  # sd-curve
        sizes = _parse_int_list(args.sizes, "--sizes")
        results = sd_vs_users(cohort, sizes, config)
        for size, report in results:
            _write_report_files(out, report, stem=f"report_n{size}")
        _write_xy_csv(out / "sd_curve.csv", sd_curve(results), ("n_users", "sd"))
        for size, sd_val in sd_curve(results):
            print(f"n={size}: SD {100 * sd_val:.2f} %")
    print(f"results -> {out}")
    return 0


def _cmd_stats(args) -> int:
    _require_files(args.data, args.aoi, args.geometry)
    pipeline = _pipeline_from_args(args)
    with open(args.aoi, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        aoi = AoiSpec({name: tuple(map(float, rect)) for name, rect in raw.items()})
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad AOI file: {exc}") from None
    cohort = load_cohort(args.data)
    result = cohort_stats(cohort, aoi, pipeline, stat_test=args.stat_test)
    _write_manifest(
        Path(str(args.out) + ".manifest.json"), "stats",
        {"pipeline": dataclasses.asdict(pipeline), "stat_test": args.stat_test},
        [args.data, args.aoi], None,
    )
    Path(args.out).write_text(result.to_text(), encoding="utf-8")
    print(result.to_text())
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "segment": _cmd_segment,
    "features": _cmd_features,
    "rank": _cmd_rank,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "stats": _cmd_stats,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help / --version
        return int(exc.code or 0)
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
