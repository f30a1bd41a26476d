"""Command-line front end.

Commands: ingest, lakes rank, impute, sample-curve, feature-rank,
feature-select, joint, synth, report. Exit codes: 0 success, 1 partial
failure (some lakes failed a stage), 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import dataset as ds
from .errors import ConfigError, LimnoplanError
from .evaluation import SizeGridSpec, sample_curve
from .imputation import ImputeConfig, impute_series
from .joint import aggregate_configs, feasibility_grid, minimal_config
from .models import ForestConfig
from .report import (
    RunConfig,
    derive_seed,
    grid_to_dict,
    run_pipeline,
    train_test_table,
    write_csv,
    write_json,
)
from .selection import aggregate_ranking, forward_selection, rank_features
from .synth import config_from_dict, generate_lake


def _add_input(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="long-format monitoring CSV")
    parser.add_argument("--na-token", default="NA", help="extra token treated as missing")


def _add_protocol_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--test-years", type=int, default=5)
    parser.add_argument("--tolerance", type=float, default=0.05)
    parser.add_argument("--lambda", dest="penalty", type=float, default=1.0, help="ridge penalty")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-stride", type=int, default=1, help="training-size grid stride")
    parser.add_argument("--n-min", type=int, default=None, help="smallest training size on the grid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="limnoplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and validate a monitoring CSV")
    _add_input(p)
    p.add_argument("--out", default=None, help="write a per-lake summary JSON")

    lakes = sub.add_parser("lakes", help="lake-level utilities")
    lakes_sub = lakes.add_subparsers(dest="lakes_command", required=True)
    p = lakes_sub.add_parser("rank", help="rank lakes by data richness")
    _add_input(p)
    p.add_argument("--top", type=int, default=30)
    p.add_argument("--out", required=True)

    p = sub.add_parser("impute", help="complete one lake's covariates")
    _add_input(p)
    p.add_argument("--lake", type=int, required=True)
    p.add_argument("--sweeps", type=int, default=10)
    p.add_argument("--noise", choices=["on", "off"], default="off")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="completed covariate CSV")
    p.add_argument("--report", default=None, help="fit report JSON (default: <out>.json)")

    p = sub.add_parser("sample-curve", help="test error vs training size for one lake")
    _add_input(p)
    p.add_argument("--lake", type=int, required=True)
    _add_protocol_flags(p)
    p.add_argument("--out", required=True, help="CSV of n,nmae (JSON sidecar alongside)")

    p = sub.add_parser("feature-rank", help="forest-importance ranking for one lake")
    _add_input(p)
    p.add_argument("--lake", type=int, required=True)
    p.add_argument("--test-years", type=int, default=5)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)

    p = sub.add_parser("feature-select", help="greedy forward selection for one lake")
    _add_input(p)
    p.add_argument("--lake", type=int, required=True)
    _add_protocol_flags(p)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--out", required=True, help="CSV of k,nmae (JSON sidecar alongside)")

    p = sub.add_parser("joint", help="minimal (samples, features) configuration per lake")
    _add_input(p)
    p.add_argument("--lakes", default=None, help="JSON file with the lake ids to process")
    _add_protocol_flags(p)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--exclude-fallback", action="store_true")
    p.add_argument("--global-ranking", action="store_true", help="rank once across lakes")
    p.add_argument("--out", required=True)
    p.add_argument("--emit-grid", default=None, help="dump n,k,nmae,feasible rows to CSV")

    p = sub.add_parser("synth", help="generate a synthetic lake CSV with ground truth")
    p.add_argument("--config", required=True, help="generator config JSON")
    p.add_argument("--out", required=True, help="CSV in the ingest layout")
    p.add_argument("--truth", default=None, help="ground-truth JSON")

    p = sub.add_parser("report", help="full pipeline over all (or selected) lakes")
    _add_input(p)
    p.add_argument("--lakes", default=None, help="JSON file with the lake ids to process")
    _add_protocol_flags(p)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--exclude-fallback", action="store_true")
    p.add_argument("--global-ranking", action="store_true")
    p.add_argument("--out-dir", required=True)

    return parser


def _load_lakes(args: argparse.Namespace, exclusions: bool = True):
    schema = ds.IngestSchema().with_na_token(args.na_token)
    path = Path(args.input)
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        lakes, errors = ds.parse_dataset(fh, schema)
    if exclusions:
        lakes = [ds.apply_exclusions(s) for s in lakes]
    return lakes, errors


def _one_lake(lakes, lake_id: int) -> ds.LakeSeries:
    for series in lakes:
        if series.lake_id == lake_id:
            return series
    raise ConfigError(f"lake {lake_id} not present in the input")


def _lake_ids_from_file(path: str | None) -> tuple[int, ...] | None:
    if path is None:
        return None
    with open(path) as fh:
        payload = json.load(fh)
    ids = payload["lakes"] if isinstance(payload, dict) else payload
    return tuple(int(i) for i in ids)


def _input_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _cmd_ingest(args) -> int:
    lakes, errors = _load_lakes(args, exclusions=False)
    for err in errors:
        print(f"line {err.line}: {err.message}", file=sys.stderr)
    summary = []
    for series in lakes:
        observed = sum(1 for r in series.records if r.sdd is not None)
        summary.append(
            {
                "lake_id": series.lake_id,
                "lake": series.name,
                "rows": len(series.records),
                "rows_with_target": observed,
                "features": series.feature_schema,
            }
        )
    payload = {"lakes": summary, "row_errors": len(errors)}
    if args.out:
        write_json(Path(args.out), payload)
    print(f"parsed {len(lakes)} lake(s), {len(errors)} malformed row(s) skipped")
    return 0


def _cmd_lakes_rank(args) -> int:
    lakes, _ = _load_lakes(args)
    if args.top > len(lakes):
        raise ConfigError(f"--top {args.top} exceeds the {len(lakes)} lakes in the input")
    ranked = ds.select_top_lakes(lakes, args.top)
    profiles = {s.lake_id: ds.missingness_profile(s) for s in lakes}
    payload = {
        "missingness_after_exclusions": True,
        "lakes": ranked,
        "profiles": [
            {
                "lake_id": lake_id,
                "lake_mean": profiles[lake_id].lake_mean,
                "per_feature": profiles[lake_id].per_feature,
            }
            for lake_id in ranked
        ],
    }
    write_json(Path(args.out), payload)
    print(f"ranked {len(lakes)} lakes; kept top {args.top}")
    return 0


def _cmd_impute(args) -> int:
    lakes, _ = _load_lakes(args)
    series = _one_lake(lakes, args.lake)
    config = ImputeConfig(max_sweeps=args.sweeps, add_noise=args.noise == "on", seed=args.seed)
    completed, fit_report = impute_series(series, config)
    write_csv(
        Path(args.out),
        completed.feature_schema,
        [[repr(float(v)) for v in row] for row in completed.values],
    )
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".json")
    write_json(
        report_path,
        {
            "lake_id": series.lake_id,
            "sweeps": fit_report.sweeps,
            "final_delta": fit_report.final_delta,
            "converged": fit_report.converged,
            "fill_counts": fit_report.fill_counts,
        },
    )
    print(f"lake {series.lake_id}: {fit_report.sweeps} sweep(s), final delta {fit_report.final_delta:.3g}")
    return 0


def _cmd_sample_curve(args) -> int:
    lakes, _ = _load_lakes(args)
    series = _one_lake(lakes, args.lake)
    split = ds.split_test_block(series, args.test_years)
    completed, _ = impute_series(series, ImputeConfig(seed=derive_seed(args.seed, series.lake_id, 0)))
    curve = sample_curve(
        split,
        completed,
        SizeGridSpec(n_min=args.n_min, stride=args.n_stride),
        args.tolerance,
        args.penalty,
    )
    out = Path(args.out)
    write_csv(out, ["n", "nmae"], [[n, repr(curve.nmae_at[n])] for n in curve.grid])
    write_json(
        out.with_suffix(".json"),
        {
            "lake_id": series.lake_id,
            "n_star": curve.n_star,
            "reference_nmae": curve.reference_nmae,
            "tolerance": curve.tolerance,
        },
    )
    print(f"lake {series.lake_id}: n_star={curve.n_star}, reference nMAE {curve.reference_nmae:.4f}")
    return 0


def _cmd_feature_rank(args) -> int:
    lakes, _ = _load_lakes(args)
    series = _one_lake(lakes, args.lake)
    split = ds.split_test_block(series, args.test_years)
    completed, _ = impute_series(series, ImputeConfig(seed=derive_seed(args.seed, series.lake_id, 0)))
    ranking = rank_features(split, completed, ForestConfig(n_trees=args.trees, seed=args.seed))
    write_json(Path(args.out), {"lake_id": series.lake_id, "scores": ranking.scores, "order": ranking.order})
    print(f"lake {series.lake_id}: top feature {ranking.order[0]}")
    return 0


def _cmd_feature_select(args) -> int:
    lakes, _ = _load_lakes(args)
    series = _one_lake(lakes, args.lake)
    split = ds.split_test_block(series, args.test_years)
    completed, _ = impute_series(series, ImputeConfig(seed=derive_seed(args.seed, series.lake_id, 0)))
    ranking = rank_features(split, completed, ForestConfig(n_trees=args.trees, seed=args.seed))
    result = forward_selection(split, completed, ranking, args.tolerance, args.penalty)
    out = Path(args.out)
    write_csv(out, ["k", "nmae"], [[k, repr(result.nmae_by_k[k])] for k in sorted(result.nmae_by_k)])
    write_json(
        out.with_suffix(".json"),
        {
            "lake_id": series.lake_id,
            "k_star": result.k_star,
            "subset": result.subset,
            "full_nmae": result.full_nmae,
        },
    )
    print(f"lake {series.lake_id}: k_star={result.k_star} ({', '.join(result.subset)})")
    return 0


def _cmd_joint(args) -> int:
    lakes, _ = _load_lakes(args)
    wanted = _lake_ids_from_file(args.lakes)
    if wanted is not None:
        lakes = [s for s in lakes if s.lake_id in set(wanted)]
    if not lakes:
        raise ConfigError("no lakes to process")

    rankings = {}
    prepared = {}
    failures: dict[int, str] = {}
    for series in sorted(lakes, key=lambda s: s.lake_id):
        try:
            split = ds.split_test_block(series, args.test_years)
            completed, _ = impute_series(
                series, ImputeConfig(seed=derive_seed(args.seed, series.lake_id, 0))
            )
            ranking = rank_features(
                split,
                completed,
                ForestConfig(n_trees=args.trees, seed=derive_seed(args.seed, series.lake_id, 1)),
            )
            prepared[series.lake_id] = (split, completed)
            rankings[series.lake_id] = ranking
        except LimnoplanError as exc:
            failures[series.lake_id] = str(exc)

    if not prepared:
        raise ConfigError(
            "every lake failed: " + "; ".join(f"{i}: {m}" for i, m in sorted(failures.items()))
        )

    shared = aggregate_ranking(list(rankings.values())) if args.global_ranking else None
    configs = []
    grid_rows = []
    for lake_id, (split, completed) in sorted(prepared.items()):
        try:
            grid = feasibility_grid(
                split,
                completed,
                shared if shared is not None else rankings[lake_id],
                SizeGridSpec(n_min=args.n_min, stride=args.n_stride),
                args.tolerance,
                args.penalty,
            )
        except LimnoplanError as exc:
            failures[lake_id] = str(exc)
            continue
        configs.append(minimal_config(grid))
        if args.emit_grid:
            grid_rows.extend(
                [lake_id, n, k, repr(grid.nmae[(n, k)]), int(grid.is_feasible(n, k))]
                for (n, k) in sorted(grid.nmae)
            )

    if not configs:
        raise ConfigError("every lake failed the joint stage")
    summary = aggregate_configs(configs, args.exclude_fallback)
    write_json(
        Path(args.out),
        {
            "minimal_configs": [
                {
                    "lake_id": c.lake_id,
                    "n_hat": c.n_hat,
                    "k_hat": c.k_hat,
                    "selected_features": c.selected_features,
                    "fallback": c.fallback,
                }
                for c in configs
            ],
            "summary": {
                "median_n": summary.median_n,
                "iqr_n": summary.iqr_n,
                "median_k": summary.median_k,
                "iqr_k": summary.iqr_k,
                "feature_frequency": summary.feature_frequency,
                "fallback_count": summary.fallback_count,
                "n_lakes": summary.n_lakes,
            },
            "failures": {str(k): v for k, v in sorted(failures.items())},
        },
    )
    if args.emit_grid:
        write_csv(Path(args.emit_grid), ["lake_id", "n", "k", "nmae", "feasible"], grid_rows)
    print(
        f"{summary.n_lakes} lake(s): median n_hat {summary.median_n:g}, median k_hat {summary.median_k:g}"
    )
    return 1 if failures else 0


def _cmd_synth(args) -> int:
    with open(args.config) as fh:
        config = config_from_dict(json.load(fh))
    series, truth = generate_lake(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        ds.write_series_csv(series, fh)
    if args.truth:
        write_json(
            Path(args.truth),
            {
                "weights": truth.weights.tolist(),
                "intercept": truth.intercept,
                "noise_sd": truth.noise_sd,
                "feature_names": truth.feature_names,
                "covariates": truth.covariates.tolist(),
                "sdd": truth.sdd.tolist(),
                "missing_mask": truth.missing_mask.astype(int).tolist(),
            },
        )
    print(f"wrote {len(series.records)} rows for lake {series.lake_id}")
    return 0


def _cmd_report(args) -> int:
    lakes, _ = _load_lakes(args, exclusions=False)
    config = RunConfig(
        test_years=args.test_years,
        tolerance=args.tolerance,
        penalty=args.penalty,
        seed=args.seed,
        n_trees=args.trees,
        grid_n_min=args.n_min,
        grid_stride=args.n_stride,
        lake_ids=_lake_ids_from_file(args.lakes),
        exclude_fallback=args.exclude_fallback,
        use_global_ranking=args.global_ranking,
    )
    result = run_pipeline(
        lakes, config, Path(args.out_dir), input_digest=_input_digest(args.input), workers=args.workers
    )
    print(train_test_table([r.table_row for r in result.reports]))
    if result.mean_n_star is not None:
        print(f"\nmean minimal sample count: {result.mean_n_star:.1f}")
    print(
        f"joint: median n_hat {result.summary.median_n:g} (IQR {result.summary.iqr_n:g}), "
        f"median k_hat {result.summary.median_k:g} (IQR {result.summary.iqr_k:g}), "
        f"{result.summary.fallback_count} fallback lake(s)"
    )
    for lake_id, message in sorted(result.failures.items()):
        print(f"lake {lake_id} skipped: {message}", file=sys.stderr)
    return 1 if result.failures else 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "impute": _cmd_impute,
    "sample-curve": _cmd_sample_curve,
    "feature-rank": _cmd_feature_rank,
    "feature-select": _cmd_feature_select,
    "joint": _cmd_joint,
    "synth": _cmd_synth,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "lakes":
            return _cmd_lakes_rank(args)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LimnoplanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
