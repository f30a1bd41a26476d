"""End-to-end pipeline and report generation.

Wires ingest -> exclusions -> imputation -> reference fit -> sample
curve -> feature ranking/selection -> joint feasibility search, per
lake, then aggregates across lakes. All outputs are JSON (machine) and
CSV (plot data); every report embeds the hash of the run configuration
that produced it, and identical configurations reproduce byte-identical
reports. Expensive feasibility evaluations are cached on disk keyed by
(lake, stage, config hash) so tolerance re-runs skip refits.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import dataset as ds
from .errors import ConfigError, LimnoplanError
from .evaluation import (
    DEFAULT_TOLERANCE,
    EvalMetrics,
    SampleCurve,
    SizeGridSpec,
    fit_reference,
    sample_curve,
    score_predictions,
)
from .imputation import CompletedMatrix, ImputeConfig, ImputeReport, impute_series
from .joint import FeasibilityGrid, JointSummary, MinimalConfig, aggregate_configs, feasibility_grid, minimal_config
from .models import DEFAULT_RIDGE_PENALTY, ForestConfig, predict_ridge, ridge_to_dict
from .selection import FeatureRanking, SelectionResult, aggregate_ranking, forward_selection, rank_features


@dataclass(frozen=True)
class RunConfig:
    """Run-level knobs shared by every stage."""

    test_years: int = 5
    tolerance: float = DEFAULT_TOLERANCE
    penalty: float = DEFAULT_RIDGE_PENALTY
    seed: int = 0
    impute_sweeps: int = 10
    impute_noise: bool = False
    n_trees: int = 200
    min_samples_leaf: int = 2
    features_per_split: int | None = None
    grid_n_min: int | None = None
    grid_stride: int = 1
    lake_ids: tuple[int, ...] | None = None
    exclude_fallback: bool = False
    use_global_ranking: bool = False

    def __post_init__(self) -> None:
        if self.test_years < 1:
            raise ConfigError("test_years must be >= 1")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")

    def grid_spec(self) -> SizeGridSpec:
        return SizeGridSpec(n_min=self.grid_n_min, stride=self.grid_stride)

    def forest_config(self, seed: int) -> ForestConfig:
        return ForestConfig(
            n_trees=self.n_trees,
            min_samples_leaf=self.min_samples_leaf,
            features_per_split=self.features_per_split,
            seed=seed,
        )


@dataclass
class TableRow:
    """One line of the per-lake train/test error table."""

    lake_id: int
    lake_name: str
    train_mae: float
    test_mae: float
    train_nmae: float
    test_nmae: float
    test_le_train: bool


@dataclass
class LakeReport:
    lake_id: int
    lake_name: str
    impute_report: ImputeReport
    completed: CompletedMatrix
    reference_model: dict[str, Any]
    table_row: TableRow
    curve: SampleCurve
    ranking: FeatureRanking
    selection: SelectionResult
    grid: FeasibilityGrid
    minimal: MinimalConfig


@dataclass
class PipelineResult:
    config_hash: str
    reports: list[LakeReport]
    failures: dict[int, str]
    summary: JointSummary
    global_ranking: FeatureRanking
    mean_n_star: float | None
    out_dir: Path


def derive_seed(*parts: int) -> int:
    """Stable nonnegative sub-seed from integer parts."""
    key = ":".join(str(int(p)) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=4).digest(), "big")


def config_fingerprint(config: RunConfig, input_digest: str) -> str:
    payload = json.dumps({"config": asdict(config), "input": input_digest}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return None if math.isnan(value) else value
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# --------------------------------------------------------------------------- #
# Grid (de)serialization and the stage cache
# --------------------------------------------------------------------------- #

def grid_to_dict(grid: FeasibilityGrid) -> dict[str, Any]:
    return {
        "lake_id": grid.lake_id,
        "n_grid": grid.n_grid,
        "p": grid.p,
        "n_pre": grid.n_pre,
        "feature_order": grid.feature_order,
        "nmae": [[n, k, value] for (n, k), value in sorted(grid.nmae.items())],
        "excluded": sorted(list(pair) for pair in grid.excluded),
        "full_nmae": grid.full_nmae,
        "tolerance": grid.tolerance,
    }


def grid_from_dict(payload: dict[str, Any]) -> FeasibilityGrid:
    return FeasibilityGrid(
        lake_id=int(payload["lake_id"]),
        n_grid=[int(n) for n in payload["n_grid"]],
        p=int(payload["p"]),
        n_pre=int(payload["n_pre"]),
        feature_order=list(payload["feature_order"]),
        nmae={(int(n), int(k)): float(v) for n, k, v in payload["nmae"]},
        excluded={(int(n), int(k)) for n, k in payload["excluded"]},
        full_nmae=float(payload["full_nmae"]),
        tolerance=float(payload["tolerance"]),
    )


class StageCache:
    """Disk cache keyed by (lake, stage, config hash)."""

    def __init__(self, root: Path, config_hash: str):
        self.root = root
        self.config_hash = config_hash

    def _path(self, lake_id: int, stage: str) -> Path:
        return self.root / f"{lake_id}_{stage}_{self.config_hash}.json"

    def get(self, lake_id: int, stage: str) -> Any | None:
        path = self._path(lake_id, stage)
        if not path.exists():
            return None
        with open(path) as fh:
            return json.load(fh)

    def put(self, lake_id: int, stage: str, payload: Any) -> None:
        write_json(self._path(lake_id, stage), payload)


# --------------------------------------------------------------------------- #
# Per-lake processing
# --------------------------------------------------------------------------- #

def process_lake(
    series: ds.LakeSeries,
    config: RunConfig,
    cache: StageCache | None = None,
    global_ranking: FeatureRanking | None = None,
) -> LakeReport:
    """All per-lake stages on an already-exclusion-filtered series."""
    split = ds.split_test_block(series, config.test_years)

    impute_config = ImputeConfig(
        max_sweeps=config.impute_sweeps,
        add_noise=config.impute_noise,
        seed=derive_seed(config.seed, series.lake_id, 0),
    )
    completed, impute_report = impute_series(series, impute_config)

    schema = completed.feature_schema
    model, X_train, y_train = fit_reference(split, completed, schema, penalty=config.penalty)
    train_metrics = score_predictions(y_train, predict_ridge(model, X_train))
    X_test = completed.values[split.test_rows]
    y_test = ds.sdd_values(split.test)
    test_metrics = score_predictions(y_test, predict_ridge(model, X_test))
    table_row = TableRow(
        lake_id=series.lake_id,
        lake_name=series.name,
        train_mae=train_metrics.mae,
        test_mae=test_metrics.mae,
        train_nmae=train_metrics.nmae,
        test_nmae=test_metrics.nmae,
        test_le_train=test_metrics.nmae <= train_metrics.nmae,
    )

    curve = sample_curve(split, completed, config.grid_spec(), config.tolerance, config.penalty)

    forest_config = config.forest_config(derive_seed(config.seed, series.lake_id, 1))
    ranking = rank_features(split, completed, forest_config)
    selection = forward_selection(split, completed, ranking, config.tolerance, config.penalty)

    joint_ranking = global_ranking if (config.use_global_ranking and global_ranking) else ranking
    grid = None
    if cache is not None:
        cached = cache.get(series.lake_id, "grid")
        if cached is not None:
            grid = grid_from_dict(cached).rethreshold(config.tolerance)
    if grid is None:
        grid = feasibility_grid(
            split, completed, joint_ranking, config.grid_spec(), config.tolerance, config.penalty
        )
        if cache is not None:
            cache.put(series.lake_id, "grid", grid_to_dict(grid))
    minimal = minimal_config(grid)

    return LakeReport(
        lake_id=series.lake_id,
        lake_name=series.name,
        impute_report=impute_report,
        completed=completed,
        reference_model=ridge_to_dict(model),
        table_row=table_row,
        curve=curve,
        ranking=ranking,
        selection=selection,
        grid=grid,
        minimal=minimal,
    )


def train_test_table(rows: Sequence[TableRow]) -> str:
    """Fixed-width text table of per-lake train/test errors.

    The flag column marks lakes whose test error does not exceed the
    training error.
    """
    header = f"{'lake':<24} {'train_mae':>9} {'test_mae':>9} {'train_nmae':>10} {'test_nmae':>9}  test<=train"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row.lake_name:<24} {row.train_mae:>9.3f} {row.test_mae:>9.3f} "
            f"{row.train_nmae:>10.3f} {row.test_nmae:>9.3f}  {'*' if row.test_le_train else ''}"
        )
    return "\n".join(lines)


# --------------------------------------------------------------------------- #
# Whole-run orchestration
# --------------------------------------------------------------------------- #

def _select_series(
    lakes: Sequence[ds.LakeSeries], lake_ids: tuple[int, ...] | None
) -> list[ds.LakeSeries]:
    if lake_ids is None:
        return sorted(lakes, key=lambda s: s.lake_id)
    by_id = {s.lake_id: s for s in lakes}
    unknown = [i for i in lake_ids if i not in by_id]
    if unknown:
        raise ConfigError(f"unknown lake id(s): {', '.join(map(str, unknown))}")
    return [by_id[i] for i in sorted(set(lake_ids))]


def run_pipeline(
    lakes: Sequence[ds.LakeSeries],
    config: RunConfig,
    out_dir: Path | str,
    input_digest: str = "",
    workers: int = 1,
) -> PipelineResult:
    """Process every requested lake and write the report bundle."""
    out_dir = Path(out_dir)
    selected = _select_series(lakes, config.lake_ids)
    selected = [ds.apply_exclusions(s) for s in selected]
    if not selected:
        raise ConfigError("no lakes to process")

    config_hash = config_fingerprint(config, input_digest)
    cache = StageCache(out_dir / "cache", config_hash)

    global_ranking: FeatureRanking | None = None
    reports: dict[int, LakeReport] = {}
    failures: dict[int, str] = {}

    def one(series: ds.LakeSeries) -> tuple[int, LakeReport | None, str | None]:
        try:
            return series.lake_id, process_lake(series, config, cache, global_ranking), None
        except LimnoplanError as exc:
            return series.lake_id, None, str(exc)

    if config.use_global_ranking:
        # Two passes: rankings first (serial work lives inside process_lake
        # anyway), then the joint stage sees the cross-lake average.
        prelim: list[FeatureRanking] = []
        for series in selected:
            try:
                split = ds.split_test_block(series, config.test_years)
                impute_config = ImputeConfig(
                    max_sweeps=config.impute_sweeps,
                    add_noise=config.impute_noise,
                    seed=derive_seed(config.seed, series.lake_id, 0),
                )
                completed, _ = impute_series(series, impute_config)
                forest_config = config.forest_config(derive_seed(config.seed, series.lake_id, 1))
                prelim.append(rank_features(split, completed, forest_config))
            except LimnoplanError:
                continue
        if prelim:
            global_ranking = aggregate_ranking(prelim)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, selected))
    else:
        outcomes = [one(series) for series in selected]
    for lake_id, report, error in outcomes:
        if report is not None:
            reports[lake_id] = report
        else:
            failures[lake_id] = error or "unknown failure"

    ordered = [reports[i] for i in sorted(reports)]
    if not ordered:
        raise ConfigError(
            "every lake failed: " + "; ".join(f"{i}: {m}" for i, m in sorted(failures.items()))
        )

    summary = aggregate_configs([r.minimal for r in ordered], config.exclude_fallback)
    agg_ranking = aggregate_ranking([r.ranking for r in ordered])
    star_values = [r.curve.n_star for r in ordered if r.curve.n_star is not None]
    mean_n_star = float(np.mean(star_values)) if star_values else None

    _write_bundle(out_dir, config, config_hash, ordered, failures, summary, agg_ranking, mean_n_star)
    return PipelineResult(
        config_hash=config_hash,
        reports=ordered,
        failures=failures,
        summary=summary,
        global_ranking=agg_ranking,
        mean_n_star=mean_n_star,
        out_dir=out_dir,
    )


def _write_bundle(
    out_dir: Path,
    config: RunConfig,
    config_hash: str,
    reports: list[LakeReport],
    failures: dict[int, str],
    summary: JointSummary,
    agg_ranking: FeatureRanking,
    mean_n_star: float | None,
) -> None:
    write_json(out_dir / "run_config.json", {"config": asdict(config), "config_hash": config_hash})

    for report in reports:
        lake_dir = out_dir / "lakes" / str(report.lake_id)
        write_json(
            lake_dir / "impute_report.json",
            {
                "config_hash": config_hash,
                "sweeps": report.impute_report.sweeps,
                "final_delta": report.impute_report.final_delta,
                "converged": report.impute_report.converged,
                "fill_counts": report.impute_report.fill_counts,
            },
        )
        write_csv(
            lake_dir / "completed.csv",
            report.completed.feature_schema,
            [[repr(float(v)) for v in row] for row in report.completed.values],
        )
        write_json(lake_dir / "reference_model.json", {"config_hash": config_hash, **report.reference_model})
        write_json(
            lake_dir / "metrics.json",
            {"config_hash": config_hash, **_row_dict(report.table_row)},
        )
        write_csv(
            lake_dir / "sample_curve.csv",
            ["n", "nmae"],
            [[n, repr(report.curve.nmae_at[n])] for n in report.curve.grid],
        )
        write_json(
            lake_dir / "sample_curve.json",
            {
                "config_hash": config_hash,
                "n_star": report.curve.n_star,
                "reference_nmae": report.curve.reference_nmae,
                "tolerance": report.curve.tolerance,
            },
        )
        write_json(
            lake_dir / "ranking.json",
            {"config_hash": config_hash, "scores": report.ranking.scores, "order": report.ranking.order},
        )
        write_csv(
            lake_dir / "selection.csv",
            ["k", "nmae"],
            [[k, repr(report.selection.nmae_by_k[k])] for k in sorted(report.selection.nmae_by_k)],
        )
        write_json(
            lake_dir / "selection.json",
            {
                "config_hash": config_hash,
                "k_star": report.selection.k_star,
                "subset": report.selection.subset,
                "full_nmae": report.selection.full_nmae,
            },
        )
        write_csv(
            lake_dir / "grid.csv",
            ["n", "k", "nmae", "feasible"],
            [
                [n, k, repr(report.grid.nmae[(n, k)]), int(report.grid.is_feasible(n, k))]
                for (n, k) in sorted(report.grid.nmae)
            ],
        )
        write_json(
            lake_dir / "minimal_config.json",
            {
                "config_hash": config_hash,
                "lake_id": report.minimal.lake_id,
                "n_hat": report.minimal.n_hat,
                "k_hat": report.minimal.k_hat,
                "selected_features": report.minimal.selected_features,
                "fallback": report.minimal.fallback,
                "tau": report.grid.tau,
                "full_nmae": report.grid.full_nmae,
            },
        )

    write_json(
        out_dir / "summary.json",
        {
            "config_hash": config_hash,
            "lakes": [r.lake_id for r in reports],
            "failures": {str(k): v for k, v in sorted(failures.items())},
            "joint": {
                "median_n": summary.median_n,
                "iqr_n": summary.iqr_n,
                "median_k": summary.median_k,
                "iqr_k": summary.iqr_k,
                "feature_frequency": summary.feature_frequency,
                "fallback_count": summary.fallback_count,
                "n_lakes": summary.n_lakes,
            },
            "minimal_configs": [
                {
                    "lake_id": r.minimal.lake_id,
                    "n_hat": r.minimal.n_hat,
                    "k_hat": r.minimal.k_hat,
                    "selected_features": r.minimal.selected_features,
                    "fallback": r.minimal.fallback,
                }
                for r in reports
            ],
            "aggregate_ranking": {"scores": agg_ranking.scores, "order": agg_ranking.order},
            "mean_n_star": mean_n_star,
            "train_test": [_row_dict(r.table_row) for r in reports],
        },
    )
    write_csv(
        out_dir / "train_test.csv",
        ["lake", "train_mae", "test_mae", "train_nmae", "test_nmae", "test_le_train"],
        [
            [
                r.table_row.lake_name,
                repr(r.table_row.train_mae),
                repr(r.table_row.test_mae),
                repr(r.table_row.train_nmae),
                repr(r.table_row.test_nmae),
                int(r.table_row.test_le_train),
            ]
            for r in reports
        ],
    )


def _row_dict(row: TableRow) -> dict[str, Any]:
    return {
        "lake_id": row.lake_id,
        "lake": row.lake_name,
        "train_mae": row.train_mae,
        "test_mae": row.test_mae,
        "train_nmae": row.train_nmae,
        "test_nmae": row.test_nmae,
        "test_le_train": row.test_le_train,
    }
