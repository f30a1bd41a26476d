"""Pipeline bundle, report determinism, and the command-line surface."""

import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from limnoplan.cli import main
from limnoplan.dataset import parse_dataset, write_series_csv
from limnoplan.errors import ConfigError
from limnoplan.report import RunConfig, run_pipeline, train_test_table
from limnoplan.synth import SynthConfig, generate_lake

from conftest import series_from_arrays


def synth_csv(path: Path, configs: list[SynthConfig]) -> list:
    """Write several synthetic lakes into one ingest-layout CSV."""
    chunks = []
    for i, config in enumerate(configs):
        series, _ = generate_lake(config)
        buf = io.StringIO()
        write_series_csv(series, buf)
        text = buf.getvalue()
        chunks.append(text if i == 0 else text.split("\n", 1)[1])
    path.write_text("".join(chunks))
    return configs


def small_lake_configs(n_lakes=3, n_samples=140):
    return [
        SynthConfig(
            n_samples=n_samples,
            n_features=4,
            true_weights=(1.0, -0.5, 0.3, 0.0),
            missing_fraction=0.15,
            cross_correlation=0.5,
            noise_sd=0.4,
            sampling_interval_days=30,
            lake_id=100 + i,
            lake_name=f"Synth {100 + i}",
            seed=50 + i,
        )
        for i in range(n_lakes)
    ]


FAST = dict(n_trees=25, grid_stride=4, impute_sweeps=8)


class TestPipeline:
    def test_three_lakes_full_bundle(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs())
        with open(csv_path) as fh:
            lakes, _ = parse_dataset(fh)
        result = run_pipeline(lakes, RunConfig(seed=1, **FAST), tmp_path / "out")
        assert len(result.reports) == 3 and not result.failures
        assert (tmp_path / "out" / "summary.json").exists()
        for report in result.reports:
            lake_dir = tmp_path / "out" / "lakes" / str(report.lake_id)
            for name in (
                "impute_report.json",
                "completed.csv",
                "reference_model.json",
                "metrics.json",
                "sample_curve.csv",
                "sample_curve.json",
                "ranking.json",
                "selection.csv",
                "selection.json",
                "grid.csv",
                "minimal_config.json",
            ):
                assert (lake_dir / name).exists(), name
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["lakes"] == [100, 101, 102]
        assert summary["config_hash"] == result.config_hash
        assert summary["joint"]["n_lakes"] == 3

    def test_reports_embed_config_hash(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs(1))
        with open(csv_path) as fh:
            lakes, _ = parse_dataset(fh)
        result = run_pipeline(lakes, RunConfig(seed=2, **FAST), tmp_path / "out")
        lake_dir = tmp_path / "out" / "lakes" / "100"
        for name in ("metrics.json", "ranking.json", "minimal_config.json", "sample_curve.json"):
            payload = json.loads((lake_dir / name).read_text())
            assert payload["config_hash"] == result.config_hash

    def test_byte_identical_reruns(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs())
        with open(csv_path) as fh:
            lakes, _ = parse_dataset(fh)
        config = RunConfig(seed=7, **FAST)
        run_pipeline(lakes, config, tmp_path / "a", input_digest="d1")
        run_pipeline(lakes, config, tmp_path / "b", input_digest="d1")
        files_a = sorted(p for p in (tmp_path / "a").rglob("*") if p.is_file() and "cache" not in p.parts)
        files_b = sorted(p for p in (tmp_path / "b").rglob("*") if p.is_file() and "cache" not in p.parts)
        assert [p.relative_to(tmp_path / "a") for p in files_a] == [
            p.relative_to(tmp_path / "b") for p in files_b
        ]
        for pa, pb in zip(files_a, files_b):
            assert pa.read_bytes() == pb.read_bytes(), pa.name

    def test_partial_failure_skips_lake(self, tmp_path):
        configs = small_lake_configs(2)
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, configs)
        # A lake whose record is too short to split joins the two good ones.
        with open(csv_path) as fh:
            lakes, _ = parse_dataset(fh)
        runt = series_from_arrays(999, np.array([2.0, 2.1]), np.ones((2, 4)), lakes[0].feature_schema)
        result = run_pipeline(lakes + [runt], RunConfig(seed=3, **FAST), tmp_path / "out")
        assert sorted(r.lake_id for r in result.reports) == [100, 101]
        assert 999 in result.failures

    def test_every_lake_failing_raises_config_error(self, tmp_path):
        runt = series_from_arrays(7, np.array([2.0, 2.1]), np.ones((2, 2)), ["a", "b"])
        with pytest.raises(ConfigError):
            run_pipeline([runt], RunConfig(seed=0, **FAST), tmp_path / "out")

    def test_lake_selection_and_unknown_id(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs())
        with open(csv_path) as fh:
            lakes, _ = parse_dataset(fh)
        result = run_pipeline(
            lakes, RunConfig(seed=1, lake_ids=(101,), **FAST), tmp_path / "out"
        )
        assert [r.lake_id for r in result.reports] == [101]
        with pytest.raises(ConfigError):
            run_pipeline(lakes, RunConfig(seed=1, lake_ids=(555,), **FAST), tmp_path / "o2")

    def test_parallel_workers_match_serial_output(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs())
        with open(csv_path) as fh:
            lakes, _ = parse_dataset(fh)
        config = RunConfig(seed=6, **FAST)
        run_pipeline(lakes, config, tmp_path / "serial", input_digest="x", workers=1)
        run_pipeline(lakes, config, tmp_path / "parallel", input_digest="x", workers=3)
        a = (tmp_path / "serial" / "summary.json").read_bytes()
        b = (tmp_path / "parallel" / "summary.json").read_bytes()
        assert a == b

    def test_global_ranking_mode(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs(2))
        with open(csv_path) as fh:
            lakes, _ = parse_dataset(fh)
        result = run_pipeline(
            lakes, RunConfig(seed=2, use_global_ranking=True, **FAST), tmp_path / "out"
        )
        assert len(result.reports) == 2
        orders = {tuple(r.grid.feature_order) for r in result.reports}
        assert len(orders) == 1  # every lake's joint stage used the same ranking

    def test_cache_reuse_preserves_results(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs(1))
        with open(csv_path) as fh:
            lakes, _ = parse_dataset(fh)
        config = RunConfig(seed=4, **FAST)
        out = tmp_path / "out"
        first = run_pipeline(lakes, config, out, input_digest="dd")
        summary_before = (out / "summary.json").read_bytes()
        again = run_pipeline(lakes, config, out, input_digest="dd")
        assert (out / "summary.json").read_bytes() == summary_before
        assert again.reports[0].minimal == first.reports[0].minimal


class TestTrainTestTable:
    def test_perfect_fit_flagged_with_near_zero_rows(self, tmp_path):
        config = SynthConfig(
            n_samples=100,
            n_features=2,
            true_weights=(1.0, -0.5),
            noise_sd=0.0,
            seasonal_amplitude=0.0,
            sampling_interval_days=30,
            seed=8,
        )
        series, _ = generate_lake(config)
        result = run_pipeline([series], RunConfig(seed=1, penalty=1e-8, **FAST), tmp_path / "out")
        row = result.reports[0].table_row
        assert row.train_mae < 1e-5 and row.test_mae < 1e-5
        assert row.train_nmae < 1e-5 and row.test_nmae < 1e-5
        assert row.test_le_train == (row.test_nmae <= row.train_nmae)

    def test_overfit_case_not_flagged(self, rng, tmp_path):
        # Training pool barely larger than the feature count: in-sample error
        # collapses while the held-out block suffers.
        p = 3
        X = rng.normal(size=(34, p))
        sdd = 4 + X @ np.array([1.0, -0.5, 0.3]) + rng.normal(0, 0.5, 34)
        # 150-day cadence with a 12-year window leaves exactly p+1 pre rows.
        series = series_from_arrays(5, sdd, X, [f"f{j}" for j in range(p)], step_days=150)
        result = run_pipeline(
            [series], RunConfig(seed=1, test_years=12, penalty=1e-6, **FAST), tmp_path / "out"
        )
        row = result.reports[0].table_row
        assert result.reports[0].curve.grid == [p + 1]
        assert row.test_nmae > row.train_nmae
        assert not row.test_le_train

    def test_flag_marks_rows_where_test_not_worse(self):
        from limnoplan.report import TableRow

        rows = [
            TableRow(1, "Easygoing Pond", 0.5, 0.4, 0.10, 0.08, True),
            TableRow(2, "Harder Lake", 0.5, 0.9, 0.10, 0.18, False),
        ]
        lines = train_test_table(rows).splitlines()
        assert lines[2].rstrip().endswith("*")
        assert not lines[3].rstrip().endswith("*")

    def test_formatted_table_columns(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs(2))
        with open(csv_path) as fh:
            lakes, _ = parse_dataset(fh)
        result = run_pipeline(lakes, RunConfig(seed=1, **FAST), tmp_path / "out")
        text = train_test_table([r.table_row for r in result.reports])
        head = text.splitlines()[0]
        for col in ("lake", "train_mae", "test_mae", "train_nmae", "test_nmae"):
            assert col in head
        with open(tmp_path / "out" / "train_test.csv") as fh:
            header = next(csv.reader(fh))
        assert header == ["lake", "train_mae", "test_mae", "train_nmae", "test_nmae", "test_le_train"]


class TestCli:
    def _write_synth_inputs(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs(2))
        return csv_path

    def test_synth_and_ingest_round_trip(self, tmp_path, capsys):
        config_path = tmp_path / "synth.json"
        config_path.write_text(json.dumps({"n_samples": 40, "n_features": 3, "seed": 2}))
        out_csv = tmp_path / "lake.csv"
        truth_path = tmp_path / "truth.json"
        assert main(["synth", "--config", str(config_path), "--out", str(out_csv), "--truth", str(truth_path)]) == 0
        assert main(["ingest", "--input", str(out_csv)]) == 0
        out = capsys.readouterr().out
        assert "parsed 1 lake(s)" in out
        truth = json.loads(truth_path.read_text())
        assert len(truth["sdd"]) == 40

    def test_lakes_rank_command(self, tmp_path):
        csv_path = self._write_synth_inputs(tmp_path)
        out = tmp_path / "rank.json"
        assert main(["lakes", "rank", "--input", str(csv_path), "--top", "2", "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert len(payload["lakes"]) == 2
        assert payload["missingness_after_exclusions"] is True

    def test_impute_command(self, tmp_path):
        csv_path = self._write_synth_inputs(tmp_path)
        out = tmp_path / "completed.csv"
        code = main(["impute", "--input", str(csv_path), "--lake", "100", "--out", str(out)])
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["x01", "x02", "x03", "x04"]
        assert all(cell not in ("", "nan") for row in rows[1:] for cell in row)
        report = json.loads((tmp_path / "completed.json").read_text())
        assert report["lake_id"] == 100 and report["sweeps"] >= 1

    def test_sample_curve_command(self, tmp_path):
        csv_path = self._write_synth_inputs(tmp_path)
        out = tmp_path / "curve.csv"
        code = main(
            ["sample-curve", "--input", str(csv_path), "--lake", "100", "--n-stride", "4", "--out", str(out)]
        )
        assert code == 0
        sidecar = json.loads((tmp_path / "curve.json").read_text())
        assert sidecar["n_star"] is not None and sidecar["reference_nmae"] > 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["n", "nmae"] and len(rows) > 2

    def test_feature_commands(self, tmp_path):
        csv_path = self._write_synth_inputs(tmp_path)
        rank_out = tmp_path / "ranking.json"
        assert main(
            ["feature-rank", "--input", str(csv_path), "--lake", "100", "--trees", "20", "--out", str(rank_out)]
        ) == 0
        ranking = json.loads(rank_out.read_text())
        assert set(ranking["scores"]) == {"x01", "x02", "x03", "x04"}

        select_out = tmp_path / "selection.csv"
        assert main(
            ["feature-select", "--input", str(csv_path), "--lake", "100", "--trees", "20", "--out", str(select_out)]
        ) == 0
        sidecar = json.loads((tmp_path / "selection.json").read_text())
        assert 1 <= sidecar["k_star"] <= 4

    def test_joint_command_with_grid_dump(self, tmp_path):
        csv_path = self._write_synth_inputs(tmp_path)
        out = tmp_path / "joint.json"
        grid_csv = tmp_path / "grid.csv"
        code = main(
            [
                "joint",
                "--input", str(csv_path),
                "--trees", "20",
                "--n-stride", "6",
                "--out", str(out),
                "--emit-grid", str(grid_csv),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert len(payload["minimal_configs"]) == 2
        assert payload["summary"]["n_lakes"] == 2
        with open(grid_csv) as fh:
            header = next(csv.reader(fh))
        assert header == ["lake_id", "n", "k", "nmae", "feasible"]

    def test_report_command(self, tmp_path):
        csv_path = self._write_synth_inputs(tmp_path)
        out_dir = tmp_path / "bundle"
        code = main(
            [
                "report",
                "--input", str(csv_path),
                "--trees", "20",
                "--n-stride", "4",
                "--out-dir", str(out_dir),
            ]
        )
        assert code == 0
        assert (out_dir / "summary.json").exists()

    def test_report_partial_failure_exit_code(self, tmp_path):
        csv_path = tmp_path / "lakes.csv"
        synth_csv(csv_path, small_lake_configs(2))
        # Append a lake whose record cannot span the test window.
        with open(csv_path, "a") as fh:
            fh.write("999,Runt Pond,2020-01-01,No,2.0,1,1,1,1\n")
            fh.write("999,Runt Pond,2020-06-01,No,2.1,1,1,1,1\n")
        code = main(
            [
                "report",
                "--input", str(csv_path),
                "--trees", "15",
                "--n-stride", "6",
                "--out-dir", str(tmp_path / "bundle"),
            ]
        )
        assert code == 1
        summary = json.loads((tmp_path / "bundle" / "summary.json").read_text())
        assert "999" in summary["failures"]

    def test_missing_input_is_config_error(self, tmp_path):
        assert main(["ingest", "--input", str(tmp_path / "nope.csv")]) == 2

    def test_unknown_lake_is_config_error(self, tmp_path):
        csv_path = self._write_synth_inputs(tmp_path)
        code = main(["impute", "--input", str(csv_path), "--lake", "42", "--out", str(tmp_path / "x.csv")])
        assert code == 2

    def test_empty_lake_selection_is_config_error(self, tmp_path):
        csv_path = self._write_synth_inputs(tmp_path)
        wanted = tmp_path / "wanted.json"
        wanted.write_text(json.dumps({"lakes": []}))
        code = main(
            ["joint", "--input", str(csv_path), "--lakes", str(wanted), "--out", str(tmp_path / "j.json")]
        )
        assert code == 2
