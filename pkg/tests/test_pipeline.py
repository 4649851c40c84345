"""CSV ingestion, pipeline orchestration, CLI behavior, and result emission."""

import csv
import datetime as dt
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

import csas.cli as cli_module
from csas import (
    ConfigError,
    InputValidationError,
    NumericalError,
    PipelineConfig,
    ingest_csv,
    result_to_json,
    run_pipeline,
    sigmoid_ar_predict,
    write_result,
)
from csas.cli import main

from conftest import write_wide_csv

SCHEMA_PATH = Path(__file__).resolve().parents[1] / "src/csas/schemas/result.schema.json"


def write_long_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "date", "count"])
        writer.writerows(rows)
    return path


class TestIngestCsv:
    def test_wide_two_regions_three_days(self, tmp_path):
        path = write_wide_csv(
            tmp_path / "w.csv", {"a": [1, 2, 3], "b": [0, 0, 1]}, 3
        )
        series = ingest_csv(path, "wide")
        assert len(series) == 2
        assert all(len(s) == 3 for s in series)
        assert {s.region_id for s in series} == {"a", "b"}

    def test_long_roundtrip(self, tmp_path):
        rows = [
            ("a", "2020-03-01", 1),
            ("a", "2020-03-02", 2),
            ("b", "2020-03-01", 5),
            ("b", "2020-03-02", 6),
        ]
        series = ingest_csv(write_long_csv(tmp_path / "l.csv", rows), "long")
        by_id = {s.region_id: s for s in series}
        assert list(by_id["a"].counts) == [1, 2]
        assert list(by_id["b"].counts) == [5, 6]

    def test_missing_interior_day_cites_gap_date(self, tmp_path):
        rows = [
            ("a", "2020-03-01", 1),
            ("a", "2020-03-03", 2),
        ]
        with pytest.raises(InputValidationError, match="2020-03-02"):
            ingest_csv(write_long_csv(tmp_path / "l.csv", rows), "long")

    def test_duplicate_region_date_rejected(self, tmp_path):
        rows = [
            ("a", "2020-03-01", 1),
            ("a", "2020-03-01", 2),
        ]
        with pytest.raises(InputValidationError, match="duplicate"):
            ingest_csv(write_long_csv(tmp_path / "l.csv", rows), "long")

    def test_unparseable_count_reports_line(self, tmp_path):
        rows = [("a", "2020-03-01", "x")]
        with pytest.raises(InputValidationError, match="line 2"):
            ingest_csv(write_long_csv(tmp_path / "l.csv", rows), "long")

    def test_mismatched_grids_rejected(self, tmp_path):
        rows = [
            ("a", "2020-03-01", 1),
            ("b", "2020-03-02", 5),
        ]
        with pytest.raises(InputValidationError, match="common grid"):
            ingest_csv(write_long_csv(tmp_path / "l.csv", rows), "long")

    def test_date_range_filter(self, tmp_path):
        rows = [
            ("a", "2020-03-01", 1),
            ("a", "2020-03-02", 2),
            ("a", "2020-03-03", 3),
        ]
        path = write_long_csv(tmp_path / "l.csv", rows)
        series = ingest_csv(
            path, "long",
            start_date=dt.date(2020, 3, 2), end_date=dt.date(2020, 3, 3),
        )
        assert list(series[0].counts) == [2, 3]

    def test_missing_file(self):
        with pytest.raises(InputValidationError, match="not found"):
            ingest_csv("/nonexistent/input.csv", "long")


class TestPipelineConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"delta": 1},
            {"alpha": 0.0},
            {"alpha": 1.0},
            {"ar_order": 3},
            {"aggregate": "median"},
            {"format": "excel"},
        ],
    )
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ConfigError):
            PipelineConfig(input_path="x.csv", **kwargs)

    def test_echo_round_trips_dates(self):
        config = PipelineConfig(
            input_path="x.csv", start_date=dt.date(2020, 3, 1)
        )
        echoed = config.echo()
        assert echoed["start_date"] == "2020-03-01"
        assert echoed["end_date"] is None


@pytest.fixture(scope="module")
def result(two_group_csv):
    config = PipelineConfig(input_path=str(two_group_csv), format="wide")
    return run_pipeline(config)


class TestRunPipeline:
    def test_two_clusters_found(self, result):
        assert result.clustering.num_clusters == 2
        assignment = dict(zip(result.region_ids, result.clustering.assignment))
        assert assignment["flat_a"] == assignment["flat_b"]
        assert assignment["jump_a"] == assignment["jump_b"]
        assert assignment["flat_a"] != assignment["jump_a"]

    def test_jump_cluster_has_change_point(self, result):
        jump = next(c for c in result.clusters if "jump_a" in c.regions)
        assert any(abs(p - 20) <= 1 for p in jump.change_points.points)

    def test_every_segment_has_a_fit(self, result):
        for cluster in result.clusters:
            assert len(cluster.segments) == cluster.change_points.num_segments
            for seg in cluster.segments:
                assert seg.model.n >= 7

    def test_single_region_input(self, tmp_path):
        path = write_wide_csv(tmp_path / "one.csv", {"solo": [3] * 30}, 30)
        config = PipelineConfig(input_path=str(path), format="wide")
        result = run_pipeline(config)
        assert result.clustering.num_clusters == 1
        assert len(result.clusters) == 1
        assert len(result.clusters[0].segments) >= 1

    def test_pooled_count_aggregation(self, two_group_csv):
        config = PipelineConfig(
            input_path=str(two_group_csv), format="wide", aggregate="pooled-count"
        )
        result = run_pipeline(config)
        flat = next(c for c in result.clusters if "flat_a" in c.regions)
        np.testing.assert_allclose(flat.representative, np.log1p(10.0))

    def test_json_document_validates_against_schema(self, result):
        doc = result_to_json(result)
        schema = json.loads(SCHEMA_PATH.read_text())
        jsonschema.validate(doc, schema)

    def test_written_fit_csv_round_trips(self, result, tmp_path):
        write_result(result, tmp_path)
        doc = json.loads((tmp_path / "result.json").read_text())
        for cluster in doc["clusters"]:
            csv_path = tmp_path / f"cluster_{cluster['id']}_fit.csv"
            with open(csv_path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            observed = [float(r["observed"]) for r in rows]
            betas = {
                s_idx + 1: seg["beta"]
                for s_idx, seg in enumerate(cluster["segments"])
            }
            for row in rows:
                t = int(row["t"])
                beta = betas[int(row["segment_id"])]
                lag1 = observed[t - 2] if t >= 2 else 0.0
                lag2 = observed[t - 3] if t >= 3 else 0.0
                replayed = sigmoid_ar_predict(beta, t, lag1, lag2)
                assert abs(float(row["fitted"]) - replayed) <= 1e-9


class TestCli:
    def test_pipeline_success_exit_zero(self, two_group_csv, tmp_path):
        code = main([
            "pipeline", "--input", str(two_group_csv), "--format", "wide",
            "--out", str(tmp_path),
        ])
        assert code == 0
        assert (tmp_path / "result.json").exists()
        assert (tmp_path / "cluster_1_fit.csv").exists()

    def test_missing_input_exit_two(self, tmp_path):
        code = main([
            "pipeline", "--input", str(tmp_path / "nope.csv"),
            "--out", str(tmp_path),
        ])
        assert code == 2

    def test_numerical_failure_exit_three(self, two_group_csv, tmp_path, monkeypatch):
        def boom(config):
            raise NumericalError("synthetic failure")

        monkeypatch.setattr(cli_module, "run_pipeline", boom)
        code = main([
            "fit", "--input", str(two_group_csv), "--format", "wide",
            "--out", str(tmp_path),
        ])
        assert code == 3

    def test_bad_config_exit_four(self, two_group_csv, tmp_path):
        code = main([
            "pipeline", "--input", str(two_group_csv), "--format", "wide",
            "--ar-order", "3", "--out", str(tmp_path),
        ])
        assert code == 4

    def test_unknown_flag_exit_four(self):
        assert main(["pipeline", "--bogus"]) == 4

    def test_cluster_and_segment_subcommands(self, two_group_csv, tmp_path):
        assert main([
            "cluster", "--input", str(two_group_csv), "--format", "wide",
            "--out", str(tmp_path),
        ]) == 0
        cluster_doc = json.loads((tmp_path / "cluster.json").read_text())
        assert cluster_doc["clustering"]["num_clusters"] == 2
        assert main([
            "segment", "--input", str(two_group_csv), "--format", "wide",
            "--out", str(tmp_path),
        ]) == 0
        seg_doc = json.loads((tmp_path / "segments.json").read_text())
        assert {c["id"] for c in seg_doc["clusters"]} == {1, 2}

    def test_config_file_and_precedence(self, two_group_csv, tmp_path):
        config_file = tmp_path / "run.conf"
        config_file.write_text(
            f"input = {two_group_csv}\nformat = wide\ndelta = 12\n"
            f"out = {tmp_path / 'from_file'}\n"
        )
        # file value used when no flag given
        assert main(["fit", "--config", str(config_file)]) == 0
        doc = json.loads((tmp_path / "from_file" / "fits.json").read_text())
        assert doc["config"]["delta"] == 12
        # CLI flag wins over the file
        assert main([
            "fit", "--config", str(config_file), "--delta", "15",
            "--out", str(tmp_path / "cli_wins"),
        ]) == 0
        doc = json.loads((tmp_path / "cli_wins" / "fits.json").read_text())
        assert doc["config"]["delta"] == 15

    def test_config_file_unknown_key(self, tmp_path):
        config_file = tmp_path / "bad.conf"
        config_file.write_text("inputt = x.csv\n")
        assert main(["fit", "--config", str(config_file)]) == 4

    def test_simulate_subcommand(self, tmp_path):
        code = main([
            "simulate", "--t", "40", "--sizes", "2,2,2", "--sigma", "0.2",
            "--seed", "3", "--out", str(tmp_path),
        ])
        assert code == 0
        series = ingest_csv(tmp_path / "panel.csv", "wide")
        assert len(series) == 6
        assert all(len(s) == 40 for s in series)
        with open(tmp_path / "labels.csv", newline="") as fh:
            labels = list(csv.DictReader(fh))
        assert sorted(int(r["class"]) for r in labels) == [1, 1, 2, 2, 3, 3]

    def test_benchmark_subcommand(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = main([
            "benchmark", "--sigmas", "0.2", "--sizes", "4,4,4",
            "--t", "60", "--reps", "2", "--out", str(out),
        ])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["sigma"] == "0.2"


class TestDeterminism:
    def test_rerun_is_byte_identical(self, two_group_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        monkeypatch.setenv("CSAS_THREADS", "1")
        for sub in ("a", "b"):
            assert main([
                "pipeline", "--input", str(two_group_csv), "--format", "wide",
                "--out", str(tmp_path / sub),
            ]) == 0
        for name in ("result.json", "cluster_1_fit.csv", "cluster_2_fit.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_timestamp_honors_source_date_epoch(self, two_group_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1600000000")
        config = PipelineConfig(input_path=str(two_group_csv), format="wide")
        result = run_pipeline(config)
        assert result.generated_at == "2020-09-13T12:26:40Z"
