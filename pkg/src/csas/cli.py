"""Command-line interface: staged subcommands plus the full batch pipeline.

Configuration precedence is CLI flags over config-file values over defaults.
The config file is a flat ``key = value`` document using the same keys as
the long flag names (underscores or dashes both accepted).
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, CsasError
from .pipeline import (
    PipelineConfig,
    ingest_csv,
    result_to_json,
    run_pipeline,
    write_result,
)
from .simulation import (
    SimulationConfig,
    generate_panel,
    run_purity_benchmark,
    write_benchmark_csv,
)

_CONFIG_KEYS = {
    "input", "format", "start_date", "end_date", "delta", "alpha",
    "ar_order", "aggregate", "out", "seed",
}


def _load_config_file(path: str) -> dict:
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}")
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _parse_date_opt(value, name: str) -> _dt.date | None:
    if value in (None, ""):
        return None
    try:
        return _dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{name} must be an ISO-8601 date, got {value!r}")


def _build_config(cli_values: dict, config_file: str | None) -> PipelineConfig:
    merged: dict = dict(_load_config_file(config_file)) if config_file else {}
    for key, value in cli_values.items():
        if value is not None:
            merged[key] = value
    if "input" not in merged or merged["input"] in (None, ""):
        raise ConfigError("an input file is required (--input or config file)")
    try:
        delta = int(merged.get("delta", 10))
        alpha = float(merged.get("alpha", 0.05))
        ar_order = int(merged.get("ar_order", 2))
        seed = merged.get("seed")
        seed = int(seed) if seed not in (None, "") else None
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid numeric option: {err}")
    return PipelineConfig(
        input_path=str(merged["input"]),
        format=str(merged.get("format", "long")),
        start_date=_parse_date_opt(merged.get("start_date"), "start-date"),
        end_date=_parse_date_opt(merged.get("end_date"), "end-date"),
        delta=delta,
        alpha=alpha,
        ar_order=ar_order,
        aggregate=str(merged.get("aggregate", "mean-log")),
        out_dir=str(merged.get("out", ".")),
        seed=seed,
    )


def _pipeline_options(fn):
    options = [
        click.option("--input", "input", type=str, default=None, help="Input CSV path."),
        click.option("--format", "format", type=click.Choice(["long", "wide"]),
                     default=None, help="Input CSV layout."),
        click.option("--start-date", "start_date", default=None,
                     help="Keep only dates on or after this ISO date."),
        click.option("--end-date", "end_date", default=None,
                     help="Keep only dates on or before this ISO date."),
        click.option("--delta", type=int, default=None,
                     help="Minimum spacing between change points (default 10)."),
        click.option("--alpha", type=float, default=None,
                     help="Confidence band level (default 0.05)."),
        click.option("--ar-order", "ar_order", type=int, default=None,
                     help="Autoregressive order (only 2 supported)."),
        click.option("--aggregate", type=click.Choice(["mean-log", "pooled-count"]),
                     default=None, help="Cluster aggregation mode."),
        click.option("--out", type=str, default=None, help="Output directory."),
        click.option("--seed", type=int, default=None, help="Seed (simulate only)."),
        click.option("--config", "config_file", type=str, default=None,
                     help="Flat key=value config file."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _write_json(doc: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


@click.group()
def cli():
    """Cluster, segment, and fit log-transformed count time series."""


@cli.command()
@_pipeline_options
def cluster(config_file, **cli_values):
    """Cluster the input panel and write cluster.json."""
    config = _build_config(cli_values, config_file)
    result = run_pipeline(config)
    doc = result_to_json(result)
    out = Path(config.out_dir)
    _write_json({"version": doc["version"], "generated_at": doc["generated_at"],
                 "config": doc["config"], "clustering": doc["clustering"]},
                out / "cluster.json")
    click.echo(f"wrote {out / 'cluster.json'}")


@cli.command()
@_pipeline_options
def segment(config_file, **cli_values):
    """Cluster and segment the input panel; write segments.json."""
    config = _build_config(cli_values, config_file)
    result = run_pipeline(config)
    doc = result_to_json(result)
    clusters = [
        {"id": c["id"], "regions": c["regions"],
         "change_points": c["change_points"], "delta": c["delta"]}
        for c in doc["clusters"]
    ]
    out = Path(config.out_dir)
    _write_json({"version": doc["version"], "generated_at": doc["generated_at"],
                 "config": doc["config"], "clustering": doc["clustering"],
                 "clusters": clusters},
                out / "segments.json")
    click.echo(f"wrote {out / 'segments.json'}")


@cli.command()
@_pipeline_options
def fit(config_file, **cli_values):
    """Run all stages and write fits.json (no plot-data CSVs)."""
    config = _build_config(cli_values, config_file)
    result = run_pipeline(config)
    out = Path(config.out_dir)
    _write_json(result_to_json(result), out / "fits.json")
    click.echo(f"wrote {out / 'fits.json'}")


@cli.command()
@_pipeline_options
def pipeline(config_file, **cli_values):
    """Run all stages; write result.json plus per-cluster plot-data CSVs."""
    config = _build_config(cli_values, config_file)
    result = run_pipeline(config)
    json_path = write_result(result, config.out_dir)
    click.echo(f"wrote {json_path}")


@cli.command()
@click.option("--t", "T", type=int, default=150, show_default=True,
              help="Series length.")
@click.option("--sizes", default="20,20,20", show_default=True,
              help="Comma-separated class sizes n1,n2,n3.")
@click.option("--sigma", type=float, default=0.1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--replication", type=int, default=0, show_default=True,
              help="Replication index for the random streams.")
@click.option("--out", default=".", show_default=True, help="Output directory.")
def simulate(T, sizes, sigma, seed, replication, out):
    """Generate one synthetic panel as a wide counts CSV plus labels.csv."""
    class_sizes = _parse_sizes(sizes)
    config = SimulationConfig(T=T, class_sizes=class_sizes, sigma=sigma, seed=seed)
    panel = generate_panel(config, replication)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = _dt.date(2020, 1, 1)
    panel_path = out_dir / "panel.csv"
    with open(panel_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(panel.region_ids))
        counts = [
            np.maximum(np.rint(np.expm1(s.values)), 0).astype(np.int64)
            for s in panel.series
        ]
        for t_idx in range(panel.T):
            date = (start + _dt.timedelta(days=t_idx)).isoformat()
            writer.writerow([date] + [int(c[t_idx]) for c in counts])
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "class"])
        for s in panel.series:
            writer.writerow([s.region_id, s.class_label])
    click.echo(f"wrote {panel_path}")


@cli.command()
@click.option("--sigmas", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
              show_default=True, help="Comma-separated noise levels.")
@click.option("--sizes", default="20,20,20", show_default=True,
              help="Class-size triples; separate multiple triples with ';'.")
@click.option("--t", "T", type=int, default=150, show_default=True)
@click.option("--reps", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--runtime/--no-runtime", default=False,
              help="Record wall-clock seconds per replication.")
@click.option("--out", default="benchmark.csv", show_default=True,
              help="Output CSV path.")
def benchmark(sigmas, sizes, T, reps, seed, runtime, out):
    """Run the clustering purity benchmark grid and write benchmark.csv."""
    try:
        sigma_values = [float(s) for s in sigmas.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"invalid --sigmas value {sigmas!r}")
    size_list = [_parse_sizes(chunk) for chunk in sizes.split(";") if chunk.strip()]
    rows = run_purity_benchmark(
        sigma_values, size_list, T=T, replications=reps, seed=seed,
        record_runtime=runtime,
    )
    out_path = Path(out)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    write_benchmark_csv(rows, out_path)
    click.echo(f"wrote {out_path}")


def _parse_sizes(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"invalid class sizes {text!r}")
    if len(parts) != 3:
        raise ConfigError(f"expected three class sizes, got {text!r}")
    return parts


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except CsasError as err:
        click.echo(f"error: {err}", err=True)
        return err.exit_code
    except click.UsageError as err:
        click.echo(f"usage error: {err.format_message()}", err=True)
        return ConfigError.exit_code
    except click.exceptions.Exit as err:
        return err.exit_code
    except click.Abort:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
