"""Data ingestion, stage orchestration, and machine-readable result emission.

The pipeline runs transform -> cluster -> per-cluster aggregate -> change
points -> per-segment fits with confidence bands, then persists a JSON
result document plus one plot-data CSV per cluster.  Segmentation and
fitting fan out across clusters on a thread pool capped by the
``CSAS_THREADS`` environment variable.  Timestamps honor
``SOURCE_DATE_EPOCH`` so reruns can be byte-identical.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import Clustering, cluster_panel
from .errors import ConfigError, CsasError, InputValidationError, NumericalError
from .fitting import (
    ConfidenceBand,
    FitDiagnostics,
    SegmentModel,
    delta_method_band,
    fit_segment,
)
from .segmentation import ChangePointSet, detect_change_points
from .series import CountSeries, CurveSeries, SeriesPanel, log1p_transform

__all__ = [
    "PipelineConfig",
    "ClusterResult",
    "PipelineResult",
    "ingest_csv",
    "run_pipeline",
    "write_result",
    "result_to_json",
]

AGGREGATE_MODES = ("mean-log", "pooled-count")
FORMATS = ("long", "wide")


@dataclass(frozen=True)
class PipelineConfig:
    input_path: str
    format: str = "long"
    start_date: _dt.date | None = None
    end_date: _dt.date | None = None
    delta: int = 10
    alpha: float = 0.05
    ar_order: int = 2
    aggregate: str = "mean-log"
    out_dir: str = "."
    seed: int | None = None

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {self.format!r}")
        if self.delta < 2:
            raise ConfigError("delta must be at least 2")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")
        if self.ar_order < 0:
            raise ConfigError("ar_order must be non-negative")
        if self.ar_order != 2:
            raise ConfigError("only ar_order=2 is supported by the segment model")
        if self.aggregate not in AGGREGATE_MODES:
            raise ConfigError(
                f"aggregate must be one of {AGGREGATE_MODES}, got {self.aggregate!r}"
            )

    def echo(self) -> dict:
        return {
            "input_path": str(self.input_path),
            "format": self.format,
            "start_date": self.start_date.isoformat() if self.start_date else None,
            "end_date": self.end_date.isoformat() if self.end_date else None,
            "delta": self.delta,
            "alpha": self.alpha,
            "ar_order": self.ar_order,
            "aggregate": self.aggregate,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SegmentResult:
    model: SegmentModel
    diagnostics: FitDiagnostics
    band: ConfidenceBand | None


@dataclass(frozen=True)
class ClusterResult:
    cluster_id: int
    regions: tuple[str, ...]
    representative: np.ndarray
    change_points: ChangePointSet
    segments: tuple[SegmentResult, ...]


@dataclass(frozen=True)
class PipelineResult:
    config: dict
    clustering: Clustering
    region_ids: tuple[str, ...]
    threshold: float
    bic_trace: tuple
    clusters: tuple[ClusterResult, ...]
    generated_at: str
    version: str = field(default=__version__)


def _parse_date(text: str, line_no: int) -> _dt.date:
    try:
        return _dt.date.fromisoformat(text.strip())
    except ValueError:
        raise InputValidationError(f"line {line_no}: unparseable date {text!r}")


def _parse_count(text: str, line_no: int) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise InputValidationError(f"line {line_no}: unparseable count {text!r}")
    if value < 0:
        raise InputValidationError(f"line {line_no}: negative count {value}")
    return value


def _read_long(path) -> dict[str, dict[_dt.date, int]]:
    per_region: dict[str, dict[_dt.date, int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputValidationError(f"{path}: empty file")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise InputValidationError(
                    f"line {line_no}: expected (region, date, count), got {len(row)} fields"
                )
            region = row[0].strip()
            date = _parse_date(row[1], line_no)
            count = _parse_count(row[2], line_no)
            days = per_region.setdefault(region, {})
            if date in days:
                raise InputValidationError(
                    f"line {line_no}: duplicate entry for ({region!r}, {date})"
                )
            days[date] = count
    return per_region


def _read_wide(path) -> dict[str, dict[_dt.date, int]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise InputValidationError(
                f"{path}: wide format needs a date column plus one column per region"
            )
        regions = [name.strip() for name in header[1:]]
        if len(set(regions)) != len(regions):
            raise InputValidationError(f"{path}: duplicate region column in header")
        per_region: dict[str, dict[_dt.date, int]] = {r: {} for r in regions}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(regions) + 1:
                raise InputValidationError(
                    f"line {line_no}: expected {len(regions) + 1} fields, got {len(row)}"
                )
            date = _parse_date(row[0], line_no)
            for region, cell in zip(regions, row[1:]):
                if date in per_region[region]:
                    raise InputValidationError(
                        f"line {line_no}: duplicate entry for ({region!r}, {date})"
                    )
                per_region[region][date] = _parse_count(cell, line_no)
    return per_region


def ingest_csv(
    path,
    format: str = "long",
    start_date: _dt.date | None = None,
    end_date: _dt.date | None = None,
) -> list[CountSeries]:
    """Parse a long or wide CSV into one CountSeries per region.

    All regions must cover an identical, gap-free daily grid; missing days
    and duplicate (region, date) pairs are hard errors.
    """
    if format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {format!r}")
    if not Path(path).exists():
        raise InputValidationError(f"input file not found: {path}")
    per_region = _read_long(path) if format == "long" else _read_wide(path)
    if not per_region:
        raise InputValidationError(f"{path}: no data rows")

    series = []
    grid: tuple[_dt.date, ...] | None = None
    for region in per_region:
        days = per_region[region]
        if not days:
            raise InputValidationError(f"region {region!r}: no observations")
        dates = sorted(days)
        if start_date or end_date:
            dates = [
                d for d in dates
                if (start_date is None or d >= start_date)
                and (end_date is None or d <= end_date)
            ]
            if not dates:
                raise InputValidationError(
                    f"region {region!r}: no observations in the requested date range"
                )
        cursor = dates[0]
        for d in dates:
            if d != cursor:
                raise InputValidationError(
                    f"region {region!r}: missing date {cursor.isoformat()}"
                )
            cursor += _dt.timedelta(days=1)
        if grid is None:
            grid = tuple(dates)
        elif tuple(dates) != grid:
            raise InputValidationError(
                f"region {region!r} covers {dates[0]}..{dates[-1]}, which does not "
                f"match the common grid {grid[0]}..{grid[-1]}"
            )
        series.append(
            CountSeries(
                region_id=region,
                counts=np.array([days[d] for d in dates], dtype=np.int64),
                dates=tuple(dates),
            )
        )
    return series


def _aggregate_cluster(
    counts: list[CountSeries], members: list[CurveSeries], mode: str
) -> np.ndarray:
    if mode == "mean-log":
        return np.mean([s.values for s in members], axis=0)
    totals = np.sum([c.counts for c in counts], axis=0)
    return np.log1p(totals.astype(np.float64))


def _worker_count() -> int:
    raw = os.environ.get("CSAS_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"CSAS_THREADS must be an integer, got {raw!r}")
        if n < 1:
            raise ConfigError("CSAS_THREADS must be at least 1")
        return n
    return min(os.cpu_count() or 1, 8)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = int(epoch) if epoch else int(time.time())
    return _dt.datetime.fromtimestamp(when, tz=_dt.timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ"
    )


def _process_cluster(
    cluster_id: int,
    counts: list[CountSeries],
    members: list[CurveSeries],
    config: PipelineConfig,
) -> ClusterResult:
    z = _aggregate_cluster(counts, members, config.aggregate)
    try:
        points = detect_change_points(z, config.delta)
        segments = []
        for a, b in points.segments():
            model, diagnostics = fit_segment(z, a, b)
            band = None
            if model.covariance is not None and b - a - 6 >= 1:
                band = delta_method_band(model, z, a, b, config.alpha)
            segments.append(SegmentResult(model=model, diagnostics=diagnostics, band=band))
    except CsasError as err:
        raise type(err)(
            f"cluster {cluster_id}, series length {z.size}: {err}"
        ) from err
    return ClusterResult(
        cluster_id=cluster_id,
        regions=tuple(s.region_id for s in members),
        representative=z,
        change_points=points,
        segments=tuple(segments),
    )


def run_pipeline(
    config: PipelineConfig, counts: list[CountSeries] | None = None
) -> PipelineResult:
    """Run all stages and return the in-memory result (not yet persisted)."""
    if counts is None:
        counts = ingest_csv(
            config.input_path, config.format, config.start_date, config.end_date
        )
    curves = [log1p_transform(c) for c in counts]
    panel = SeriesPanel(series=tuple(curves))
    try:
        clustering, theta, trace = cluster_panel(panel)
    except CsasError as err:
        raise type(err)(f"clustering stage: {err}") from err

    jobs = []
    for cluster_id in range(1, clustering.num_clusters + 1):
        idx = clustering.members(cluster_id)
        jobs.append(
            (cluster_id, [counts[j] for j in idx], [curves[j] for j in idx])
        )
    workers = min(_worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cluster_results = list(
                pool.map(lambda job: _process_cluster(*job, config), jobs)
            )
    else:
        cluster_results = [_process_cluster(*job, config) for job in jobs]

    return PipelineResult(
        config=config.echo(),
        clustering=clustering,
        region_ids=panel.region_ids,
        threshold=theta,
        bic_trace=tuple(trace),
        clusters=tuple(cluster_results),
        generated_at=_timestamp(),
    )


def _array(a) -> list:
    return [float(x) for x in np.asarray(a).ravel()]


def _matrix(m) -> list[list[float]]:
    return [[float(x) for x in row] for row in np.asarray(m)]


def _nan_to_none(values) -> list:
    return [None if not np.isfinite(v) else float(v) for v in values]


def result_to_json(result: PipelineResult) -> dict:
    """Serializable document for ``result.json``."""
    clusters = []
    for cr in result.clusters:
        segments = []
        for seg in cr.segments:
            model, diag = seg.model, seg.diagnostics
            covariance = None
            standard_errors = None
            if model.covariance is not None:
                covariance = _matrix(model.covariance)
                standard_errors = _nan_to_none(
                    np.sqrt(np.maximum(np.diag(model.covariance), 0.0))
                )
            band = None
            if seg.band is not None:
                band = {
                    "alpha": seg.band.alpha,
                    "center": _array(seg.band.center),
                    "half_width": _array(seg.band.half_width),
                }
            segments.append(
                {
                    "t_minus": model.t_minus,
                    "t_plus": model.t_plus,
                    "n": model.n,
                    "beta": _array(model.beta),
                    "rss": model.rss,
                    "sigma2": model.sigma2,
                    "sigma2_window": model.sigma2_window,
                    "covariance": covariance,
                    "standard_errors": standard_errors,
                    "t_statistics": _nan_to_none(diag.t_statistics),
                    "p_values": _nan_to_none(diag.p_values),
                    "converged": diag.converged,
                    "iterations": diag.iterations,
                    "covariance_ridged": diag.covariance_ridged,
                    "band": band,
                }
            )
        clusters.append(
            {
                "id": cr.cluster_id,
                "regions": list(cr.regions),
                "representative": _array(cr.representative),
                "change_points": list(cr.change_points.points),
                "delta": cr.change_points.delta,
                "segments": segments,
            }
        )
    return {
        "version": result.version,
        "generated_at": result.generated_at,
        "config": result.config,
        "clustering": {
            "threshold": result.threshold,
            "num_clusters": result.clustering.num_clusters,
            "assignment": {
                region: cluster
                for region, cluster in zip(
                    result.region_ids, result.clustering.assignment
                )
            },
            "bic_trace": [
                {"theta": float(t), "bic": float(b), "num_clusters": int(l)}
                for t, b, l in result.bic_trace
            ],
        },
        "clusters": clusters,
    }


def _write_cluster_csv(cr: ClusterResult, path: Path) -> None:
    T = cr.representative.size
    fitted = np.full(T, np.nan)
    lo = np.full(T, np.nan)
    hi = np.full(T, np.nan)
    segment_id = np.zeros(T, dtype=int)
    for s_idx, seg in enumerate(cr.segments, start=1):
        a, b = seg.model.t_minus, seg.model.t_plus
        t = np.arange(a, b + 1)
        from .fitting import sigmoid_ar_predict  # local import avoids a cycle

        z = cr.representative
        for ti in t:
            lag1 = z[ti - 2] if ti >= 2 else 0.0
            lag2 = z[ti - 3] if ti >= 3 else 0.0
            fitted[ti - 1] = sigmoid_ar_predict(seg.model.beta, ti, lag1, lag2)
        segment_id[a - 1 : b] = s_idx
        if seg.band is not None:
            lo[a - 1 : b] = seg.band.center - seg.band.half_width
            hi[a - 1 : b] = seg.band.center + seg.band.half_width
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "observed", "fitted", "ci_lo", "ci_hi", "segment_id"])
        for ti in range(T):
            writer.writerow(
                [
                    ti + 1,
                    repr(float(cr.representative[ti])),
                    repr(float(fitted[ti])),
                    "" if np.isnan(lo[ti]) else repr(float(lo[ti])),
                    "" if np.isnan(hi[ti]) else repr(float(hi[ti])),
                    int(segment_id[ti]),
                ]
            )


def write_result(result: PipelineResult, out_dir) -> Path:
    """Persist result.json and the per-cluster plot-data CSVs; return the JSON path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = result_to_json(result)
    json_path = out / "result.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    for cr in result.clusters:
        _write_cluster_csv(cr, out / f"cluster_{cr.cluster_id}_fit.csv")
    return json_path
