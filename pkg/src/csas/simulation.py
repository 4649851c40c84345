"""Three-class synthetic panel generator and the strict-purity benchmark.

Each region draws its noiseless class mean (a piecewise stretched S-curve)
plus i.i.d. Normal(0, sigma^2) noise, independently per region and time.

Reproducibility: every random stream derives from ``numpy.random.SeedSequence``
with the user seed as entropy.  Replication ``r`` uses spawn key ``(r, 0)``
for the region-to-class shuffle and ``(r, j + 1)`` for region ``j``'s noise,
so parallel execution order cannot change any result.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import clustering_from_labels, cluster_panel, strict_purity, purity
from .errors import ConfigError
from .fitting import standard_normal_cdf
from .series import CurveSeries, SeriesPanel

__all__ = [
    "SimulationConfig",
    "ClassSpec",
    "default_class_specs",
    "class_mean",
    "generate_panel",
    "run_purity_benchmark",
    "write_benchmark_csv",
    "BENCHMARK_FIELDS",
]

BENCHMARK_FIELDS = [
    "sigma", "n1", "n2", "n3",
    "mean_strict_purity", "mean_purity", "mean_L",
    "reps", "seed",
]


@dataclass(frozen=True)
class ClassSpec:
    """Noiseless class mean as segments of (start, end, (b1, b2, b3, b4))."""

    segments: tuple[tuple[int, int, tuple[float, float, float, float]], ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ConfigError("class spec needs at least one segment")
        expected_start = 1
        for start, end, beta in segs:
            if start != expected_start or end < start or len(beta) != 4:
                raise ConfigError(f"segments must tile [1, T]; bad segment {start}..{end}")
            expected_start = end + 1
        object.__setattr__(self, "segments", segs)

    @property
    def T(self) -> int:
        return self.segments[-1][1]

    def mean(self) -> np.ndarray:
        out = np.empty(self.T)
        for start, end, (b1, b2, b3, b4) in self.segments:
            t = np.arange(start, end + 1, dtype=np.float64)
            out[start - 1 : end] = b1 + b2 * standard_normal_cdf(b3 + b4 * t)
        return out


@dataclass(frozen=True)
class SimulationConfig:
    T: int = 150
    class_sizes: tuple[int, int, int] = (20, 20, 20)
    sigma: float = 0.1
    replications: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.T < 30:
            raise ConfigError("T must be at least 30")
        if any(n < 1 for n in self.class_sizes):
            raise ConfigError("every class size must be at least 1")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        object.__setattr__(self, "class_sizes", tuple(int(n) for n in self.class_sizes))

    @property
    def K(self) -> int:
        return sum(self.class_sizes)


def default_class_specs(T: int) -> tuple[ClassSpec, ClassSpec, ClassSpec]:
    """The three benchmark classes: one flat-ish curve, two delayed S-curves."""
    tau2 = round(T / 3)
    tau3 = round(2 * T / 3)
    flat = (0.0, 0.0, 0.0, 0.0)
    return (
        ClassSpec(segments=((1, T, (0.0, 10.0, -4.0, -0.05)),)),
        ClassSpec(segments=((1, tau2, flat), (tau2 + 1, T, (0.0, 20.0, -3.0, 0.03)))),
        ClassSpec(segments=((1, tau3, flat), (tau3 + 1, T, (0.0, 5.0, -2.0, 0.07)))),
    )


def class_mean(class_index: int, T: int) -> np.ndarray:
    """Noiseless mean curve for class 1, 2, or 3 on a grid of length T."""
    if class_index not in (1, 2, 3):
        raise ConfigError("class_index must be 1, 2, or 3")
    return default_class_specs(T)[class_index - 1].mean()


def _rng(seed: int, spawn_key: tuple[int, ...]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=spawn_key))


def generate_panel(config: SimulationConfig, replication: int = 0) -> SeriesPanel:
    """One replication's panel, class labels recorded on each series."""
    means = [spec.mean() for spec in default_class_specs(config.T)]
    labels = np.repeat([1, 2, 3], config.class_sizes)
    _rng(config.seed, (replication, 0)).shuffle(labels)
    series = []
    for j, label in enumerate(labels):
        noise = _rng(config.seed, (replication, j + 1)).normal(
            0.0, config.sigma, size=config.T
        )
        series.append(
            CurveSeries(
                region_id=f"sim{j:03d}",
                values=means[label - 1] + noise,
                class_label=int(label),
            )
        )
    return SeriesPanel(series=tuple(series))


def run_purity_benchmark(
    sigmas,
    class_sizes_list,
    T: int = 150,
    replications: int = 100,
    seed: int = 0,
    record_runtime: bool = False,
) -> list[dict]:
    """Cluster simulated panels over a (sigma, sizes) grid and score them.

    Returns one row per grid cell with the mean strict purity, mean purity,
    and mean cluster count over the replications.  With ``record_runtime``
    each row also carries the mean wall-clock seconds per replication.
    """
    rows = []
    for sizes in class_sizes_list:
        for sigma in sigmas:
            config = SimulationConfig(
                T=T, class_sizes=tuple(sizes), sigma=float(sigma),
                replications=replications, seed=seed,
            )
            strict_scores = np.empty(replications)
            purity_scores = np.empty(replications)
            cluster_counts = np.empty(replications)
            started = time.perf_counter()
            for rep in range(replications):
                panel = generate_panel(config, rep)
                truth = clustering_from_labels(panel.class_labels())
                found, _, _ = cluster_panel(panel)
                strict_scores[rep] = strict_purity(found, truth)
                purity_scores[rep] = purity(found, truth)
                cluster_counts[rep] = found.num_clusters
            elapsed = time.perf_counter() - started
            row = {
                "sigma": float(sigma),
                "n1": sizes[0], "n2": sizes[1], "n3": sizes[2],
                "mean_strict_purity": float(np.mean(strict_scores)),
                "mean_purity": float(np.mean(purity_scores)),
                "mean_L": float(np.mean(cluster_counts)),
                "reps": replications,
                "seed": seed,
            }
            if record_runtime:
                row["seconds_per_rep"] = elapsed / replications
            rows.append(row)
    return rows


def write_benchmark_csv(rows: list[dict], path) -> None:
    """Emit the benchmark table with the documented header."""
    fields = list(BENCHMARK_FIELDS)
    if rows and "seconds_per_rep" in rows[0]:
        fields.append("seconds_per_rep")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})
