"""Core series types, the log(1+y) transform, and the curve distance.

All types are immutable after construction and all operations are pure, so
everything here is safe to share across worker threads or processes.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np

from .errors import InputValidationError

__all__ = [
    "CountSeries",
    "CurveSeries",
    "SeriesPanel",
    "log1p_transform",
    "curve_distance",
    "distance_matrix",
]


def _frozen_array(x, dtype) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CountSeries:
    """Daily cumulative confirmed counts for one region.

    Parameters
    ----------
    region_id : str
        Label for the region.
    counts : sequence of int
        Non-negative counts Y_t, one per day, t = 1..T.
    dates : sequence of datetime.date, optional
        Calendar dates, strictly increasing, same length as ``counts``.
    """

    region_id: str
    counts: np.ndarray
    dates: tuple[_dt.date, ...] | None = None

    def __post_init__(self):
        counts = _frozen_array(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 1:
            raise InputValidationError(
                f"region {self.region_id!r}: counts must be a non-empty 1-d sequence"
            )
        neg = np.nonzero(counts < 0)[0]
        if neg.size:
            raise InputValidationError(
                f"region {self.region_id!r}: negative count at index {int(neg[0])}"
            )
        object.__setattr__(self, "counts", counts)
        if self.dates is not None:
            dates = tuple(self.dates)
            if len(dates) != counts.size:
                raise InputValidationError(
                    f"region {self.region_id!r}: {len(dates)} dates for "
                    f"{counts.size} counts"
                )
            for a, b in zip(dates, dates[1:]):
                if b <= a:
                    raise InputValidationError(
                        f"region {self.region_id!r}: dates not strictly "
                        f"increasing at {b}"
                    )
            object.__setattr__(self, "dates", dates)

    def __len__(self) -> int:
        return self.counts.size


@dataclass(frozen=True)
class CurveSeries:
    """Log-transformed series Z_t = log(1 + Y_t) for one region.

    ``class_label`` carries the ground-truth class when the series comes from
    the simulator; it is None for real data.
    """

    region_id: str
    values: np.ndarray
    class_label: int | None = None

    def __post_init__(self):
        values = _frozen_array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise InputValidationError(
                f"region {self.region_id!r}: values must be a non-empty 1-d sequence"
            )
        if not np.all(np.isfinite(values)):
            raise InputValidationError(
                f"region {self.region_id!r}: non-finite value in series"
            )
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SeriesPanel:
    """A collection of K curve series on a common time grid of length T."""

    series: tuple[CurveSeries, ...] = field(default=())

    def __post_init__(self):
        series = tuple(self.series)
        if not series:
            raise InputValidationError("panel must contain at least one series")
        T = len(series[0])
        for s in series:
            if len(s) != T:
                raise InputValidationError(
                    f"region {s.region_id!r} has length {len(s)}, expected {T}"
                )
        ids = [s.region_id for s in series]
        if len(set(ids)) != len(ids):
            dupes = sorted({r for r in ids if ids.count(r) > 1})
            raise InputValidationError(f"duplicate region ids: {dupes}")
        object.__setattr__(self, "series", series)

    @property
    def K(self) -> int:
        return len(self.series)

    @property
    def T(self) -> int:
        return len(self.series[0])

    @property
    def region_ids(self) -> tuple[str, ...]:
        return tuple(s.region_id for s in self.series)

    def values_matrix(self) -> np.ndarray:
        """Return a (K, T) matrix of the member series values."""
        return np.stack([s.values for s in self.series])

    def class_labels(self) -> tuple[int, ...] | None:
        """Ground-truth labels if every member carries one, else None."""
        labels = [s.class_label for s in self.series]
        if any(l is None for l in labels):
            return None
        return tuple(labels)


def log1p_transform(raw: CountSeries) -> CurveSeries:
    """Map counts Y_t to Z_t = log(1 + Y_t), preserving length."""
    return CurveSeries(
        region_id=raw.region_id,
        values=np.log1p(raw.counts.astype(np.float64)),
    )


def curve_distance(a: CurveSeries, b: CurveSeries) -> float:
    """Root-mean-square distance sqrt((1/T) * sum_t (a_t - b_t)^2)."""
    if len(a) != len(b):
        raise InputValidationError(
            f"length mismatch: {a.region_id!r} has {len(a)}, "
            f"{b.region_id!r} has {len(b)}"
        )
    diff = a.values - b.values
    return float(np.sqrt(np.mean(diff * diff)))


def distance_matrix(panel: SeriesPanel) -> np.ndarray:
    """Pairwise curve distances as a symmetric (K, K) matrix with zero diagonal."""
    Z = panel.values_matrix()
    sq = np.sum(Z * Z, axis=1)
    gram = Z @ Z.T
    d2 = (sq[:, None] + sq[None, :] - 2.0 * gram) / panel.T
    np.clip(d2, 0.0, None, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)
