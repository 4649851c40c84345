"""Multiple change-point detection driven by a per-window BIC comparison.

A window [t_minus, t_plus] is tested by comparing the BIC of one segment fit
against the BIC of the best two-segment split; the iterated search narrows
in on the first and last change points, recurses between them, and a final
refinement pass re-tests each candidate against its neighbors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputValidationError
from .fitting import MIN_SEGMENT_POINTS, SegmentFitter, residual_sum_s1

__all__ = [
    "DEFAULT_DELTA",
    "ChangePointSet",
    "BicComparison",
    "min_subsegment_length",
    "admissible_splits",
    "estimate_change_point",
    "segment_bic",
    "detect_change_points",
]

DEFAULT_DELTA = 10

# BIC's variance estimate is floored before the log so exact piecewise fits
# (rss = 0) stay comparable.
_SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class ChangePointSet:
    """Sorted interior change points for one series."""

    points: tuple[int, ...]
    delta: int
    series_length: int

    def __post_init__(self):
        points = tuple(int(p) for p in sorted(self.points))
        for p in points:
            if not 1 < p < self.series_length:
                raise InputValidationError(
                    f"change point {p} outside (1, {self.series_length})"
                )
        for a, b in zip(points, points[1:]):
            if b - a < self.delta:
                raise InputValidationError(
                    f"change points {a} and {b} closer than delta={self.delta}"
                )
        object.__setattr__(self, "points", points)

    @property
    def num_segments(self) -> int:
        return len(self.points) + 1

    def segments(self) -> list[tuple[int, int]]:
        """Inclusive [start, end] windows implied by the points."""
        bounds = (0,) + self.points + (self.series_length,)
        return [(a + 1, b) for a, b in zip(bounds, bounds[1:])]


@dataclass(frozen=True)
class BicComparison:
    """BIC of the no-change and one-change models on one window."""

    bic0: float
    bic1: float
    t_hat: int
    t_minus: int
    t_plus: int

    @property
    def prefers_split(self) -> bool:
        return self.bic0 >= self.bic1


def min_subsegment_length(delta: int) -> int:
    """Shortest window a sub-segment fit may use."""
    return max(math.ceil(delta / 2) + 1, MIN_SEGMENT_POINTS)


def admissible_splits(t_minus: int, t_plus: int, delta: int) -> range:
    """Candidate split points t0 for a window.

    t0 must sit strictly more than delta/2 inside both ends and leave both
    sub-segments long enough to fit six parameters.
    """
    min_len = min_subsegment_length(delta)
    lo = max(math.floor(t_minus + delta / 2.0) + 1, t_minus + min_len - 1)
    hi = min(math.ceil(t_plus - delta / 2.0) - 1, t_plus - min_len)
    return range(lo, hi + 1)


def estimate_change_point(
    z, t_minus: int, t_plus: int, delta: int = DEFAULT_DELTA,
    fitter: SegmentFitter | None = None,
) -> int:
    """Split point minimizing the two-segment residual sum on the window.

    Ties break toward the smallest index.
    """
    if t_plus - t_minus <= delta:
        raise InputValidationError(
            f"window [{t_minus}, {t_plus}] not longer than delta={delta}"
        )
    splits = admissible_splits(t_minus, t_plus, delta)
    if len(splits) == 0:
        raise InputValidationError(
            f"no admissible split point in [{t_minus}, {t_plus}] at delta={delta}"
        )
    if fitter is None:
        fitter = SegmentFitter(z)
    best_t0 = None
    best_s1 = np.inf
    for t0 in splits:
        s1 = residual_sum_s1(fitter.z, t_minus, t0, t_plus, fitter)
        if s1 < best_s1:
            best_t0, best_s1 = t0, s1
    return best_t0


def segment_bic(
    z, t_minus: int, t_plus: int, nu: int, t_hat: int | None = None,
    fitter: SegmentFitter | None = None,
) -> float:
    """BIC of the nu-change model (nu in {0, 1}) on [t_minus, t_plus]."""
    if nu not in (0, 1):
        raise InputValidationError("nu must be 0 or 1")
    if fitter is None:
        fitter = SegmentFitter(z)
    n = t_plus - t_minus + 1
    if nu == 0:
        rss = fitter.rss(t_minus, t_plus)
    else:
        if t_hat is None:
            raise InputValidationError("nu=1 requires a split point")
        rss = residual_sum_s1(fitter.z, t_minus, t_hat, t_plus, fitter)
    sigma2 = max(rss / n, _SIGMA2_FLOOR)
    return n * math.log(sigma2) + 6.0 * (nu + 1) * math.log(t_plus - t_minus)


def compare_window(
    fitter: SegmentFitter, t_minus: int, t_plus: int, delta: int
) -> BicComparison | None:
    """BIC comparison for one window, or None when no split is admissible."""
    if t_plus - t_minus <= delta:
        return None
    if len(admissible_splits(t_minus, t_plus, delta)) == 0:
        return None
    t_hat = estimate_change_point(fitter.z, t_minus, t_plus, delta, fitter)
    bic0 = segment_bic(fitter.z, t_minus, t_plus, 0, fitter=fitter)
    bic1 = segment_bic(fitter.z, t_minus, t_plus, 1, t_hat, fitter=fitter)
    return BicComparison(bic0=bic0, bic1=bic1, t_hat=t_hat,
                         t_minus=t_minus, t_plus=t_plus)


def _refine(fitter: SegmentFitter, points: list[int], delta: int, T: int) -> list[int]:
    """Drop candidates whose window, bounded by their neighbors, prefers no split."""
    kept = sorted(points)
    changed = True
    while changed:
        changed = False
        bounds = [0] + kept + [T]
        for s in range(1, len(bounds) - 1):
            a, c = bounds[s - 1] + 1, bounds[s + 1]
            cmp = compare_window(fitter, a, c, delta)
            if cmp is None or cmp.bic0 <= cmp.bic1:
                kept.remove(bounds[s])
                changed = True
                break
    return kept


def detect_change_points(
    z, delta: int = DEFAULT_DELTA, fitter: SegmentFitter | None = None
) -> ChangePointSet:
    """Locate all interior change points of one series.

    Phase one alternately shrinks the left window's end and grows the right
    window's start until each stops preferring a split, records the first
    and last points found, and recurses between them.  Phase two re-tests
    every surviving candidate against its neighbors and drops the ones whose
    window no longer supports a split.  Degenerate windows count as
    change-free.  Loop counts are capped at T to guarantee termination.
    """
    if fitter is None:
        fitter = SegmentFitter(z)
    T = fitter.T
    if T <= delta:
        raise InputValidationError(f"series length {T} not greater than delta={delta}")

    # A split at t0 puts t0 in the left segment, so the backward search must
    # resume just after a found point and the recursion runs on
    # [t_first + 1, t_last]; starting windows exactly at a found point would
    # re-detect the same change one admissibility-inset further in.
    candidates: set[int] = set()
    t_minus, t_plus = 1, T
    for _ in range(T):
        if t_plus - t_minus <= delta:
            break
        # forward pass: narrow in on the first change point of the window
        t_first = None
        end = t_plus
        for _ in range(T):
            cmp = compare_window(fitter, t_minus, end, delta)
            if cmp is None or not cmp.prefers_split:
                break
            t_first = end = cmp.t_hat
        if t_first is None:
            break  # window is change-free
        # backward pass: narrow in on the last change point of the window
        t_last = None
        start = t_minus
        for _ in range(T):
            cmp = compare_window(fitter, start, t_plus, delta)
            if cmp is None or not cmp.prefers_split:
                break
            t_last = cmp.t_hat
            start = cmp.t_hat + 1
        if t_last is None or t_first == t_last:
            candidates.add(t_first)
            break
        candidates.update((t_first, t_last))
        t_minus, t_plus = t_first + 1, t_last

    interior = [p for p in candidates if 1 < p < T]
    kept = _refine(fitter, interior, delta, T)

    # enforce the minimum spacing contract, keeping the earlier of any
    # too-close pair; the gap also stays >= the minimum fittable segment
    min_gap = max(delta, MIN_SEGMENT_POINTS)
    spaced: list[int] = []
    for p in kept:
        if spaced and p - spaced[-1] < min_gap:
            continue
        spaced.append(p)
    return ChangePointSet(points=tuple(spaced), delta=delta, series_length=T)
