"""Segment regression: a stretched normal-CDF curve plus two AR lag terms.

The segment model is

    f(t; b) = b1 + b2 * Phi(b3 + b4 * t) + b5 * Z[t-1] + b6 * Z[t-2]

fitted by nonlinear least squares on an index window [t_minus, t_plus]
(1-based, inclusive).  The model is linear in (b1, b2, b5, b6) once
(b3, b4) are fixed, so initialization runs a grid search over (b3, b4)
with the inner linear problem solved in closed form, and a damped
Gauss-Newton pass then refines all six parameters.  Lag values come from
the full observed series; indices before the start of the series count
as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special, stats

from . import _kernels
from .errors import InputValidationError, NumericalError

__all__ = [
    "MIN_SEGMENT_POINTS",
    "SegmentModel",
    "FitDiagnostics",
    "ConfidenceBand",
    "standard_normal_cdf",
    "standard_normal_pdf",
    "sigmoid_ar_predict",
    "model_gradient",
    "fit_segment",
    "residual_sum_s0",
    "residual_sum_s1",
    "delta_method_band",
    "coefficient_t_tests",
    "SegmentFitter",
]

N_PARAMS = 6
# Six parameters need at least one residual degree of freedom.
MIN_SEGMENT_POINTS = 7

_MAX_ITER = 200
_RSS_RTOL = 1e-10
_STEP_TOL = 1e-10
_COND_LIMIT = 1e12
_COV_RIDGE = 1e-10

# The sigmoid's inner slope is capped so its 10%-90% rise spans at least
# ~2.5 sampling intervals; a sharper transition is indistinguishable from a
# change point on daily data and would let a single segment absorb genuine
# regime shifts.
MAX_ABS_SLOPE = 1.0


def standard_normal_cdf(x):
    """CDF of the standard normal distribution."""
    return special.ndtr(x)


def standard_normal_pdf(x):
    """Density of the standard normal distribution."""
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def sigmoid_ar_predict(beta, t, z_lag1: float, z_lag2: float) -> float:
    """Evaluate f(t; beta) at one time point with the given observed lags."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (N_PARAMS,):
        raise InputValidationError(f"beta must have {N_PARAMS} entries")
    inputs = np.array([t, z_lag1, z_lag2], dtype=np.float64)
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(inputs))):
        raise InputValidationError("non-finite input to sigmoid_ar_predict")
    u = beta[2] + beta[3] * t
    return float(
        beta[0]
        + beta[1] * standard_normal_cdf(u)
        + beta[4] * z_lag1
        + beta[5] * z_lag2
    )


def model_gradient(beta, t, z_lag1: float, z_lag2: float) -> np.ndarray:
    """Analytic gradient of f(t; beta) with respect to beta."""
    beta = np.asarray(beta, dtype=np.float64)
    u = beta[2] + beta[3] * t
    phi = standard_normal_pdf(u)
    return np.array(
        [
            1.0,
            standard_normal_cdf(u),
            beta[1] * phi,
            beta[1] * phi * t,
            z_lag1,
            z_lag2,
        ]
    )


@dataclass(frozen=True)
class SegmentModel:
    """Fitted parameters and inference inputs for one segment.

    ``sigma2`` is the df-corrected estimate rss / (n - 6) used for t-tests
    and bands; ``sigma2_window`` is the rss / n normalization that the
    segmentation BIC consumes.  ``covariance`` is None when the normal
    matrix was too ill-conditioned to invert even with a ridge.
    """

    beta: np.ndarray
    rss: float
    n: int
    t_minus: int
    t_plus: int
    covariance: np.ndarray | None = None

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64, copy=True)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if self.covariance is not None:
            cov = np.array(self.covariance, dtype=np.float64, copy=True)
            cov.setflags(write=False)
            object.__setattr__(self, "covariance", cov)

    @property
    def sigma2(self) -> float:
        return self.rss / (self.n - N_PARAMS)

    @property
    def sigma2_window(self) -> float:
        return self.rss / self.n


@dataclass(frozen=True)
class FitDiagnostics:
    t_statistics: np.ndarray
    p_values: np.ndarray
    converged: bool
    iterations: int
    covariance_ridged: bool = False


@dataclass(frozen=True)
class ConfidenceBand:
    """Pointwise confidence band for the mean response over a window."""

    t_minus: int
    t_plus: int
    center: np.ndarray
    half_width: np.ndarray
    alpha: float


def _segment_arrays(z: np.ndarray, t_minus: int, t_plus: int):
    """Time grid, response, and observed lag columns for a window."""
    t = np.arange(t_minus, t_plus + 1, dtype=np.float64)
    y = z[t_minus - 1 : t_plus]
    # lags are Z[t-1] and Z[t-2] in 1-based terms; zero before the series start
    idx = np.arange(t_minus, t_plus + 1)
    lag1 = np.where(idx >= 2, z[np.clip(idx - 2, 0, None)], 0.0)
    lag2 = np.where(idx >= 3, z[np.clip(idx - 3, 0, None)], 0.0)
    return t, y, lag1, lag2


def _check_window(z: np.ndarray, t_minus: int, t_plus: int) -> None:
    T = z.size
    if not (1 <= t_minus <= t_plus <= T):
        raise InputValidationError(
            f"window [{t_minus}, {t_plus}] outside series of length {T}"
        )
    if t_plus - t_minus + 1 < MIN_SEGMENT_POINTS:
        raise InputValidationError(
            f"segment [{t_minus}, {t_plus}] shorter than "
            f"{MIN_SEGMENT_POINTS} points"
        )


def _grid_candidates(t_minus: int, t_plus: int) -> tuple[np.ndarray, np.ndarray]:
    """(b3, b4) grid: geometric slopes, midpoints spread across the window."""
    slopes = 0.005 * np.power(2.0, np.arange(7))
    slopes = np.concatenate([slopes, -slopes, [0.001, -0.001]])
    midpoints = np.linspace(t_minus, t_plus, 9)
    b4 = np.repeat(slopes, midpoints.size)
    b3 = -np.tile(midpoints, slopes.size) * b4
    return b3, b4


def _grid_search(t, y, lag1, lag2, b3, b4):
    """Solve the inner linear problem for every grid candidate; return them ranked."""
    coef, rss = _kernels.grid_solve(t, y, lag1, lag2, b3, b4)
    order = np.argsort(rss, kind="stable")
    betas = []
    for g in order[:3]:
        c = coef[g]
        betas.append(
            (float(rss[g]), np.array([c[0], c[1], b3[g], b4[g], c[2], c[3]]))
        )
    return betas


def _best_no_ar_candidate(t, y, b3, b4):
    """Best grid start with the lag coefficients pinned at zero."""
    coef, rss = _kernels.grid_solve_no_ar(t, y, b3, b4)
    g = int(np.argmin(rss))
    c = coef[g]
    return np.array([c[0], c[1], b3[g], b4[g], 0.0, 0.0])


def _residuals_and_jacobian(beta, t, y, lag1, lag2):
    u = beta[2] + beta[3] * t
    Phi = standard_normal_cdf(u)
    pred = beta[0] + beta[1] * Phi + beta[4] * lag1 + beta[5] * lag2
    r = y - pred
    phi = standard_normal_pdf(u)
    J = np.column_stack(
        [np.ones_like(t), Phi, beta[1] * phi, beta[1] * phi * t, lag1, lag2]
    )
    return r, J


def _refine(beta, t, y, lag1, lag2):
    """Damped Gauss-Newton (Levenberg-style) polish of all six parameters."""
    beta, rss, iterations, converged = _kernels.lm_refine(
        np.ascontiguousarray(beta, dtype=np.float64), t, y, lag1, lag2,
        _MAX_ITER, _RSS_RTOL, _STEP_TOL, MAX_ABS_SLOPE,
    )
    return beta, float(rss), int(iterations), bool(converged)


def _covariance(beta, t, y, lag1, lag2, rss, n):
    """sigma^2 (J'J)^-1, with a flagged ridge when J'J is near-singular."""
    _, J = _residuals_and_jacobian(beta, t, y, lag1, lag2)
    JtJ = J.T @ J
    sigma2 = rss / (n - N_PARAMS)
    ridged = False
    cond = np.linalg.cond(JtJ)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        JtJ = JtJ + (_COV_RIDGE * np.trace(JtJ) / N_PARAMS) * np.eye(N_PARAMS)
        ridged = True
    try:
        inv = np.linalg.inv(JtJ)
    except np.linalg.LinAlgError:
        return None, ridged
    cov = sigma2 * inv
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(cov)):
        return None, ridged
    return cov, ridged


def fit_segment(z, t_minus: int, t_plus: int) -> tuple[SegmentModel, FitDiagnostics]:
    """Fit the segment model on z[t_minus..t_plus] (1-based, inclusive).

    Returns the fitted model and diagnostics including coefficient t-tests.
    When the normal matrix is singular even with a ridge, the covariance is
    None and the t statistics are NaN; the point fit is still returned.
    """
    z = np.asarray(z, dtype=np.float64)
    _check_window(z, t_minus, t_plus)
    t, y, lag1, lag2 = _segment_arrays(z, t_minus, t_plus)
    n = t.size

    b3, b4 = _grid_candidates(t_minus, t_plus)
    candidates = _grid_search(t, y, lag1, lag2, b3, b4)
    best_grid_rss = candidates[0][0]

    # polish two starts: the best joint candidate and the best curve-only
    # candidate (lags zeroed).  The second escapes the local minima that
    # lag-dominated starts fall into on clean sigmoid data.  Runners-up of
    # the joint grid serve only as a fallback when nothing converges.
    starts = [candidates[0][1], _best_no_ar_candidate(t, y, b3, b4)]
    best = None
    for i, beta0 in enumerate(starts + [c[1] for c in candidates[1:]]):
        if i >= len(starts) and (best[3] or best[1] <= 1e-20):
            break
        beta, rss, iterations, converged = _refine(beta0, t, y, lag1, lag2)
        if best is None or rss < best[1]:
            best = (beta, rss, iterations, converged)
    beta, rss, iterations, converged = best
    rss = min(rss, best_grid_rss)  # refinement never reports worse than the grid

    cov, ridged = _covariance(beta, t, y, lag1, lag2, rss, n)
    model = SegmentModel(
        beta=beta, rss=rss, n=n, t_minus=t_minus, t_plus=t_plus, covariance=cov
    )
    diagnostics = _tests_for(model, converged=converged, iterations=iterations,
                             covariance_ridged=ridged)
    return model, diagnostics


def _tests_for(model: SegmentModel, *, converged: bool, iterations: int,
               covariance_ridged: bool) -> FitDiagnostics:
    if model.covariance is None:
        t_stats = np.full(N_PARAMS, np.nan)
        p_vals = np.full(N_PARAMS, np.nan)
    else:
        var = np.diag(model.covariance)
        se = np.sqrt(np.maximum(var, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t_stats = np.where(se > 0, model.beta / se, np.nan)
            t_stats = np.where((se == 0) & (model.beta == 0), 0.0, t_stats)
        df = model.n - N_PARAMS
        p_vals = np.where(
            np.isfinite(t_stats),
            2.0 * stats.t.sf(np.abs(t_stats), df),
            np.nan,
        )
    return FitDiagnostics(
        t_statistics=t_stats,
        p_values=p_vals,
        converged=converged,
        iterations=iterations,
        covariance_ridged=covariance_ridged,
    )


def coefficient_t_tests(model: SegmentModel) -> FitDiagnostics:
    """t statistics beta_k / se_k and two-sided p-values on n - 6 df."""
    if model.covariance is None:
        raise NumericalError("covariance unavailable; t-tests cannot be computed")
    if model.n <= N_PARAMS:
        raise InputValidationError("t-tests need n > 6")
    return _tests_for(model, converged=True, iterations=0, covariance_ridged=False)


def residual_sum_s0(z, t_minus: int, t_plus: int, fitter: "SegmentFitter | None" = None) -> float:
    """Residual sum of squares of a single fit on [t_minus, t_plus]."""
    if fitter is not None:
        return fitter.rss(t_minus, t_plus)
    model, _ = fit_segment(z, t_minus, t_plus)
    return model.rss

def residual_sum_s1(z, t_minus: int, t0: int, t_plus: int,
                    fitter: "SegmentFitter | None" = None) -> float:
    """Split residual sum: rss on [t_minus, t0] plus rss on [t0 + 1, t_plus]."""
    if not (t_minus < t0 < t_plus):
        raise InputValidationError("need t_minus < t0 < t_plus")
    return (
        residual_sum_s0(z, t_minus, t0, fitter)
        + residual_sum_s0(z, t0 + 1, t_plus, fitter)
    )


def delta_method_band(
    model: SegmentModel, z, t_minus: int, t_plus: int, alpha: float = 0.05
) -> ConfidenceBand:
    """First-order (delta method) confidence band for the mean response.

    half_width(t) = |t-quantile| * sqrt(grad' Var(beta) grad) where the
    gradient is taken in beta at the fitted values and the t distribution
    has t_plus - t_minus - 6 degrees of freedom.
    """
    if model.covariance is None:
        raise NumericalError(
            "covariance unavailable; report the point fit without a band"
        )
    if not 0.0 < alpha < 1.0:
        raise InputValidationError("alpha must be in (0, 1)")
    z = np.asarray(z, dtype=np.float64)
    t, y, lag1, lag2 = _segment_arrays(z, t_minus, t_plus)
    beta = model.beta
    u = beta[2] + beta[3] * t
    Phi = standard_normal_cdf(u)
    phi = standard_normal_pdf(u)
    center = beta[0] + beta[1] * Phi + beta[4] * lag1 + beta[5] * lag2
    grad = np.column_stack(
        [np.ones_like(t), Phi, beta[1] * phi, beta[1] * phi * t, lag1, lag2]
    )
    quad = np.einsum("ni,ij,nj->n", grad, model.covariance, grad)
    quad = np.maximum(quad, 0.0)
    df = t_plus - t_minus - N_PARAMS
    if df < 1:
        raise InputValidationError("window too short for a confidence band")
    tq = abs(float(stats.t.ppf(alpha / 2.0, df)))
    return ConfidenceBand(
        t_minus=t_minus,
        t_plus=t_plus,
        center=center,
        half_width=tq * np.sqrt(quad),
        alpha=alpha,
    )


class SegmentFitter:
    """Caches segment fits for one series across overlapping windows.

    The segmentation search re-fits many windows that share an endpoint;
    memoizing on (t_minus, t_plus) makes the exhaustive split sweeps cheap.
    """

    def __init__(self, z):
        self.z = np.asarray(z, dtype=np.float64)
        self._fits: dict[tuple[int, int], tuple[SegmentModel, FitDiagnostics]] = {}

    @property
    def T(self) -> int:
        return self.z.size

    def fit(self, t_minus: int, t_plus: int) -> tuple[SegmentModel, FitDiagnostics]:
        key = (t_minus, t_plus)
        if key not in self._fits:
            self._fits[key] = fit_segment(self.z, t_minus, t_plus)
        return self._fits[key]

    def rss(self, t_minus: int, t_plus: int) -> float:
        return self.fit(t_minus, t_plus)[0].rss
