"""Clustering, change-point segmentation, and sigmoid-AR fitting for count series."""

__version__ = "0.1.0"

from .errors import ConfigError, CsasError, InputValidationError, NumericalError
from .series import (
    CountSeries,
    CurveSeries,
    SeriesPanel,
    curve_distance,
    distance_matrix,
    log1p_transform,
)
from .clustering import (
    Clustering,
    HamiltonianPath,
    WeightedEdge,
    bic_threshold_select,
    build_hamiltonian_path,
    cluster_panel,
    clustering_from_labels,
    naive_threshold,
    prune_and_components,
    purity,
    strict_purity,
)
from .fitting import (
    ConfidenceBand,
    FitDiagnostics,
    SegmentFitter,
    SegmentModel,
    coefficient_t_tests,
    delta_method_band,
    fit_segment,
    model_gradient,
    residual_sum_s0,
    residual_sum_s1,
    sigmoid_ar_predict,
    standard_normal_cdf,
)
from .segmentation import (
    ChangePointSet,
    detect_change_points,
    estimate_change_point,
    segment_bic,
)
from .simulation import (
    SimulationConfig,
    generate_panel,
    run_purity_benchmark,
    write_benchmark_csv,
)
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    ingest_csv,
    result_to_json,
    run_pipeline,
    write_result,
)
