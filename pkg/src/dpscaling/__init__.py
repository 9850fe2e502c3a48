"""Planning and analysis toolkit for differentially private model training.

Calibrate noise to privacy budgets, clean and fit loss-measurement grids,
and search constant-compute training configurations for compute-, privacy-,
and data-optimal settings.
"""

from .accounting import (
    AccountingSetup,
    AdvantageResult,
    Batching,
    CalibrationError,
    CalibrationResult,
    NoiseBatchRatio,
    PrivacyProfile,
    PrivacySpec,
    RdpCurve,
    VectorField,
    analytic_gaussian_delta,
    calibrate_detail,
    calibrate_nbr,
    compose,
    epsilon_of,
    mia_advantage,
    privacy_profile,
    rdp_gaussian,
    rdp_subsampled_gaussian,
    rdp_to_dp,
    vector_field,
)
from .grid import (
    GridLoadError,
    GridState,
    GridStateError,
    Measurement,
    MeasurementGrid,
    PowerLawFit,
    clean,
    extrapolate,
    fit_power_law,
    grid_from_measurements,
    isotonic_fit,
    load_grid_csv,
    rolling_average,
    smooth,
    synth_grid,
)
from .grid import FitError
from .lawfit import (
    DomainError,
    FitFilters,
    InterpolatedLaw,
    ParametricFitError,
    ParametricLaw,
    build_interpolator,
    fit_parametric,
    law_from_json_obj,
    law_to_json_obj,
    nbr_transform,
    nbr_transform_inverse,
    optimal_model_size,
    predict_parametric,
    query,
)
from .planner import (
    AllocationBand,
    AllocationReport,
    BaselineComparison,
    Budgets,
    PlanError,
    PlanResult,
    SweepSeries,
    TrainingConfig,
    compare_baselines,
    critical_compute,
    enumerate_configs,
    evaluate,
    load_baselines,
    loss_vs_compute,
    matched_loss_savings,
    optimal_allocation,
    sweep,
    token_model_sweep,
)

__version__ = "0.1.0"
