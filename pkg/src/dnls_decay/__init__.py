"""Numerical laboratory for L^2 decay in dissipative cubic derivative NLS."""

from .decay import (
    BoundReport,
    DecayCurve,
    FitModel,
    RateFit,
    ThetaProfile,
    eval_S,
    fit_rate,
    lower_bound_cert,
    predicted_curve,
    predicted_l2,
    upper_bound_cert,
)
from .nonlinearity import (
    CubicNonlinearity,
    DissipativityClass,
    DissipativityReport,
    NuPolynomial,
    check_gauge_condition,
    classify,
    evaluate_N,
    nu_closed_form,
    nu_contour,
)
from .pipeline import ComparisonReport, ExperimentConfig, emit_plots, run_pipeline
from .profile import (
    PQState,
    ProfileField,
    RemainderSpec,
    closed_form_A,
    integrate_beta,
    integrate_pq,
    tracking_harness,
    verify_tracking,
)
from .solver import (
    AlphaField,
    DiagnosticsRecord,
    SimulationConfig,
    SpectralState,
    compute_alpha,
    mass_flux,
    run_experiment,
    step,
)

__version__ = "0.1.0"
