"""Conditional quantile growth charts, penalized B-splines and catch-up growth models."""

from .basis import (
    BSplineBasis,
    KnotVector,
    PenaltyConfig,
    Spline,
    advise_knot_count,
    design_matrix,
    difference_penalty,
    eval_basis,
    eval_spline,
    make_knots,
)
from .catchup import (
    CatchupEstimate,
    CatchupModel,
    CenteredTrajectory,
    center,
    estimate_b,
    is_catchup,
    midpoint_ages,
    simulate_cohort,
    step_eq3,
    step_eq4,
)
from .data import LongitudinalDataset, Measurement, Subject, read_longitudinal_csv, write_longitudinal_csv
from .fit import (
    LinearFit,
    QuantileFit,
    effective_df,
    fit_penalized_ls,
    fit_quantile,
    pinball_loss,
    select_lambda_gcv,
)
from .growthchart import (
    ConditionalQuantileModel,
    build_conditional_design,
    detect_crossings,
    fit_conditional_model,
    predict_conditional_quantile,
    screen,
)
from .sim import Fig1Config, gen_fig1, ise, run_fig1_experiment

__version__ = "0.1.0"
