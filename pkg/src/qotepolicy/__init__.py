"""Partial-identification bounds on quantiles of treatment effects and the
minimax treatment rules they support: conditional-marginal estimation,
coupling linear programs, regret calculus, hinge-loss policy learning, and a
replication harness, behind one batch CLI."""

from .bounds import (
    AssumptionSet,
    BernsteinCoefs,
    Coupling,
    CVaR,
    DeltaCdfBounds,
    DisadvantagedGain,
    QoteBounds,
    bernstein_lp_bounds,
    bernstein_optimal_coefs,
    coupling_lp_bounds,
    default_t_grid,
    functional_bounds,
    invert_bounds,
    makarov_bounds,
    qote_coupling_bounds,
    rank_invariance_qote,
    symmetry_median_qote,
)
from .lpcore import LinearProgram, LpSolution, solve_lp
from .marginals import (
    ConditionalCdf,
    QuantileCurve,
    Sample,
    curve_from_cdf,
    empirical_quantile,
    kernel_conditional_cdf,
    make_y_grid,
    read_sample_csv,
    u_grid,
)
from .owl import (
    DecisionFunction,
    TrainConfig,
    cells_from_bound_field,
    predict_policy,
    surrogate_regret,
    train_owl,
)
from .policy import (
    BoundField,
    PolicyField,
    RegretBoundReport,
    RegretReport,
    TruthField,
    cell_max_regret,
    derive_policy,
    first_best,
    maximin_rule,
    max_regret,
    mmr_deterministic,
    mmr_stochastic,
    qbar,
    regret_bound_check,
    true_regret,
)
from .sim import (
    SUBGROUPS,
    DgpSpec,
    TruthSet,
    classification_experiment,
    closed_form_truths,
    draw_sample,
    mc_oracle_qote,
    regret_experiment,
    truths_for,
    vote_share_check,
)

__version__ = "0.1.0"
