"""Preference estimation from rank-order lists and assignments."""

from .data import (
    EVT1,
    GAUSSIAN,
    SKIP_BEHAVIOR,
    STABILITY,
    STT_BEHAVIOR,
    WTT,
    ChoiceData,
    ChoiceRecord,
    LogitSpec,
    SimulatedMarket,
    load_choice_data,
    simulate_choice_data,
)
from .gibbs import PORTFOLIO, ROL_ORDER, TEPS, GibbsResult, Priors, geweke_z, gibbs_probit
from .hausman import HausmanResult, LayoutMismatch, hausman_test
from .logit import (
    ConvergenceError,
    FitResult,
    NotIdentifiableError,
    StabilityViolation,
    fit,
    loglik,
)
from .moments import (
    ONE_SIDED_AS_PRINTED,
    TWO_SIDED,
    MomentSet,
    combined_moments,
    covariate_bins,
    moment_statistic,
    stability_equality_moments,
    undominated_pair_moments,
)
from .teps import (
    PartialOrder,
    feasible_set,
    relations_from_scenarios,
    teps_from_scenarios,
    teps_infer,
    transitive_closure,
)
