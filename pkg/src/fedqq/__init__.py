"""One-shot federated conformal calibration with quantile-of-quantiles orders."""

from .errors import CapacityError, DomainError, NumericError, RankError
from .special import (
    BetaBetaLaw,
    OrderStatLaw,
    PoissonBinomialLaw,
    beta_beta_cdf,
    beta_beta_quantile,
    beta_cdf,
    beta_quantile,
    beta_quantile_bounds,
    beta_sf,
    poisson_binomial_cdf,
)
from .marginal import (
    MultiOrder,
    PairOrder,
    m_lk_bounds,
    m_lk_exact,
    m_lk_quadrature,
    m_multi_exact,
    m_multi_quadrature,
)
from .planners import (
    FederationShape,
    Guarantee,
    Method,
    Plan,
    make_plan,
    plan_central_conditional,
    plan_central_marginal,
    plan_qqc,
    plan_qqc_fast,
    plan_qqc_nj,
    plan_qqm,
    plan_qqm_fast,
    plan_qqm_nj,
)
from .coverage import (
    CoverageLaw,
    RateFit,
    SweepRecord,
    conditional_upper_bound,
    coverage_law,
    fit_rates,
    fluctuation_interval,
    marginal_upper_bound,
    sweep,
)
from .fed_sim import (
    ScoreMatrix,
    ScoreModel,
    SimResult,
    avg_analytic_coverage,
    replicate,
    run_central,
    run_fedcp_avg,
    run_qq_protocol,
)

__version__ = "0.1.0"
