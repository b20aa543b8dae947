"""Covert Bayesian quickest change detection: policies, bounds, simulation and a DP baseline."""

from .bounds import (
    BoundsReport,
    BoundVacuousError,
    add_relaxed,
    add_upper,
    bounds_report,
    converse_lower,
    ecb_upper,
    exact_quadratic_root_lower,
    first_order,
    m_over,
    second_order_achievable,
    second_order_coefficient,
    sqrt_taylor_lower,
)
from .model import (
    ChannelAssumptionError,
    ChannelSpec,
    Prior,
    Scenario,
    build_channel,
    reference_channel,
    reference_scenario,
    product_channel,
    sample_changepoint,
    sample_observation,
)
from .policy import (
    ConstantBetaShiryaev,
    DpPolicy,
    Innocent,
    ShiryaevState,
    act,
    proposed_sensing_rate,
    shiryaev_should_stop,
    shiryaev_update,
)
from .probability import (
    AbsoluteContinuityError,
    DivergencePair,
    Pmf,
    SupportMismatchError,
    chi2_divergence,
    divergences,
    kl_divergence,
    llr_second_moment,
)
from .simulate import McSummary, PolicyTrace, estimate, innocent_add, run_one
from .covertness_oracle import TruncatedDistributions, truncated_kl_vs_ecb
from .dp import BeliefGridPolicy, solve

__version__ = "0.1.0"
