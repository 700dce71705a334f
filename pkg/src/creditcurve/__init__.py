"""Government discount curves, implied default probabilities and recovery rates
from corporate bond prices, and the analytics built on them."""

from .analytics import (
    PortfolioDecomposition,
    PortfolioPosition,
    credit_discount,
    durations,
    fair_spread,
    implied_tsdp_curve,
    issuer_tsdp,
    portfolio_decompose,
)
from .cb_credit import (
    CbCovarianceParams,
    CreditFit,
    RecoveryRates,
    TsdpCoefficients,
    build_cb_regression,
    cb_covariance,
    expected_cashflow,
    fit_cb_full,
    fit_cb_grade,
    fit_credit,
    select_order,
    tsdp_eval,
)
from .cds import (
    CdsContract,
    DefaultCurve,
    DiscountGrid,
    cds_premium,
    cds_premium_continuous,
    default_curve,
    mc_premium,
    payoff_value,
    simulate_default_times,
)
from .dataio import load_market_data, write_market_data
from .dataset import MarketDataset
from .errors import (
    CreditCurveError,
    DomainError,
    InvalidInputError,
    NoFairPremiumError,
    NoFeasiblePointError,
    NumericalError,
    ParseError,
    SingularSystemError,
    UnderIdentifiedError,
    ValidationError,
)
from .gb_curve import (
    DiscountCoefficients,
    GbCovarianceParams,
    GbCurveModel,
    build_gb_regression,
    fit_attribute_free,
    fit_gb,
    gb_covariance,
    mean_discount,
)
from .gls import GlsProblem, GlsResult, GridSpec, glse, grid_minimize
from .instruments import (
    BondAttributes,
    BusinessPortfolio,
    CashFlowSchedule,
    CorporateBond,
    GovernmentBond,
    build_schedule,
)
from .synthetic import SyntheticConfig, generate_synthetic

__version__ = "0.1.0"
