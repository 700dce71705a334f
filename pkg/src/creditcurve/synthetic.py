"""Synthetic markets drawn from the model itself, used as recovery oracles.

Prices are exact model prices plus an error vector drawn as ``L z`` where
``L`` is the Cholesky factor of the requested covariance and ``z`` standard
normals from ``numpy.random.Generator(PCG64(seed))``. The algorithm identifier
is recorded in the dataset metadata.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel
from .cb_credit import RecoveryRates, TsdpCoefficients, expected_cashflow
from .dataset import MarketDataset
from .errors import GenerationError, InvalidInputError
from .gb_curve import DiscountCoefficients, mean_discount
from .instruments import DAYS_PER_YEAR, BusinessPortfolio, CorporateBond, GovernmentBond

GENERATOR_ID = "numpy-PCG64/standard_normal/cholesky-lower/v1"

DEFAULT_GB_COEFFICIENTS = (
    (-0.035, 0.001, -0.0005),
    (0.0004, -0.00005, 0.00002),
)
DEFAULT_ALPHA = (
    ((0.004, 0.006), (0.010, 0.012)),
    ((0.0003, 0.0004), (0.0005, 0.0008)),
)


@dataclass(frozen=True)
class SyntheticConfig:
    """Counts, true parameters and schedule settings of a synthetic market.

    ``gb_residual_std``, when given, sets the GB error scale so the expected
    GLS residual standard deviation at the true covariance equals that value.
    ``gb_noise_std`` / ``cb_noise_std`` instead set the root-mean-square price
    error standard deviation (per 100 face). With none of these given,
    ``gb_sigma2`` / ``cb_sigma2`` are used directly.

    ``gb_terms`` fixes the government bonds as ``(coupon, maturity)`` pairs
    instead of drawing them, which overrides ``n_gb``.
    """

    seed: int = 0
    n_gb: int = 80
    gb_coefficients: tuple = DEFAULT_GB_COEFFICIENTS
    gb_theta: float = 0.5
    gb_rho: float = 0.4
    gb_xi: float = 0.2
    gb_sigma2: float = 0.0
    gb_residual_std: float | None = 0.33
    gb_noise_std: float | None = None
    gb_terms: tuple | None = None
    cb_counts: tuple = (32, 32)
    alpha: tuple = DEFAULT_ALPHA
    gamma: tuple = (0.3, 0.4)
    cb_theta: float = 0.5
    cb_rho: tuple = ((0.3, 0.0), (0.0, 0.3))
    cb_xi: tuple = ((0.2, 0.2), (0.2, 0.2))
    cb_sigma2: float = 0.0
    cb_noise_std: float | None = 0.05
    coupon_range: tuple = (1.0, 8.0)
    maturity_range: tuple = (0.5, 10.0)
    cb_maturity_range: tuple = (1.0, 10.0)
    frequency: int = 2
    weight_concentration: float = 0.7
    price_decimals: int | None = 6
    industries: tuple | None = None
    ratings: tuple | None = None
    valuation_date: str = "2000-01-01"

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim != 3:
            raise InvalidInputError("alpha must be nested as [order][grade][industry]")
        if len(self.cb_counts) != alpha.shape[1] or len(self.gamma) != alpha.shape[1]:
            raise InvalidInputError("cb_counts, gamma and alpha disagree on the number of grades")
        for name in ("gb_theta", "gb_rho", "gb_xi", "cb_theta"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidInputError(f"{name} must lie in [0, 1]")
        for name in ("cb_rho", "cb_xi"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (alpha.shape[1],) * 2 or np.any(m < 0) or np.any(m > 1) or not np.array_equal(m, m.T):
                raise InvalidInputError(f"{name} must be a symmetric I x I matrix in [0, 1]")
        if any(not 0 <= g <= 1 for g in self.gamma):
            raise InvalidInputError("gamma must lie in [0, 1]")
        if self.gb_sigma2 < 0 or self.cb_sigma2 < 0:
            raise InvalidInputError("sigma2 must be non-negative")

    @property
    def grades(self) -> int:
        return len(self.cb_counts)

    @property
    def n_industries(self) -> int:
        return np.asarray(self.alpha).shape[2]

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        def tup(x):
            return tuple(tup(v) for v in x) if isinstance(x, (list, tuple)) else x
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise InvalidInputError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**{k: tup(v) for k, v in d.items()})


def _draw_terms(rng, n, coupon_range, maturity_range):
    coupons = np.round(rng.uniform(*coupon_range, size=n), 1)
    lo, hi = (int(round(m * DAYS_PER_YEAR)) for m in maturity_range)
    maturities = rng.integers(lo, hi + 1, size=n) / DAYS_PER_YEAR
    return coupons, maturities


def _draw_errors(rng, cov: np.ndarray, what: str) -> np.ndarray:
    z = rng.standard_normal(cov.shape[0])
    if cov.size == 0 or not np.any(cov):
        return np.zeros(cov.shape[0])
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise GenerationError(f"{what} error covariance is not positive definite") from exc
    return L @ z


def _scale(noise_std, sigma2, unit_cov) -> float:
    if noise_std is not None:
        return float(noise_std) ** 2 / float(np.mean(np.diag(unit_cov)))
    return float(sigma2)


def _residual_scale(target, bonds, order, unit_cov) -> float:
    """sigma2 with ``E[r'r] / (G - P) = target**2`` for GLS residuals ``r``."""
    from .gb_curve import build_gb_regression

    X, _ = build_gb_regression(bonds, order)
    L = np.linalg.cholesky(unit_cov)
    Xw = np.linalg.solve(L, X)
    Q, _ = np.linalg.qr(Xw)
    # r = L (I - Q Q') L^{-1} eta, so E[r'r] = sigma2 * tr(L M L') with M = I - QQ'
    LM = L - (L @ Q) @ Q.T
    expected_unit = float(np.sum(LM * L))
    n, p = X.shape
    return float(target) ** 2 * (n - p) / expected_unit


def _round(x, decimals):
    return float(round(x, decimals)) if decimals is not None else float(x)


def generate_synthetic(config: SyntheticConfig) -> MarketDataset:
    """Draw a market from ``config``; deterministic for a fixed seed."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    f = config.frequency
    delta = DiscountCoefficients(np.asarray(config.gb_coefficients, dtype=float))

    if config.gb_terms is not None:
        coupons, mats = (np.array(v, dtype=float).reshape(-1) for v in zip(*config.gb_terms))
    else:
        coupons, mats = _draw_terms(rng, config.n_gb, config.coupon_range, config.maturity_range)
    gb_terms = [GovernmentBond.from_terms(f"GB{g + 1:03d}", 100.0, c, m, f) for g, (c, m) in enumerate(zip(coupons, mats))]
    exact = np.array([b.schedule.amounts @ mean_discount(delta, b.attributes, b.schedule.times) for b in gb_terms])
    unit = kernel.correlation_factor(mats, config.gb_rho, config.gb_xi) * kernel.flow_covariance(
        [b.schedule.times for b in gb_terms], [b.schedule.amounts for b in gb_terms], config.gb_theta)
    if config.gb_residual_std is not None and len(gb_terms) > delta.order * 3:
        gb_sigma2 = _residual_scale(config.gb_residual_std, gb_terms, delta.order, unit)
    else:
        gb_sigma2 = _scale(config.gb_noise_std, config.gb_sigma2, unit)
    eta = _draw_errors(rng, gb_sigma2 * unit, "government bond")
    gov = []
    for b, p, e in zip(gb_terms, exact, eta):
        price = _round(p + e, config.price_decimals)
        if not price > 0:
            raise GenerationError(f"bond {b.id} drew a non-positive price")
        gov.append(GovernmentBond(b.id, price, b.schedule, b.attributes))

    J = config.n_industries
    I = config.grades
    tsdp = TsdpCoefficients(np.asarray(config.alpha, dtype=float))
    recovery = RecoveryRates(config.gamma)
    cb_terms = []
    for i, count in enumerate(config.cb_counts, start=1):
        c, m = _draw_terms(rng, count, config.coupon_range, config.cb_maturity_range)
        weights = rng.dirichlet(np.full(J, config.weight_concentration), size=count)
        for k in range(count):
            w = weights[k] / weights[k].sum()
            cb_terms.append(CorporateBond.from_terms(
                f"CB{i}_{k + 1:03d}", 100.0, c[k], m[k], i, BusinessPortfolio(w), f))
    exact_cb, flows = [], []
    for b in cb_terms:
        cbar = expected_cashflow(b, tsdp, recovery)
        flows.append(cbar)
        exact_cb.append(cbar @ mean_discount(delta, b.attributes, b.schedule.times))
    if cb_terms:
        grades = np.array([b.grade for b in cb_terms], dtype=int) - 1
        rho = np.asarray(config.cb_rho, dtype=float)[np.ix_(grades, grades)]
        xi = np.asarray(config.cb_xi, dtype=float)[np.ix_(grades, grades)]
        unit_cb = kernel.correlation_factor([b.schedule.maturity for b in cb_terms], rho, xi) * kernel.flow_covariance(
            [b.schedule.times for b in cb_terms], flows, config.cb_theta)
        cb_sigma2 = _scale(config.cb_noise_std, config.cb_sigma2, unit_cb)
    else:
        unit_cb, cb_sigma2 = np.zeros((0, 0)), 0.0
    eps = _draw_errors(rng, cb_sigma2 * unit_cb, "corporate bond")
    corp = []
    for b, p, e in zip(cb_terms, exact_cb, eps):
        price = _round(p + e, config.price_decimals)
        if not price > 0:
            raise GenerationError(f"bond {b.id} drew a non-positive price")
        corp.append(CorporateBond(b.id, price, b.schedule, b.attributes, b.grade, b.portfolio, b.issuer))

    truth = {
        "gb": {"coefficients": delta.coefficients.tolist(), "sigma2": gb_sigma2, "theta": config.gb_theta,
               "rho": config.gb_rho, "xi": config.gb_xi, "errors": eta.tolist(),
               "residual_std": config.gb_residual_std,
               "price_std": float(np.sqrt(np.mean(np.diag(gb_sigma2 * unit))))},
        "cb": {"alpha": tsdp.alpha.tolist(), "gamma": list(config.gamma), "sigma2": cb_sigma2,
               "theta": config.cb_theta, "rho": np.asarray(config.cb_rho).tolist(),
               "xi": np.asarray(config.cb_xi).tolist(), "errors": eps.tolist(),
               "price_std": float(np.sqrt(np.mean(np.diag(cb_sigma2 * unit_cb)))) if cb_terms else 0.0},
    }
    return MarketDataset(
        gov_bonds=gov,
        corp_bonds=corp,
        industries=config.industries or tuple(f"IND{j + 1}" for j in range(J)),
        ratings=config.ratings or tuple(f"R{i + 1}" for i in range(I)),
        valuation_date=config.valuation_date,
        frequency=f,
        truth=truth,
        metadata={"generator": GENERATOR_ID, "seed": config.seed},
    )
