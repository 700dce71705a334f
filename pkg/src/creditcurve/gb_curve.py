"""Attribute-dependent mean discount function fitted to government bonds.

The mean discount function is a polynomial in time whose coefficients are
linear in the bond's attributes::

    D(s) = 1 + sum_{m=1..p} (d_m1 * 1 + d_m2 * coupon + d_m3 * maturity) * s^m

Prices are ``sum_j C(s_j) D(s_j) + eta`` and the pricing errors ``eta`` get a
structured covariance ``sigma2 * Phi(theta, rho, xi)`` (see :mod:`.kernel`).
Coefficients come from GLS; ``(theta, rho, xi)`` from a grid search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernel
from .errors import DomainError, InvalidInputError, UnderIdentifiedError
from .gls import GlsProblem, GlsResult, GridSpec, check_design_rank, glse, glse_batch, grid_minimize, grid_objective
from .instruments import ATTRIBUTE_NAMES, BondAttributes, CashFlowSchedule, GovernmentBond

DEFAULT_ORDER = 2
MAX_ORDER = 6
GB_GRID_NAMES = ("theta", "rho", "xi")
ATTRIBUTE_FREE = ("constant",)


@dataclass(frozen=True)
class DiscountCoefficients:
    """``coefficients[m - 1, a]`` multiplies ``z_a * s^m``; ``a`` follows ``ATTRIBUTE_NAMES``."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.ndim == 1:
            c = c.reshape(-1, len(ATTRIBUTE_NAMES))
        if c.ndim != 2 or c.shape[1] != len(ATTRIBUTE_NAMES) or c.shape[0] < 1:
            raise InvalidInputError(f"expected a (p, 3) coefficient array, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def order(self) -> int:
        return self.coefficients.shape[0]

    @classmethod
    def zeros(cls, order: int) -> "DiscountCoefficients":
        return cls(np.zeros((order, len(ATTRIBUTE_NAMES))))

    @classmethod
    def from_beta(cls, beta, order: int, attributes: Sequence[str] = ATTRIBUTE_NAMES) -> "DiscountCoefficients":
        """Unpack a regression coefficient vector laid out by :func:`build_gb_regression`."""
        idx = [ATTRIBUTE_NAMES.index(a) for a in attributes]
        c = np.zeros((order, len(ATTRIBUTE_NAMES)))
        c[:, idx] = np.asarray(beta, dtype=float).reshape(order, len(idx))
        return cls(c)

    def beta(self, attributes: Sequence[str] = ATTRIBUTE_NAMES) -> np.ndarray:
        idx = [ATTRIBUTE_NAMES.index(a) for a in attributes]
        return self.coefficients[:, idx].reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, DiscountCoefficients):
            return NotImplemented
        return np.array_equal(self.coefficients, other.coefficients)

    __hash__ = None


@dataclass(frozen=True)
class GbCovarianceParams:
    sigma2: float
    theta: float
    rho: float
    xi: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise InvalidInputError("sigma2 must be positive")
        for name in GB_GRID_NAMES:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {v}")


def mean_discount(coeffs: DiscountCoefficients, attrs: BondAttributes, s):
    """Mean discount factor at time(s) ``s``; exactly 1 at ``s = 0``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise InvalidInputError("time must be non-negative")
    slopes = coeffs.coefficients @ attrs.vector()
    powers = s_arr[..., None] ** np.arange(1, coeffs.order + 1)
    out = 1.0 + powers @ slopes
    return float(out) if np.ndim(s) == 0 else out


def _attribute_values(attrs: BondAttributes, attributes: Sequence[str]) -> np.ndarray:
    full = attrs.vector()
    return np.array([full[ATTRIBUTE_NAMES.index(a)] for a in attributes])


def regression_row(schedule: CashFlowSchedule, attrs: BondAttributes, order: int,
                   attributes: Sequence[str] = ATTRIBUTE_NAMES) -> tuple[float, np.ndarray]:
    """``(a, x)``: the raw cash-flow sum and the regressor row of one bond."""
    C, s = schedule.amounts, schedule.times
    moments = np.array([C @ s**m for m in range(1, order + 1)])
    z = _attribute_values(attrs, attributes)
    return float(C.sum()), np.outer(moments, z).reshape(-1)


def build_gb_regression(bonds: Sequence[GovernmentBond], order: int = DEFAULT_ORDER,
                        attributes: Sequence[str] = ATTRIBUTE_NAMES) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix and response ``y_g = P_g - sum_j C_g(s_j)``.

    Columns run attribute-major within each polynomial order:
    ``(order 1: constant, coupon, maturity; order 2: ...; ...)``.
    """
    _check_order(order)
    _check_attributes(attributes)
    n_params = order * len(attributes)
    if len(bonds) < n_params:
        raise UnderIdentifiedError("government bond regression", len(bonds), n_params)
    rows, y = [], []
    for b in bonds:
        a, x = regression_row(b.schedule, b.attributes, order, attributes)
        rows.append(x)
        y.append(b.price - a)
    return np.array(rows), np.array(y)


def gb_covariance(bonds: Sequence[GovernmentBond], params: GbCovarianceParams) -> np.ndarray:
    """``sigma2 * lambda_gh * phi_gh`` for every bond pair."""
    phi = kernel.flow_covariance([b.schedule.times for b in bonds], [b.schedule.amounts for b in bonds], params.theta)
    lam = kernel.correlation_factor([b.schedule.maturity for b in bonds], params.rho, params.xi)
    return params.sigma2 * lam * phi


@dataclass(frozen=True, eq=False)
class GbCurveModel:
    coefficients: DiscountCoefficients
    covariance: GbCovarianceParams
    residuals: np.ndarray
    residual_std: float
    objective: float
    coef_covariance: np.ndarray
    attributes: tuple = ATTRIBUTE_NAMES
    bond_ids: tuple = ()
    objective_mode: str = "nll"
    max_maturity: float = math.inf

    @property
    def order(self) -> int:
        return self.coefficients.order

    @property
    def attribute_free(self) -> bool:
        return tuple(self.attributes) == ATTRIBUTE_FREE

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.coef_covariance))

    def discount(self, attrs: BondAttributes, s):
        return mean_discount(self.coefficients, attrs, s)

    def discount_free(self, s):
        """Discount curve with coupon and maturity effects switched off."""
        s_arr = np.asarray(s, dtype=float)
        slopes = self.coefficients.coefficients[:, 0]
        out = 1.0 + (s_arr[..., None] ** np.arange(1, self.order + 1)) @ slopes
        return float(out) if np.ndim(s) == 0 else out


def _check_order(order: int):
    if not 1 <= order <= MAX_ORDER:
        raise InvalidInputError(f"polynomial order must be in 1..{MAX_ORDER}, got {order}")


def _check_attributes(attributes):
    if not attributes or any(a not in ATTRIBUTE_NAMES for a in attributes) or len(set(attributes)) != len(attributes):
        raise InvalidInputError(f"attributes must be a non-empty subset of {ATTRIBUTE_NAMES}")


def fit_gb(
    bonds: Sequence[GovernmentBond],
    order: int = DEFAULT_ORDER,
    grid: GridSpec | None = None,
    *,
    attributes: Sequence[str] = ATTRIBUTE_NAMES,
    objective: str = "nll",
) -> GbCurveModel:
    """Grid-search ``(theta, rho, xi)`` and GLS-estimate the discount coefficients.

    ``objective="nll"`` ranks grid points by the profiled Gaussian likelihood
    ``G log(psi / G) + log det Phi``; ``"psi"`` uses the raw quadratic form.
    """
    attributes = tuple(attributes)
    X, y = build_gb_regression(bonds, order, attributes)
    check_design_rank(X)
    grid = grid or GridSpec.default(GB_GRID_NAMES)
    grid = grid.restrict(GB_GRID_NAMES)
    times = [b.schedule.times for b in bonds]
    flows = [b.schedule.amounts for b in bonds]
    mats = np.array([b.schedule.maturity for b in bonds])
    n = len(bonds)
    phi_cache: dict[float, np.ndarray] = {}

    def phi(theta):
        if theta not in phi_cache:
            phi_cache[theta] = kernel.flow_covariance(times, flows, theta)
        return phi_cache[theta]

    def lam(rho, xi):
        return kernel.correlation_factor(mats, rho, xi)

    def batch(points):
        out = np.full(len(points), np.inf)
        for theta in np.unique(points[:, 0]):
            sel = np.flatnonzero(points[:, 0] == theta)
            covs = np.stack([lam(r, x) for r, x in points[sel, 1:]]) * phi(theta)
            _, psi, logdet, ok = glse_batch(X, y, covs)
            vals = grid_objective(psi, logdet, n, objective)
            out[sel] = np.where(ok, vals, np.inf)
        return out

    best = grid_minimize(batch, grid, vectorized=True)
    theta, rho, xi = best.best_tuple
    res = glse(GlsProblem(X, y, lam(rho, xi) * phi(theta)))
    return _model_from(res, order, attributes, (theta, rho, xi), best.best_value, bonds, objective)


def _model_from(res: GlsResult, order, attributes, point, objective_value, bonds, mode) -> GbCurveModel:
    n, p = res.residuals.size, res.coefficients.size
    sigma2 = res.sigma2
    theta, rho, xi = point
    rss = float(res.residuals @ res.residuals)
    return GbCurveModel(
        coefficients=DiscountCoefficients.from_beta(res.coefficients, order, attributes),
        covariance=GbCovarianceParams(sigma2 if sigma2 > 0 else np.finfo(float).tiny, theta, rho, xi),
        residuals=res.residuals,
        residual_std=math.sqrt(rss / (n - p)) if n > p else math.nan,
        objective=float(objective_value),
        coef_covariance=res.coef_covariance,
        attributes=tuple(attributes),
        bond_ids=tuple(b.id for b in bonds),
        objective_mode=mode,
        max_maturity=max(b.schedule.maturity for b in bonds),
    )


def fit_attribute_free(bonds: Sequence[GovernmentBond], order: int = DEFAULT_ORDER,
                       grid: GridSpec | None = None, *, objective: str = "nll") -> GbCurveModel:
    """:func:`fit_gb` with only the constant attribute (coupon and maturity effects zero)."""
    return fit_gb(bonds, order, grid, attributes=ATTRIBUTE_FREE, objective=objective)


def theoretical_price(model: GbCurveModel, schedule: CashFlowSchedule, attrs: BondAttributes) -> float:
    """Price of the non-defaultable cash flows under the fitted mean discount."""
    return float(schedule.amounts @ model.discount(attrs, schedule.times))


def zero_yield(model: GbCurveModel, attrs: BondAttributes, s: float) -> float:
    """Continuously compounded zero rate ``-log(D(s)) / s``."""
    if not s > 0:
        raise InvalidInputError("zero yield needs s > 0")
    d = model.discount(attrs, s)
    if not d > 0:
        raise DomainError(f"mean discount factor {d:.6g} at s={s} is not positive")
    return -math.log(d) / s
