"""Discrete-time CDS pricing from an implied default curve.

Time runs on a daily grid ``m = 0, 1, ..., M`` (``h = 1/365`` years). The
protection seller's value of the day-``m`` cash flow, per 100 notional and
with default independent of rates, is

    nu(m) = 100 D(m) [ -(1 - gamma) Q(N = m) + delta(m) x Q(N > m) ]

with ``Q(N <= m)`` the issuer's default curve and ``delta(m) = 1`` on premium
dates. The fair premium ``x`` (per payment, per unit notional) zeroes the sum.
A Monte Carlo pricer samples default days by inverse transform and averages
pathwise payoffs; it also supports settlement lags.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .analytics import issuer_tsdp
from .cb_credit import CreditFit
from .errors import DomainError, InvalidInputError, NoFairPremiumError, NumericalError
from .gb_curve import GbCurveModel
from .gls import default_workers
from .instruments import DAYS_PER_YEAR, FACE, BusinessPortfolio, day_key

log = logging.getLogger(__name__)

H = 1.0 / DAYS_PER_YEAR
NO_DEFAULT = -1
MC_BLOCK = 1 << 16


@dataclass(frozen=True)
class CdsContract:
    """Premium days ``premium_times`` lie in ``1..horizon_days``.

    ``pay_lag_days`` delays the seller's payment of the notional after
    default and ``recovery_lag_days`` the receipt of the recovery; both are
    honoured only by :func:`mc_premium`.
    """

    horizon_days: int
    premium_times: tuple
    grade: int = 1
    portfolio: BusinessPortfolio | None = None
    notional: float = FACE
    pay_lag_days: int = 0
    recovery_lag_days: int = 0

    def __post_init__(self):
        days = tuple(int(m) for m in self.premium_times)
        if self.horizon_days < 1:
            raise InvalidInputError("horizon must be at least one day")
        if not days:
            raise InvalidInputError("contract needs at least one premium date")
        if days[0] < 1 or days[-1] > self.horizon_days or any(b <= a for a, b in zip(days, days[1:])):
            raise InvalidInputError("premium days must be strictly increasing within 1..horizon")
        if self.pay_lag_days < 0 or self.recovery_lag_days < 0:
            raise InvalidInputError("lags must be non-negative")
        if not self.notional > 0:
            raise InvalidInputError("notional must be positive")
        object.__setattr__(self, "premium_times", days)

    @classmethod
    def regular(cls, horizon_years: float, frequency: int, grade: int = 1,
                portfolio: BusinessPortfolio | None = None, **kwargs) -> "CdsContract":
        """Premiums every ``1/frequency`` years up to the horizon, on the nearest day."""
        n = int(round(horizon_years * frequency))
        if n < 1 or abs(n - horizon_years * frequency) > 1e-9:
            raise InvalidInputError("horizon must be a whole number of premium periods")
        days = tuple(day_key(k / frequency) for k in range(1, n + 1))
        return cls(day_key(horizon_years), days, grade, portfolio, **kwargs)

    @property
    def max_lag(self) -> int:
        return max(self.pay_lag_days, self.recovery_lag_days)


@dataclass(frozen=True, eq=False)
class DefaultCurve:
    """``Q[m] = Q(N <= m)`` for ``m = 0..M``."""

    Q: np.ndarray
    flags: tuple = ()

    def __post_init__(self):
        q = np.array(self.Q, dtype=float).reshape(-1)
        if q.size < 2:
            raise InvalidInputError("default curve needs at least one day")
        if q[0] != 0.0:
            raise InvalidInputError("Q(0) must be 0")
        if np.any(q < 0) or np.any(q > 1) or np.any(np.diff(q) < 0):
            raise InvalidInputError("Q must be a non-decreasing probability")
        q.setflags(write=False)
        object.__setattr__(self, "Q", q)

    @property
    def horizon_days(self) -> int:
        return self.Q.size - 1

    @property
    def default_mass(self) -> np.ndarray:
        """``Q(N = m)`` for ``m = 1..M``."""
        return np.diff(self.Q)

    def survival(self, m) -> np.ndarray:
        return 1.0 - self.Q[np.asarray(m)]


def default_curve(fit: CreditFit, portfolio: BusinessPortfolio, grade: int, horizon_days: int) -> DefaultCurve:
    """Issuer curve on the day grid, clamped to [0, 1] and made non-decreasing."""
    if horizon_days < 1:
        raise InvalidInputError("horizon must be at least one day")
    s = np.arange(horizon_days + 1) * H
    raw = np.asarray(issuer_tsdp(fit, portfolio, grade, s), dtype=float)
    flags = []
    if np.any(raw < 0) or np.any(raw > 1):
        flags.append("curve clamped to [0, 1]")
        log.warning("default curve outside [0, 1]; clamping")
    q = np.clip(raw, 0.0, 1.0)
    if np.any(np.diff(q) < 0):
        flags.append("curve decreases; running maximum applied")
        log.warning("default curve decreases; applying running maximum")
        q = np.maximum.accumulate(q)
    span = fit.maturity_span.get(grade)
    if span is not None and horizon_days * H > span + 1e-12:
        flags.append(f"horizon {horizon_days * H:.4g}y beyond fitted maturity span {span:.4g}y")
    q[0] = 0.0
    return DefaultCurve(q, tuple(flags))


@dataclass(frozen=True, eq=False)
class DiscountGrid:
    """``D[m]``: discount factor for day ``m``, with ``D[0] = 1``."""

    D: np.ndarray

    def __post_init__(self):
        d = np.array(self.D, dtype=float).reshape(-1)
        if d.size < 1 or d[0] != 1.0:
            raise InvalidInputError("discount grid must start at 1")
        if np.any(~(d > 0)):
            raise DomainError("discount factors must be positive")
        d.setflags(write=False)
        object.__setattr__(self, "D", d)

    @property
    def days(self) -> int:
        return self.D.size - 1

    @classmethod
    def from_model(cls, gb: GbCurveModel, days: int) -> "DiscountGrid":
        """Sample an attribute-free government curve on days ``0..days``."""
        if not gb.attribute_free:
            raise InvalidInputError("CDS legs need an attribute-free discount curve")
        d = np.asarray(gb.discount_free(np.arange(days + 1) * H), dtype=float)
        if np.any(~(d > 0)):
            bad = int(np.argmax(~(d > 0)))
            raise DomainError(f"discount factor {d[bad]:.6g} at day {bad} is not positive")
        return cls(d)

    @classmethod
    def flat(cls, days: int, rate: float = 0.0) -> "DiscountGrid":
        """Continuously compounded flat curve."""
        return cls(np.exp(-rate * np.arange(days + 1) * H))

    def at_years(self, s) -> np.ndarray:
        """Linear interpolation in time (for quadrature)."""
        return np.interp(np.asarray(s, dtype=float), np.arange(self.D.size) * H, self.D)


def _check_inputs(contract: CdsContract, curve: DefaultCurve, disc: DiscountGrid, gamma: float, extra: int = 0):
    if not 0 <= gamma <= 1:
        raise InvalidInputError("recovery rate must lie in [0, 1]")
    if curve.horizon_days < contract.horizon_days:
        raise InvalidInputError(f"default curve covers {curve.horizon_days} days, contract needs {contract.horizon_days}")
    need = contract.horizon_days + extra
    if disc.days < need:
        raise InvalidInputError(f"discount grid covers {disc.days} days, {need} needed")


def payoff_value(contract: CdsContract, curve: DefaultCurve, disc: DiscountGrid, gamma: float,
                 x: float, m: int) -> float:
    """Present value to the protection seller of the day-``m`` cash flow."""
    if not 1 <= m <= contract.horizon_days:
        raise InvalidInputError(f"day {m} outside 1..{contract.horizon_days}")
    _check_inputs(contract, curve, disc, gamma)
    jump = curve.Q[m] - curve.Q[m - 1]
    premium = x * (1.0 - curve.Q[m]) if m in contract.premium_times else 0.0
    return float(contract.notional * disc.D[m] * (-(1.0 - gamma) * jump + premium))


def _legs(contract: CdsContract, curve: DefaultCurve, disc: DiscountGrid, gamma: float) -> tuple[float, float]:
    M = contract.horizon_days
    protection = (1.0 - gamma) * float(disc.D[1:M + 1] @ np.diff(curve.Q[:M + 1]))
    days = np.array(contract.premium_times)
    premium = float((1.0 - curve.Q[days]) @ disc.D[days])
    return protection, premium


def seller_value(contract: CdsContract, curve: DefaultCurve, disc: DiscountGrid, gamma: float, x: float) -> float:
    """Sum of :func:`payoff_value` over every day of the contract."""
    _check_inputs(contract, curve, disc, gamma)
    protection, premium = _legs(contract, curve, disc, gamma)
    return contract.notional * (x * premium - protection)


def _solve(protection: float, premium: float) -> float:
    if premium <= 0.0:
        raise NoFairPremiumError("premium leg has zero value (default certain before every premium date)")
    return protection / premium


def cds_premium(contract: CdsContract, curve: DefaultCurve, disc: DiscountGrid, gamma: float) -> float:
    """Fair premium per payment, as a fraction of notional."""
    _check_inputs(contract, curve, disc, gamma)
    protection, premium = _legs(contract, curve, disc, gamma)
    x = _solve(protection, premium)
    value = contract.notional * (x * premium - protection)
    scale = contract.notional * max(protection, x * premium, np.finfo(float).tiny)
    if abs(value) > 1e-12 * scale:
        raise NumericalError(f"fair-value check failed: seller value {value:.3e} at x={x:.6g}")
    return x


def cds_premium_continuous(contract: CdsContract, tsdp: Callable, tsdp_derivative: Callable,
                           discount: Callable, gamma: float, step: float = H) -> float:
    """Premium with the protection leg as ``(1 - gamma) * int_0^T D(s) p'(s) ds``.

    ``tsdp``, ``tsdp_derivative`` and ``discount`` are functions of time in
    years; the integral uses the composite trapezoid rule with spacing at most
    ``step``. Survival at premium dates uses ``1 - tsdp`` clamped to [0, 1].
    """
    if not step > 0:
        raise InvalidInputError("quadrature step must be positive")
    if not 0 <= gamma <= 1:
        raise InvalidInputError("recovery rate must lie in [0, 1]")
    T = contract.horizon_days * H
    n = max(1, math.ceil(T / step - 1e-9))
    s = np.linspace(0.0, T, n + 1)
    integrand = np.asarray(discount(s), dtype=float) * np.asarray(tsdp_derivative(s), dtype=float)
    protection = (1.0 - gamma) * float(integrate.trapezoid(integrand, s))
    t_k = np.array(contract.premium_times) * H
    surv = 1.0 - np.clip(np.asarray(tsdp(t_k), dtype=float), 0.0, 1.0)
    premium = float(surv @ np.asarray(discount(t_k), dtype=float))
    return _solve(protection, premium)


def polynomial_tsdp(fit: CreditFit, portfolio: BusinessPortfolio, grade: int) -> tuple[Callable, Callable]:
    """The issuer curve and its time derivative as callables."""
    w = np.asarray(portfolio.weights, dtype=float)
    coeffs = fit.tsdp.alpha[:, grade - 1, :] @ w
    powers = np.arange(1, coeffs.size + 1)

    def p(s):
        s = np.asarray(s, dtype=float)
        return (s[..., None] ** powers) @ coeffs

    def dp(s):
        s = np.asarray(s, dtype=float)
        return (s[..., None] ** (powers - 1)) @ (coeffs * powers)

    return p, dp


def _block_defaults(Q: np.ndarray, seed: int, block: int, size: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))
    u = 1.0 - rng.random(size)  # (0, 1], so day 0 never defaults
    days = np.searchsorted(Q, u, side="left")
    days[days >= Q.size] = NO_DEFAULT
    return days


def simulate_default_times(curve: DefaultCurve, n_paths: int, seed: int, *,
                           max_workers: int | None = None) -> np.ndarray:
    """Default day per path by inverse transform, ``NO_DEFAULT`` for survivors.

    Paths are drawn in fixed blocks, each with its own seed stream, so the
    output depends only on ``(seed, n_paths)`` and not on the worker count.
    """
    if n_paths < 1:
        raise InvalidInputError("need at least one path")
    sizes = [min(MC_BLOCK, n_paths - start) for start in range(0, n_paths, MC_BLOCK)]
    workers = min(default_workers() if max_workers is None else max(1, max_workers), len(sizes))
    jobs = [(curve.Q, seed, b, size) for b, size in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _block_defaults(*a), jobs))
    else:
        parts = [_block_defaults(*a) for a in jobs]
    return np.concatenate(parts)


def mc_premium(contract: CdsContract, curve: DefaultCurve, disc: DiscountGrid, gamma: float,
               n_paths: int, seed: int, *, max_workers: int | None = None) -> float:
    """Fair premium from pathwise-averaged legs.

    On default at day ``N`` the seller pays the notional at ``N + pay_lag``
    and receives ``gamma`` times it at ``N + recovery_lag``; premiums are
    paid on premium dates strictly before default.
    """
    _check_inputs(contract, curve, disc, gamma, contract.max_lag)
    if gamma == 1.0 and contract.pay_lag_days == contract.recovery_lag_days:
        return 0.0
    N = simulate_default_times(curve, n_paths, seed, max_workers=max_workers)
    hit = (N != NO_DEFAULT) & (N <= contract.horizon_days)
    Nd = N[hit]
    protection = (disc.D[Nd + contract.pay_lag_days] - gamma * disc.D[Nd + contract.recovery_lag_days]).sum() / n_paths
    days = np.array(contract.premium_times)
    alive = np.where(N == NO_DEFAULT, np.iinfo(np.int64).max, N)
    # paths alive after each premium day
    counts = n_paths - np.searchsorted(np.sort(alive), days, side="right")
    premium = float(counts @ disc.D[days]) / n_paths
    return _solve(float(protection), premium)


def premium_from_fit(fit: CreditFit, gb: GbCurveModel, portfolio: BusinessPortfolio, grade: int,
                     horizon_years: float, frequency: int) -> tuple[float, CdsContract, DefaultCurve]:
    """Analytic premium for a regular contract on an issuer of ``grade``."""
    contract = CdsContract.regular(horizon_years, frequency, grade, portfolio)
    curve = default_curve(fit, portfolio, grade, contract.horizon_days)
    disc = DiscountGrid.from_model(gb, contract.horizon_days)
    return cds_premium(contract, curve, disc, fit.recovery[grade]), contract, curve


def annualized(x: float, frequency: int) -> float:
    """Per-payment premium quoted as a yearly rate."""
    return x * frequency

