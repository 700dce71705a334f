"""Bonds, cash-flow schedules and issuer business portfolios.

Times are year fractions. Two times are treated as the same payment date when
they fall on the same day of a 365-day grid (see :func:`day_key`), which keeps
payment-date membership tests free of float-equality surprises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

FACE = 100.0
DAYS_PER_YEAR = 365
ATTRIBUTE_NAMES = ("constant", "coupon", "maturity")
_FREQUENCIES = (1, 2, 4)


def day_key(s: float) -> int:
    """Index of the 1/365-year grid cell nearest to ``s`` (ties round up)."""
    return int(math.floor(s * DAYS_PER_YEAR + 0.5))


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CashFlowSchedule:
    """Future payment times (years) and the amount paid at each, per 100 face."""

    times: np.ndarray
    amounts: np.ndarray
    _keys: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = _frozen_array(self.times)
        amounts = _frozen_array(self.amounts)
        if times.size == 0:
            raise InvalidInputError("schedule has no future cash flows")
        if times.shape != amounts.shape:
            raise InvalidInputError("times and amounts differ in length")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(amounts)):
            raise InvalidInputError("schedule contains non-finite values")
        if np.any(times <= 0):
            raise InvalidInputError("payment times must be positive")
        keys = tuple(day_key(t) for t in times)
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise InvalidInputError("payment times must be strictly increasing on the day grid")
        if np.any(amounts < 0):
            raise InvalidInputError("payment amounts must be non-negative")
        if amounts[-1] < FACE:
            raise InvalidInputError("final payment must include the principal of 100")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "amounts", amounts)
        object.__setattr__(self, "_keys", keys)

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, CashFlowSchedule):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.amounts, other.amounts)

    def __hash__(self):
        return hash((self.times.tobytes(), self.amounts.tobytes()))

    @property
    def maturity(self) -> float:
        return float(self.times[-1])

    @property
    def day_keys(self) -> tuple:
        return self._keys

    @property
    def previous_times(self) -> np.ndarray:
        """Times shifted by one payment, with 0 standing in before the first."""
        return np.concatenate(([0.0], self.times[:-1]))

    def is_payment_time(self, s: float) -> bool:
        return day_key(s) in self._keys

    def amount_at(self, s: float) -> float:
        """Cash flow C(s); zero away from the payment dates."""
        k = day_key(s)
        try:
            return float(self.amounts[self._keys.index(k)])
        except ValueError:
            return 0.0


def build_schedule(coupon_rate: float, maturity: float, frequency: int = 2) -> CashFlowSchedule:
    """Regular coupon schedule with a short first (stub) period.

    Payments fall at ``maturity - k / frequency`` for every ``k`` that keeps
    the time positive; each pays ``coupon_rate / frequency`` and the last one
    adds the face value.

    >>> s = build_schedule(5.0, 1.0, 2)
    >>> s.times.tolist(), s.amounts.tolist()
    ([0.5, 1.0], [2.5, 102.5])
    """
    if not maturity > 0:
        raise InvalidInputError(f"maturity must be positive, got {maturity}")
    if frequency not in _FREQUENCIES:
        raise InvalidInputError(f"frequency must be one of {_FREQUENCIES}, got {frequency}")
    if coupon_rate < 0:
        raise InvalidInputError(f"coupon rate must be non-negative, got {coupon_rate}")
    periods = maturity * frequency
    n = int(round(periods)) if abs(periods - round(periods)) < 1e-9 else math.ceil(periods)
    n = max(n, 1)
    times = np.array([maturity - k / frequency for k in range(n - 1, -1, -1)])
    amounts = np.full(n, coupon_rate / frequency)
    amounts[-1] += FACE
    return CashFlowSchedule(times, amounts)


@dataclass(frozen=True)
class BondAttributes:
    """Attribute variables entering the mean discount function."""

    coupon_rate: float
    maturity: float
    constant: float = 1.0

    def __post_init__(self):
        if self.coupon_rate < 0:
            raise InvalidInputError("coupon rate must be non-negative")
        if not self.maturity > 0:
            raise InvalidInputError("maturity must be positive")

    def vector(self) -> np.ndarray:
        """(constant, coupon, maturity), in :data:`ATTRIBUTE_NAMES` order."""
        return np.array([self.constant, self.coupon_rate, self.maturity])


@dataclass(frozen=True)
class GovernmentBond:
    id: str
    price: float
    schedule: CashFlowSchedule
    attributes: BondAttributes

    def __post_init__(self):
        if not self.price > 0:
            raise InvalidInputError(f"bond {self.id}: price must be positive")
        if day_key(self.schedule.maturity) != day_key(self.attributes.maturity):
            raise InvalidInputError(f"bond {self.id}: schedule does not end at the stated maturity")

    @classmethod
    def from_terms(cls, id: str, price: float, coupon_rate: float, maturity: float, frequency: int = 2):
        return cls(id, price, build_schedule(coupon_rate, maturity, frequency), BondAttributes(coupon_rate, maturity))


@dataclass(frozen=True)
class BusinessPortfolio:
    """Sales-ratio weights of an issuer over the declared industries."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights)
        if w.size == 0:
            raise InvalidInputError("portfolio needs at least one industry")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise InvalidInputError("portfolio weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"portfolio weights sum to {w.sum():.12g}, not 1")
        object.__setattr__(self, "weights", w)

    def __eq__(self, other):
        if not isinstance(other, BusinessPortfolio):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    def __len__(self) -> int:
        return self.weights.size

    @classmethod
    def single(cls, industry: int, n_industries: int) -> "BusinessPortfolio":
        """One-hot portfolio on a 0-based industry index."""
        w = np.zeros(n_industries)
        w[industry] = 1.0
        return cls(w)


@dataclass(frozen=True)
class CorporateBond:
    """A defaultable bond. ``grade`` is 1-based with 1 the highest rating."""

    id: str
    price: float
    schedule: CashFlowSchedule
    attributes: BondAttributes
    grade: int
    portfolio: BusinessPortfolio
    issuer: str | None = None

    def __post_init__(self):
        if not self.price > 0:
            raise InvalidInputError(f"bond {self.id}: price must be positive")
        if int(self.grade) != self.grade or self.grade < 1:
            raise InvalidInputError(f"bond {self.id}: grade must be a positive integer")
        if day_key(self.schedule.maturity) != day_key(self.attributes.maturity):
            raise InvalidInputError(f"bond {self.id}: schedule does not end at the stated maturity")
        if self.issuer is None:
            object.__setattr__(self, "issuer", self.id)

    @classmethod
    def from_terms(cls, id, price, coupon_rate, maturity, grade, portfolio, frequency=2, issuer=None):
        return cls(
            id, price, build_schedule(coupon_rate, maturity, frequency),
            BondAttributes(coupon_rate, maturity), grade, portfolio, issuer,
        )
