"""Applications of a fitted credit model: curves, credit discounts, spreads and
portfolio loss decomposition.

For a bond ``k`` with payment dates ``s_1 < ... < s_n`` the per-date credit
adjustment is

    W(s_j) = (100 gamma - C(s_j)) p(s_j) - 100 gamma p(s_{j-1})

so that the expected flow is ``C + W`` and the credit discount is
``y = sum_j D(s_j) W(s_j)``. Default probabilities are clamped to [0, 1]
(with a logged warning) before use here; the raw fitted curves are available
through :func:`implied_tsdp_curve` and :func:`issuer_tsdp`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cb_credit import CreditFit, build_cb_regression, clamp_probability, tsdp_eval
from .errors import DomainError, InvalidInputError
from .gb_curve import GbCurveModel, theoretical_price
from .instruments import FACE, BusinessPortfolio, CorporateBond

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TsdpCurve:
    grade: int
    industry: int
    s: np.ndarray
    p: np.ndarray
    gamma: float


def implied_tsdp_curve(fit: CreditFit, grade: int, industry: int, s_grid: Sequence[float]) -> TsdpCurve:
    """Generic curve of a (1-based) grade and (1-based) industry, sampled on ``s_grid``."""
    s = np.asarray(s_grid, dtype=float).reshape(-1)
    if np.any(s < 0):
        raise InvalidInputError("curve times must be non-negative")
    if not 1 <= industry <= fit.industries:
        raise InvalidInputError(f"industry {industry} outside 1..{fit.industries}")
    one_hot = BusinessPortfolio.single(industry - 1, fit.industries)
    p = np.asarray(tsdp_eval(fit.tsdp, one_hot, grade, s), dtype=float).reshape(-1)
    return TsdpCurve(grade, industry, s, p, fit.recovery[grade])


def issuer_tsdp(fit: CreditFit, portfolio: BusinessPortfolio, grade: int, s):
    """Issuer curve: the grade's generic curves mixed by sales-ratio weights."""
    return tsdp_eval(fit.tsdp, portfolio, grade, s)


def _check_bond(fit: CreditFit, bond: CorporateBond):
    if not 1 <= bond.grade <= fit.grades:
        raise InvalidInputError(f"bond {bond.id}: grade {bond.grade} not covered by the fit ({fit.grades} grades)")
    if len(bond.portfolio) != fit.industries:
        raise InvalidInputError(f"bond {bond.id}: {len(bond.portfolio)} industries, fit has {fit.industries}")


def credit_adjustments(fit: CreditFit, bond: CorporateBond) -> np.ndarray:
    """``W(s_j)`` at each payment date of ``bond``."""
    _check_bond(fit, bond)
    sched = bond.schedule
    what = f"default probability of {bond.id}"
    p = clamp_probability(issuer_tsdp(fit, bond.portfolio, bond.grade, sched.times), what)
    p_prev = clamp_probability(issuer_tsdp(fit, bond.portfolio, bond.grade, sched.previous_times), what)
    g = fit.recovery[bond.grade]
    return (FACE * g - sched.amounts) * p - FACE * g * p_prev


def credit_discount(fit: CreditFit, bond: CorporateBond, gb: GbCurveModel) -> tuple[float, np.ndarray]:
    """``(y_hat, W)``: model credit discount of ``bond`` and its per-date terms."""
    W = credit_adjustments(fit, bond)
    D = np.asarray(gb.discount(bond.attributes, bond.schedule.times), dtype=float)
    return float(D @ W), W


def credit_discount_regression(fit: CreditFit, bond: CorporateBond, gb: GbCurveModel) -> float:
    """Same quantity through the regression form ``(u + gamma v)' beta`` (no clamping)."""
    _check_bond(fit, bond)
    row = build_cb_regression(bond, gb, fit.order)
    return float((row.u + fit.recovery[bond.grade] * row.v) @ fit.tsdp.beta(bond.grade))


def fair_spread(fit: CreditFit, bond: CorporateBond, gb: GbCurveModel) -> float:
    """``(P_hat - V_hat) / P_hat = -y_hat / P_hat``."""
    p_hat = theoretical_price(gb, bond.schedule, bond.attributes)
    if not p_hat > 0:
        raise DomainError(f"bond {bond.id}: theoretical price {p_hat:.6g} is not positive")
    y_hat, _ = credit_discount(fit, bond, gb)
    return -y_hat / p_hat


@dataclass(frozen=True)
class PortfolioPosition:
    bond: CorporateBond
    units: float

    def __post_init__(self):
        if not np.isfinite(self.units):
            raise InvalidInputError(f"position in {self.bond.id}: units must be finite")


@dataclass(frozen=True, eq=False)
class PortfolioDecomposition:
    """Per-date present values on the merged payment grid.

    ``A`` is the default-free inflow, ``B`` the expected loss (normally
    negative) and ``C = A + B``. The weights divide each by its total; they
    are ``None`` when that total is zero.
    """

    combined_times: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    a: np.ndarray | None
    b: np.ndarray | None
    c: np.ndarray | None
    durations: tuple
    flags: tuple = ()

    @property
    def totals(self) -> tuple[float, float, float]:
        return float(self.A.sum()), float(self.B.sum()), float(self.C.sum())


def _weights(x: np.ndarray) -> np.ndarray | None:
    total = float(x.sum())
    return x / total if total != 0.0 else None


def portfolio_decompose(positions: Sequence[PortfolioPosition], fit: CreditFit, gb: GbCurveModel,
                        *, allow_short: bool = False) -> PortfolioDecomposition:
    """Split a portfolio's value into default-free inflows and expected losses per date.

    The grid is the union of the positions' payment days. A bond contributes
    nothing at dates outside its own schedule; its recovery term at each of
    its dates uses its own previous payment date.
    """
    if not positions:
        raise InvalidInputError("portfolio has no positions")
    contributions = []
    for pos in positions:
        if pos.units < 0 and not allow_short:
            raise InvalidInputError(f"short position in {pos.bond.id} ({pos.units}) not permitted")
        _, W = credit_discount(fit, pos.bond, gb)
        sched = pos.bond.schedule
        D = np.asarray(gb.discount(pos.bond.attributes, sched.times), dtype=float)
        contributions.append((sched, pos.units * sched.amounts * D, pos.units * W * D))

    slot: dict[int, int] = {}
    rep: list[float] = []
    for key, t in sorted((k, t) for sched, _, _ in contributions for k, t in zip(sched.day_keys, sched.times)):
        if key not in slot:
            slot[key] = len(rep)
            rep.append(float(t))
    A = np.zeros(len(rep))
    B = np.zeros(len(rep))
    for sched, a_k, b_k in contributions:
        idx = [slot[k] for k in sched.day_keys]
        np.add.at(A, idx, a_k)
        np.add.at(B, idx, b_k)
    C = A + B
    times = np.array(rep)
    a, b, c = _weights(A), _weights(B), _weights(C)
    flags = []
    if b is not None and np.any(b < 0):
        flags.append("loss weights have mixed signs; some b_m are negative")
        log.info("portfolio loss weights have mixed signs")
    decomp = PortfolioDecomposition(times, A, B, C, a, b, c, (), tuple(flags))
    object.__setattr__(decomp, "durations", durations(decomp))
    return decomp


def durations(decomp: PortfolioDecomposition) -> tuple:
    """``(inflow, loss, actual)`` weighted-average times; ``None`` where the total is zero."""
    s = decomp.combined_times
    return tuple(None if w is None else float(w @ s) for w in (decomp.a, decomp.b, decomp.c))
