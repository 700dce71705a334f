import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import make_fit, make_gb, random_bond, small_alpha
from creditcurve.analytics import (
    PortfolioDecomposition,
    PortfolioPosition,
    credit_adjustments,
    credit_discount,
    credit_discount_regression,
    durations,
    fair_spread,
    implied_tsdp_curve,
    issuer_tsdp,
    portfolio_decompose,
)
from creditcurve.cb_credit import tsdp_eval
from creditcurve.errors import DomainError, InvalidInputError
from creditcurve.gb_curve import theoretical_price
from creditcurve.instruments import BusinessPortfolio, CorporateBond, day_key

GB = make_gb([[-0.03, -0.001, 0.0005], [0.0004, 0.00005, -0.00002]])


def cb(id, coupon, maturity, grade=1, weights=(1.0,)):
    return CorporateBond.from_terms(id, 100.0, coupon, maturity, grade, BusinessPortfolio(weights))


def decomposition(times, A, B):
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    C = A + B

    def w(x):
        return x / x.sum() if x.sum() != 0 else None

    return PortfolioDecomposition(np.asarray(times, dtype=float), A, B, C, w(A), w(B), w(C), ())


# ------------------------------------------------------------------ curves


def test_curve_zero_at_origin(rng):
    fit = make_fit(small_alpha(rng, 2, 2, 3), [0.3, 0.4])
    assert implied_tsdp_curve(fit, 2, 3, [0.0]).p.tolist() == [0.0]


def test_curve_linear_example():
    fit = make_fit([[[0.03]]], [0.4])
    curve = implied_tsdp_curve(fit, 1, 1, [2.0])
    assert curve.p[0] == pytest.approx(0.06, rel=1e-15)
    assert curve.gamma == 0.4


def test_curve_matches_one_hot_issuer(rng):
    fit = make_fit(small_alpha(rng, 3, 2, 3), [0.3, 0.4])
    s = np.linspace(0, 10, 41)
    curve = implied_tsdp_curve(fit, 1, 2, s)
    assert np.array_equal(curve.p, issuer_tsdp(fit, BusinessPortfolio.single(1, 3), 1, s))


def test_curve_rejects_bad_industry(rng):
    fit = make_fit(small_alpha(rng, 1, 1, 2), [0.3])
    with pytest.raises(InvalidInputError):
        implied_tsdp_curve(fit, 1, 3, [1.0])
    with pytest.raises(InvalidInputError):
        implied_tsdp_curve(fit, 1, 1, [-1.0])


def test_issuer_identical_industries():
    a = np.array([[[0.01, 0.01]], [[0.001, 0.001]]])
    fit = make_fit(a, [0.3])
    s = np.linspace(0, 10, 11)
    mixed = issuer_tsdp(fit, BusinessPortfolio([0.5, 0.5]), 1, s)
    assert np.allclose(mixed, implied_tsdp_curve(fit, 1, 1, s).p, rtol=1e-15)
    assert issuer_tsdp(fit, BusinessPortfolio([0.5, 0.5]), 1, 0.0) == 0.0


def test_issuer_weighted_average(rng):
    fit = make_fit(small_alpha(rng, 2, 1, 3), [0.3])
    w = np.array([0.2, 0.5, 0.3])
    s = 4.0
    want = sum(w[j] * implied_tsdp_curve(fit, 1, j + 1, [s]).p[0] for j in range(3))
    assert issuer_tsdp(fit, BusinessPortfolio(w), 1, s) == pytest.approx(want, rel=1e-14)


# ----------------------------------------------------------- credit discount


def test_zero_tsdp_zero_discount():
    fit = make_fit(np.zeros((2, 1, 1)), [0.4])
    y, W = credit_discount(fit, cb("A", 5.0, 4.0), GB)
    assert y == 0.0 and np.all(W == 0.0)


def test_no_recovery_adjustment(rng):
    fit = make_fit(small_alpha(rng, 2, 1, 1), [0.0])
    b = cb("A", 5.0, 4.0)
    p = tsdp_eval(fit.tsdp, b.portfolio, 1, b.schedule.times)
    assert np.allclose(credit_adjustments(fit, b), -b.schedule.amounts * p, rtol=1e-15)


def test_two_flow_credit_discount_by_hand():
    fit = make_fit([[[0.01]]], [0.4])
    b = cb("A", 6.0, 1.0)  # 3 at 0.5, 103 at 1.0
    d = GB.discount(b.attributes, np.array([0.5, 1.0]))
    W = [(40 - 3) * 0.005, (40 - 103) * 0.01 - 40 * 0.005]
    y, got = credit_discount(fit, b, GB)
    assert np.allclose(got, W, rtol=1e-14)
    assert y == pytest.approx(d[0] * W[0] + d[1] * W[1], rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000), gamma=st.floats(0, 1))
def test_credit_discount_two_paths_agree(seed, gamma):
    rng = np.random.default_rng(seed)
    q, J = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    fit = make_fit(small_alpha(rng, q, 1, J), [gamma])
    b = random_bond(rng, J=J)
    y, _ = credit_discount(fit, b, GB)
    assert y == pytest.approx(credit_discount_regression(fit, b, GB), rel=1e-10, abs=1e-12)


def test_fair_spread():
    b = cb("A", 5.0, 4.0)
    assert fair_spread(make_fit(np.zeros((1, 1, 1)), [0.4]), b, GB) == 0.0
    fit = make_fit([[[0.01]]], [0.4])
    y, _ = credit_discount(fit, b, GB)
    p_hat = theoretical_price(GB, b.schedule, b.attributes)
    assert fair_spread(fit, b, GB) == pytest.approx(-y / p_hat, rel=1e-15)
    assert fair_spread(fit, b, GB) > 0


def test_fair_spread_definition():
    # a constant curve D = 1 makes P_hat the raw flow sum; pick flows summing to 100
    gb = make_gb(np.zeros((1, 3)))
    b = cb("Z", 0.0, 0.5)
    fit = make_fit([[[0.04]]], [0.0])  # W = -100 * 0.02 = -2
    assert fair_spread(fit, b, gb) == pytest.approx(0.02, rel=1e-14)


def test_fair_spread_domain_error():
    with pytest.raises(DomainError):
        fair_spread(make_fit(np.zeros((1, 1, 1)), [0.4]), cb("A", 5.0, 4.0), make_gb([[-0.5, 0, 0]]))


def test_probabilities_clamped(caplog):
    fit = make_fit([[[0.5]]], [0.4])
    b = cb("A", 5.0, 4.0)
    with caplog.at_level(logging.WARNING):
        W = credit_adjustments(fit, b)
    assert "clamping" in caplog.text
    # p is 1 from s = 2 onwards, so later dates carry no further adjustment beyond the lost coupon
    assert W[-1] == pytest.approx(40 - b.schedule.amounts[-1] - 40, rel=1e-14)


def test_bond_outside_fit_rejected(rng):
    fit = make_fit(small_alpha(rng, 1, 1, 2), [0.3])
    with pytest.raises(InvalidInputError):
        credit_discount(fit, cb("A", 5.0, 4.0, grade=2, weights=(0.5, 0.5)), GB)
    with pytest.raises(InvalidInputError):
        credit_discount(fit, cb("A", 5.0, 4.0), GB)


# ---------------------------------------------------------------- portfolio


def test_single_position_zero_tsdp():
    fit = make_fit(np.zeros((1, 1, 1)), [0.4])
    b = cb("A", 5.0, 3.0)
    d = portfolio_decompose([PortfolioPosition(b, 2.0)], fit, GB)
    assert np.all(d.B == 0)
    assert np.allclose(d.A, 2.0 * b.schedule.amounts * GB.discount(b.attributes, b.schedule.times), rtol=1e-15)
    assert d.b is None and d.durations[1] is None
    assert np.array_equal(d.combined_times, b.schedule.times)


def test_homogeneity(rng):
    fit = make_fit(small_alpha(rng, 2, 2, 2), [0.3, 0.4])
    bonds = [random_bond(rng, grade=1 + k % 2, id=f"B{k}") for k in range(4)]
    units = rng.uniform(1, 5, size=4)
    one = portfolio_decompose([PortfolioPosition(b, u) for b, u in zip(bonds, units)], fit, GB)
    two = portfolio_decompose([PortfolioPosition(b, 2 * u) for b, u in zip(bonds, units)], fit, GB)
    for x, y in ((one.A, two.A), (one.B, two.B), (one.C, two.C)):
        assert np.allclose(2 * x, y, rtol=1e-14)
    for x, y in ((one.a, two.a), (one.b, two.b), (one.c, two.c)):
        assert np.allclose(x, y, rtol=1e-12)
    assert np.allclose(one.durations, two.durations, rtol=1e-12)


def _per_time(decomp):
    return {day_key(t): (a, b) for t, a, b in zip(decomp.combined_times, decomp.A, decomp.B)}


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_portfolio_additivity_and_value(seed):
    rng = np.random.default_rng(seed)
    q, I, J = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
    fit = make_fit(small_alpha(rng, q, I, J), rng.uniform(0, 1, size=I))
    n = int(rng.integers(1, 6))
    positions = [PortfolioPosition(random_bond(rng, grade=int(rng.integers(1, I + 1)), J=J, id=f"B{k}"),
                                   float(rng.uniform(0.1, 10))) for k in range(n)]
    whole = portfolio_decompose(positions, fit, GB)
    # value identity: sum of C equals the sum of units times model CB prices
    value = sum(p.units * (theoretical_price(GB, p.bond.schedule, p.bond.attributes)
                           + credit_discount(fit, p.bond, GB)[0]) for p in positions)
    assert whole.C.sum() == pytest.approx(value, rel=1e-8)
    assert np.allclose(whole.C, whole.A + whole.B, rtol=0, atol=0)
    # additivity: per-time sum of the single-bond decompositions
    expect: dict[int, list[float]] = {}
    for p in positions:
        for key, (a, b) in _per_time(portfolio_decompose([p], fit, GB)).items():
            acc = expect.setdefault(key, [0.0, 0.0])
            acc[0] += a
            acc[1] += b
    got = _per_time(whole)
    assert set(got) == set(expect)
    for key, (a, b) in got.items():
        assert a == pytest.approx(expect[key][0], rel=1e-8, abs=1e-12)
        assert b == pytest.approx(expect[key][1], rel=1e-8, abs=1e-12)
    # losses are non-positive when every adjustment is
    if all(np.all(credit_adjustments(fit, p.bond) <= 0) for p in positions):
        assert np.all(whole.B <= 1e-12)
    # duration bounds
    lo, hi = whole.combined_times.min(), whole.combined_times.max()
    for dur, x in zip(whole.durations, (whole.A, whole.B, whole.C)):
        if dur is not None and (np.all(x >= 0) or np.all(x <= 0)):
            assert lo - 1e-12 <= dur <= hi + 1e-12


def test_zero_tsdp_issuer_only_contributes_inflow(rng):
    fit = make_fit(np.concatenate([np.zeros((2, 1, 2)), small_alpha(rng, 2, 1, 2)], axis=1), [0.3, 0.4])
    safe = random_bond(rng, grade=1, id="S")
    risky = random_bond(rng, grade=2, id="R")
    both = portfolio_decompose([PortfolioPosition(safe, 1.0), PortfolioPosition(risky, 1.0)], fit, GB)
    only_risky = portfolio_decompose([PortfolioPosition(risky, 1.0)], fit, GB)
    assert both.B.sum() == pytest.approx(only_risky.B.sum(), rel=1e-14)
    assert np.all(portfolio_decompose([PortfolioPosition(safe, 1.0)], fit, GB).B == 0)


def test_shared_dates_merge():
    fit = make_fit([[[0.01]]], [0.4])
    a, b = cb("A", 4.0, 2.0), cb("B", 6.0, 1.0)
    d = portfolio_decompose([PortfolioPosition(a, 1.0), PortfolioPosition(b, 1.0)], fit, GB)
    assert d.combined_times.tolist() == [0.5, 1.0, 1.5, 2.0]


def test_short_positions_need_permission(rng):
    fit = make_fit(small_alpha(rng, 1, 1, 2), [0.3])
    pos = [PortfolioPosition(random_bond(rng), -1.0), PortfolioPosition(random_bond(rng, id="C"), 3.0)]
    with pytest.raises(InvalidInputError):
        portfolio_decompose(pos, fit, GB)
    assert portfolio_decompose(pos, fit, GB, allow_short=True).C.size > 0
    with pytest.raises(InvalidInputError):
        PortfolioPosition(random_bond(rng), float("nan"))
    with pytest.raises(InvalidInputError):
        portfolio_decompose([], fit, GB)


def test_mixed_sign_losses_flagged():
    fit = make_fit([[[0.01]]], [0.4])
    a, b = cb("A", 4.0, 2.0), cb("B", 6.0, 1.0)
    d = portfolio_decompose([PortfolioPosition(a, 1.0), PortfolioPosition(b, -3.0)], fit, GB, allow_short=True)
    assert d.flags and np.any(d.b < 0)


# ----------------------------------------------------------------- durations


def test_duration_single_time():
    d = decomposition([2.5], [90.0], [-3.0])
    assert durations(d) == (2.5, 2.5, 2.5)


def test_duration_equal_values():
    d = decomposition([1.0, 3.0], [50.0, 50.0], [-1.0, -1.0])
    assert durations(d) == (2.0, 2.0, 2.0)


def test_duration_hand_weighted():
    d = decomposition([1.0, 2.0, 4.0], [10.0, 20.0, 70.0], [-1.0, -1.0, -2.0])
    inflow, loss, actual = durations(d)
    assert inflow == pytest.approx((10 + 40 + 280) / 100, rel=1e-15)
    assert loss == pytest.approx((1 + 2 + 8) / 4, rel=1e-15)
    assert actual == pytest.approx((9 + 38 + 272) / 96, rel=1e-15)


def test_duration_undefined_for_zero_total():
    d = decomposition([1.0, 2.0], [10.0, 20.0], [0.0, 0.0])
    assert durations(d)[1] is None
