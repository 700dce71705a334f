"""Default-probability term structures and recovery rates from corporate bonds.

Every (rating grade ``i``, industry ``j``) pair has a generic default
probability curve ``p(s; i, j) = sum_{h=1..q} alpha[h, i, j] * s^h``. An issuer
mixes the curves of its grade with its sales-ratio weights. Expected cash flows
are

    Cbar(s_j) = C(s_j) (1 - p(s_j)) + 100 gamma_i (p(s_j) - p(s_{j-1}))

which are linear in the stacked coefficients ``beta(i)``. Discounting them with
the fitted government curve gives, per bond, the regression

    y_k = V_k - P_k = (u_k + gamma_i v_k)' beta(i) + eps_k

whose error covariance depends on ``beta`` itself through ``Cbar``. Each grade
is fitted by grid search over ``(gamma, rho_ii, xi_ii, theta)`` with an
iterated GLS inner loop; grades are then combined with cross-grade correlation
parameters, and the polynomial order is chosen by BIC.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernel
from .errors import InvalidInputError, UnderIdentifiedError
from .gb_curve import GbCurveModel
from .gls import (
    DEFAULT_GRID,
    GlsProblem,
    GlsResult,
    GridSpec,
    default_workers,
    glse,
    glse_batch,
    grid_minimize,
    grid_objective,
    profiled_nll,
)
from .instruments import FACE, BusinessPortfolio, CorporateBond

log = logging.getLogger(__name__)

GRADE_GRID_NAMES = ("gamma", "rho", "xi", "theta")
DEFAULT_MAX_ITER = 5
DEFAULT_TOL = 1e-6
DEFAULT_Q_RANGE = (2, 3, 4, 5, 6)


# --------------------------------------------------------------------------- types


@dataclass(frozen=True, eq=False)
class TsdpCoefficients:
    """``alpha[h - 1, i - 1, j]`` is the coefficient of ``s^h`` for grade ``i``, industry ``j``."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float)
        if a.ndim != 3 or min(a.shape) < 1:
            raise InvalidInputError(f"alpha must have shape (q, I, J), got {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def order(self) -> int:
        return self.alpha.shape[0]

    @property
    def grades(self) -> int:
        return self.alpha.shape[1]

    @property
    def industries(self) -> int:
        return self.alpha.shape[2]

    def beta(self, grade: int) -> np.ndarray:
        """Stacked ``(alpha_1^{i.}, ..., alpha_q^{i.})`` for a 1-based grade."""
        return self.alpha[:, grade - 1, :].reshape(-1).copy()

    @classmethod
    def from_betas(cls, betas: Sequence[np.ndarray], industries: int) -> "TsdpCoefficients":
        cols = [np.asarray(b, dtype=float).reshape(-1, industries) for b in betas]
        return cls(np.stack(cols, axis=1))

    @classmethod
    def zeros(cls, order: int, grades: int, industries: int) -> "TsdpCoefficients":
        return cls(np.zeros((order, grades, industries)))


@dataclass(frozen=True, eq=False)
class RecoveryRates:
    gamma: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float).reshape(-1)
        if np.any(~np.isfinite(g)) or np.any(g < 0) or np.any(g > 1):
            raise InvalidInputError("recovery rates must lie in [0, 1]")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    def __getitem__(self, grade: int) -> float:
        """Recovery rate of a 1-based grade."""
        return float(self.gamma[grade - 1])


@dataclass(frozen=True, eq=False)
class CbCovarianceParams:
    """Scale, flow-time decay and per-grade-pair correlation/maturity decay."""

    sigma2: float
    theta: float
    rho: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        rho = np.atleast_2d(np.array(self.rho, dtype=float))
        xi = np.atleast_2d(np.array(self.xi, dtype=float))
        if rho.shape != xi.shape or rho.shape[0] != rho.shape[1]:
            raise InvalidInputError("rho and xi must be square matrices of equal size")
        for name, m in (("rho", rho), ("xi", xi)):
            if not np.allclose(m, m.T, rtol=0, atol=0):
                raise InvalidInputError(f"{name} must be symmetric")
            if np.any(m < 0) or np.any(m > 1):
                raise InvalidInputError(f"{name} entries must lie in [0, 1]")
        if not 0 <= self.theta <= 1:
            raise InvalidInputError("theta must lie in [0, 1]")
        if not self.sigma2 > 0:
            raise InvalidInputError("sigma2 must be positive")
        rho.setflags(write=False)
        xi.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "xi", xi)


@dataclass(frozen=True, eq=False)
class GradeEstimate:
    """Per-grade result of the grid / iterated-GLS search."""

    grade: int
    order: int
    beta: np.ndarray
    gamma: float
    rho: float
    xi: float
    theta: float
    objective: float
    gls: GlsResult
    iterations: int
    bond_ids: tuple

    @property
    def residuals(self) -> np.ndarray:
        return self.gls.residuals

    @property
    def sigma2(self) -> float:
        return self.gls.sigma2


@dataclass(frozen=True, eq=False)
class CreditFit:
    tsdp: TsdpCoefficients
    recovery: RecoveryRates
    covariance: CbCovarianceParams
    residuals: dict
    residual_std: dict
    objective: float
    criterion: float
    coef_covariance: np.ndarray
    grade_estimates: tuple = ()
    bond_ids: dict = field(default_factory=dict)
    selection_trace: tuple = ()
    flags: tuple = ()
    maturity_span: dict = field(default_factory=dict)

    @property
    def order(self) -> int:
        return self.tsdp.order

    @property
    def grades(self) -> int:
        return self.tsdp.grades

    @property
    def industries(self) -> int:
        return self.tsdp.industries

    def std_errors(self, grade: int) -> np.ndarray:
        n = self.order * self.industries
        d = np.sqrt(np.diag(self.coef_covariance))
        return d[(grade - 1) * n: grade * n]


# ---------------------------------------------------------------- curve algebra


def tsdp_basis(weights, s, order: int) -> np.ndarray:
    """``w(s) = (s w', s^2 w', ..., s^q w')`` with shape ``s.shape + (J q,)``."""
    w = np.asarray(weights, dtype=float)
    s_arr = np.asarray(s, dtype=float)
    powers = s_arr[..., None] ** np.arange(1, order + 1)
    return (powers[..., :, None] * w).reshape(s_arr.shape + (order * w.size,))


def tsdp_eval(coeffs: TsdpCoefficients, portfolio: BusinessPortfolio, grade: int, s):
    """Issuer default probability by time ``s``; exactly 0 at ``s = 0``.

    Values outside [0, 1] are returned unchanged; callers that need a proper
    probability clamp them (see :func:`clamp_probability`).
    """
    _check_grade(coeffs, grade)
    if len(portfolio) != coeffs.industries:
        raise InvalidInputError(f"portfolio has {len(portfolio)} industries, curve has {coeffs.industries}")
    out = tsdp_basis(portfolio.weights, s, coeffs.order) @ coeffs.beta(grade)
    return float(out) if np.ndim(s) == 0 else out


def clamp_probability(p, what: str = "default probability"):
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 0) or np.any(p_arr > 1):
        log.warning("%s outside [0, 1] (range %.4g..%.4g); clamping", what, p_arr.min(), p_arr.max())
        p_arr = np.clip(p_arr, 0.0, 1.0)
    return float(p_arr) if np.ndim(p) == 0 else p_arr


def _check_grade(coeffs: TsdpCoefficients, grade: int):
    if not 1 <= grade <= coeffs.grades:
        raise InvalidInputError(f"grade {grade} outside 1..{coeffs.grades}")


def expected_cashflow(bond: CorporateBond, coeffs: TsdpCoefficients, recovery: RecoveryRates) -> np.ndarray:
    """Investors' expected cash flow at each payment date of ``bond``."""
    sched = bond.schedule
    p = tsdp_eval(coeffs, bond.portfolio, bond.grade, sched.times)
    p_prev = tsdp_eval(coeffs, bond.portfolio, bond.grade, sched.previous_times)
    return sched.amounts * (1.0 - p) + FACE * recovery[bond.grade] * (p - p_prev)


@dataclass(frozen=True, eq=False)
class CbRegressionRow:
    """One bond's credit-discount regression terms."""

    y: float
    u: np.ndarray
    v: np.ndarray
    theoretical_price: float
    discount: np.ndarray
    z_coupon: np.ndarray
    z_recovery: np.ndarray


def build_cb_regression(bond: CorporateBond, gb: GbCurveModel, order: int) -> CbRegressionRow:
    """Credit discount ``y = V - P_hat`` and the regressors ``u``, ``v``.

    ``z_coupon`` (``-C w(s_j)``) and ``z_recovery`` (``100 (w(s_j) - w(s_{j-1}))``)
    are the per-flow pieces: ``Cbar = C + (z_coupon + gamma z_recovery) beta``.
    """
    sched = bond.schedule
    D = np.asarray(gb.discount(bond.attributes, sched.times), dtype=float)
    w_now = tsdp_basis(bond.portfolio.weights, sched.times, order)
    w_prev = tsdp_basis(bond.portfolio.weights, sched.previous_times, order)
    z_coupon = -sched.amounts[:, None] * w_now
    z_recovery = FACE * (w_now - w_prev)
    p_hat = float(sched.amounts @ D)
    return CbRegressionRow(
        y=bond.price - p_hat,
        u=D @ z_coupon,
        v=D @ z_recovery,
        theoretical_price=p_hat,
        discount=D,
        z_coupon=z_coupon,
        z_recovery=z_recovery,
    )


def _loadings(rows: Sequence[CbRegressionRow], bonds: Sequence[CorporateBond]) -> list[np.ndarray]:
    """Per-bond ``[C, z_coupon, z_recovery]`` so that ``Cbar = Z (1, beta, gamma beta)``."""
    return [np.column_stack([b.schedule.amounts, r.z_coupon, r.z_recovery]) for r, b in zip(rows, bonds)]


def _loading_vector(beta, gamma) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    return np.concatenate(([1.0], beta, gamma * beta))


def _rho_xi_matrices(grades: np.ndarray, rho: np.ndarray, xi: np.ndarray):
    g = np.asarray(grades) - 1
    return rho[np.ix_(g, g)], xi[np.ix_(g, g)]


def cb_covariance(bonds: Sequence[CorporateBond], coeffs: TsdpCoefficients, recovery: RecoveryRates,
                  params: CbCovarianceParams) -> np.ndarray:
    """``sigma2 * lambda_kl * phi_kl`` with ``phi`` built from expected cash flows."""
    flows = [expected_cashflow(b, coeffs, recovery) for b in bonds]
    phi = kernel.flow_covariance([b.schedule.times for b in bonds], flows, params.theta)
    grades = np.array([b.grade for b in bonds])
    rho, xi = _rho_xi_matrices(grades, params.rho, params.xi)
    lam = kernel.correlation_factor([b.schedule.maturity for b in bonds], rho, xi)
    return params.sigma2 * lam * phi


# ------------------------------------------------------------------ estimation


def _industries(bonds: Sequence[CorporateBond]) -> int:
    sizes = {len(b.portfolio) for b in bonds}
    if len(sizes) != 1:
        raise InvalidInputError(f"bonds disagree on the number of industries: {sorted(sizes)}")
    return sizes.pop()


class _GradeProblem:
    """Cached pieces of one grade's regression for fast grid evaluation."""

    def __init__(self, bonds: Sequence[CorporateBond], gb: GbCurveModel, order: int):
        self.bonds = list(bonds)
        self.order = order
        self.rows = [build_cb_regression(b, gb, order) for b in self.bonds]
        self.y = np.array([r.y for r in self.rows])
        self.U = np.array([r.u for r in self.rows])
        self.V = np.array([r.v for r in self.rows])
        self.times = [b.schedule.times for b in self.bonds]
        self.mats = np.array([b.schedule.maturity for b in self.bonds])
        self.Z = _loadings(self.rows, self.bonds)
        self._gram: dict[float, np.ndarray] = {}

    def gram(self, theta: float) -> np.ndarray:
        if theta not in self._gram:
            self._gram[theta] = kernel.flow_gram(self.times, self.Z, theta)
        return self._gram[theta]

    def design(self, gamma: float) -> np.ndarray:
        return self.U + gamma * self.V

    def phi(self, theta: float, E: np.ndarray) -> np.ndarray:
        """Stacked ``phi`` for loading vectors ``E`` of shape ``(n, r)``."""
        H = self.gram(theta)
        K, r = H.shape[0], H.shape[1]
        T = (E @ H.transpose(1, 0, 2, 3).reshape(r, -1)).reshape(E.shape[0], K, K, r)
        return np.einsum("nklc,nc->nkl", T, E)


def _iterate(problem: _GradeProblem, gamma: float, theta: float, lam: np.ndarray,
             max_iter: int, tol: float):
    """Iterated GLS for a batch of correlation factors sharing ``(gamma, theta)``.

    Starts with ``beta = 0`` inside the covariance, then alternates GLS and
    covariance updates. A point stops once the largest coefficient change is
    below ``tol`` relative to the largest coefficient, or after ``max_iter``
    GLS solves. Returns ``(beta, psi, log_det, ok, n_iter, Phi_used)``.
    """
    n = lam.shape[0]
    X = problem.design(gamma)
    P = X.shape[1]
    beta = np.zeros((n, P))
    psi = np.full(n, np.inf)
    logdet = np.full(n, np.nan)
    ok = np.ones(n, dtype=bool)
    iters = np.zeros(n, dtype=int)
    phi_used = np.zeros_like(lam)
    active = np.arange(n)
    for it in range(max_iter):
        if active.size == 0:
            break
        E = np.array([_loading_vector(b, gamma) for b in beta[active]])
        covs = lam[active] * problem.phi(theta, E)
        b_new, ps, ld, good = glse_batch(X, problem.y, covs)
        bad = active[~good]
        ok[bad] = False
        psi[bad] = np.inf
        act = active[good]
        b_new, ps, ld, covs = b_new[good], ps[good], ld[good], covs[good]
        change = np.max(np.abs(b_new - beta[act]), axis=1)
        scale = np.maximum(np.max(np.abs(b_new), axis=1), 1e-300)
        beta[act], psi[act], logdet[act] = b_new, ps, ld
        phi_used[act] = covs
        iters[act] = it + 1
        done = (change <= tol * scale) if it > 0 else np.zeros(act.size, dtype=bool)
        active = act[~done]
    return beta, psi, logdet, ok, iters, phi_used


def check_identified(n_bonds: int, industries: int, order: int, grade: int):
    need = 2 * industries * order
    if n_bonds < need:
        raise UnderIdentifiedError(f"grade {grade} with J={industries}, q={order}", n_bonds, need)


def fit_cb_grade(
    bonds: Sequence[CorporateBond],
    gb: GbCurveModel,
    order: int = 2,
    grid: GridSpec | None = None,
    *,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    objective: str = "nll",
) -> GradeEstimate:
    """Estimate ``beta(i)``, ``gamma(i)``, ``rho_ii``, ``xi_ii`` and ``theta`` for one grade.

    ``grid`` needs axes ``gamma``, ``rho``, ``xi`` and ``theta`` (defaults:
    0.0, 0.1, ..., 0.9 each). Points where the covariance is not positive
    definite score ``+inf``; reaching ``max_iter`` is not an error.
    """
    bonds = list(bonds)
    if not bonds:
        raise UnderIdentifiedError("empty grade", 0, 1)
    grades = {b.grade for b in bonds}
    if len(grades) != 1:
        raise InvalidInputError(f"fit_cb_grade needs bonds of one grade, got {sorted(grades)}")
    grade = grades.pop()
    J = _industries(bonds)
    check_identified(len(bonds), J, order, grade)
    grid = (grid or GridSpec.default(GRADE_GRID_NAMES)).restrict(GRADE_GRID_NAMES)
    prob = _GradeProblem(bonds, gb, order)
    K = len(bonds)

    def lam_stack(pts):
        return np.stack([kernel.correlation_factor(prob.mats, r, x) for r, x in pts])

    def batch(points):
        out = np.full(len(points), np.inf)
        keys = points[:, [0, 3]]
        for gamma, theta in np.unique(keys, axis=0):
            sel = np.flatnonzero((keys[:, 0] == gamma) & (keys[:, 1] == theta))
            _, psi, logdet, ok, _, _ = _iterate(prob, gamma, theta, lam_stack(points[sel][:, 1:3]), max_iter, tol)
            vals = grid_objective(psi, logdet, K, objective)
            out[sel] = np.where(ok, vals, np.inf)
        return out

    best = grid_minimize(batch, grid, vectorized=True)
    gamma, rho, xi, theta = best.best_tuple
    beta, _, _, _, iters, phi_used = _iterate(prob, gamma, theta, lam_stack([(rho, xi)]), max_iter, tol)
    res = glse(GlsProblem(prob.design(gamma), prob.y, phi_used[0]))
    return GradeEstimate(
        grade=grade, order=order, beta=res.coefficients, gamma=gamma, rho=rho, xi=xi, theta=theta,
        objective=float(best.best_value), gls=res, iterations=int(iters[0]),
        bond_ids=tuple(b.id for b in bonds),
    )


def _group_by_grade(bonds: Sequence[CorporateBond]) -> dict[int, list[CorporateBond]]:
    groups: dict[int, list[CorporateBond]] = {}
    for b in bonds:
        groups.setdefault(b.grade, []).append(b)
    n_grades = max(groups)
    for i in range(1, n_grades + 1):
        if i not in groups:
            raise UnderIdentifiedError(f"grade {i} has no bonds", 0, 1)
    return dict(sorted(groups.items()))


def fit_grades(bonds: Sequence[CorporateBond], gb: GbCurveModel, order: int = 2, grid: GridSpec | None = None,
               **kwargs) -> list[GradeEstimate]:
    """Run :func:`fit_cb_grade` for every grade; grades are independent so they run concurrently."""
    groups = _group_by_grade(bonds)
    workers = min(default_workers(), len(groups))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(fit_cb_grade, g, gb, order, grid, **kwargs) for g in groups.values()]
            return [f.result() for f in futs]
    return [fit_cb_grade(g, gb, order, grid, **kwargs) for g in groups.values()]


def _stack_design(problems: Sequence[_GradeProblem], gamma) -> tuple[np.ndarray, np.ndarray]:
    Jq = problems[0].U.shape[1]
    X = np.zeros((sum(len(p.bonds) for p in problems), len(problems) * Jq))
    row = 0
    for n, (prob, g) in enumerate(zip(problems, gamma)):
        k = len(prob.bonds)
        X[row:row + k, n * Jq:(n + 1) * Jq] = prob.design(g)
        row += k
    return X, np.concatenate([p.y for p in problems])


def build_full_regression(bonds: Sequence[CorporateBond], gb: GbCurveModel, order: int,
                          recovery: RecoveryRates) -> tuple[np.ndarray, np.ndarray, list[CorporateBond]]:
    """Block-diagonal design of all grades at the given recovery rates.

    Rows follow the returned bond order (grade by grade); the columns of
    grade ``i`` are block ``i`` of width ``J q``.
    """
    groups = _group_by_grade(bonds)
    probs = [_GradeProblem(g, gb, order) for g in groups.values()]
    X, y = _stack_design(probs, [recovery[i] for i in groups])
    return X, y, [b for g in groups.values() for b in g]


def _pair_names(i: int, j: int) -> tuple[str, str]:
    return f"rho_{i}{j}", f"xi_{i}{j}"


def fit_cb_full(
    bonds: Sequence[CorporateBond],
    estimates: Sequence[GradeEstimate],
    gb: GbCurveModel,
    grid: GridSpec | None = None,
    *,
    objective: str = "nll",
    passes: int = 2,
) -> CreditFit:
    """Combine per-grade estimates into one block-diagonal GLS with cross-grade correlation.

    Within-grade ``(gamma, rho_ii, xi_ii)`` stay at their per-grade values.
    Cross-grade ``(rho_ij, xi_ij)`` are grid-searched (default 0.0..0.9);
    the shared ``theta`` is chosen among the per-grade estimates. The
    coefficient blocks inside the covariance start at the per-grade values
    and are replaced by the combined estimate for the second pass. With more
    than two grades the pairs are searched one at a time.
    """
    bonds = list(bonds)
    groups = _group_by_grade(bonds)
    est = {e.grade: e for e in estimates}
    missing = [i for i in groups if i not in est]
    if missing:
        raise InvalidInputError(f"no per-grade estimate for grades {missing}")
    I = len(groups)
    order = est[1].order
    J = _industries(bonds)
    Jq = J * order
    grade_list = list(groups)
    gamma = np.array([est[i].gamma for i in grade_list])
    rho = np.diag([est[i].rho for i in grade_list]).astype(float)
    xi = np.diag([est[i].xi for i in grade_list]).astype(float)

    if I == 1:
        e = est[1]
        return _assemble(groups, [e.beta], gamma, e.theta, rho, xi, e.gls, e.objective, [e], objective)

    ordered = [b for i in grade_list for b in groups[i]]
    probs = {i: _GradeProblem(groups[i], gb, order) for i in grade_list}
    X, y = _stack_design([probs[i] for i in grade_list], gamma)
    grade_of = np.array([b.grade for b in ordered])
    mats = np.array([b.schedule.maturity for b in ordered])
    Z = [z for i in grade_list for z in probs[i].Z]
    times = [b.schedule.times for b in ordered]
    theta_choices = tuple(sorted({est[i].theta for i in grade_list}))
    grams: dict[float, np.ndarray] = {}
    K = len(ordered)

    def gram(theta):
        if theta not in grams:
            grams[theta] = kernel.flow_gram(times, Z, theta)
        return grams[theta]

    def phi(theta, betas):
        E = np.array([_loading_vector(betas[g - 1], gamma[g - 1]) for g in grade_of])
        H = gram(theta)
        return np.einsum("ka,kalc,lc->kl", E, H, E)

    betas = [est[i].beta for i in grade_list]
    pairs = [(i, j) for i in range(1, I + 1) for j in range(i + 1, I + 1)]
    base = grid or GridSpec({})
    result = None
    theta = theta_choices[0]
    best_value = math.nan
    for _ in range(passes):
        phi_cache: dict[float, np.ndarray] = {}

        def phi_at(t, _betas=tuple(map(tuple, betas))):
            if t not in phi_cache:
                phi_cache[t] = phi(t, [np.array(b) for b in _betas])
            return phi_cache[t]

        for (i, j) in pairs:
            rn, xn = _pair_names(i, j)
            axes = {
                "theta": theta_choices,
                rn: base.values.get(rn, base.values.get("rho_cross", DEFAULT_GRID)),
                xn: base.values.get(xn, base.values.get("xi_cross", DEFAULT_GRID)),
            }
            spec = GridSpec(axes, base.refine_depth, base.shrink)

            def batch(points, i=i, j=j):
                out = np.full(len(points), np.inf)
                for t in np.unique(points[:, 0]):
                    sel = np.flatnonzero(points[:, 0] == t)
                    covs = []
                    for _, r_ij, x_ij in points[sel]:
                        rr, xx = rho.copy(), xi.copy()
                        rr[i - 1, j - 1] = rr[j - 1, i - 1] = r_ij
                        xx[i - 1, j - 1] = xx[j - 1, i - 1] = x_ij
                        rm, xm = _rho_xi_matrices(grade_of, rr, xx)
                        covs.append(kernel.correlation_factor(mats, rm, xm))
                    covs = np.stack(covs) * phi_at(t)
                    _, psi, logdet, ok = glse_batch(X, y, covs)
                    out[sel] = np.where(ok, grid_objective(psi, logdet, K, objective), np.inf)
                return out

            best = grid_minimize(batch, spec, vectorized=True)
            theta, r_ij, x_ij = best.best_tuple
            rho[i - 1, j - 1] = rho[j - 1, i - 1] = r_ij
            xi[i - 1, j - 1] = xi[j - 1, i - 1] = x_ij
            best_value = best.best_value

        rm, xm = _rho_xi_matrices(grade_of, rho, xi)
        cov = kernel.correlation_factor(mats, rm, xm) * phi_at(theta)
        result = glse(GlsProblem(X, y, cov))
        betas = [result.coefficients[n * Jq:(n + 1) * Jq] for n in range(I)]

    return _assemble(groups, betas, gamma, theta, rho, xi, result, best_value, estimates, objective)


def _curve_flags(tsdp: TsdpCoefficients, spans: dict) -> tuple:
    flags = []
    for i, span in spans.items():
        s = np.linspace(0.0, span, 201)
        for j in range(tsdp.industries):
            p = tsdp_basis(np.eye(tsdp.industries)[j], s, tsdp.order) @ tsdp.beta(i)
            if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
                flags.append(f"grade {i} industry {j + 1}: curve leaves [0, 1] on [0, {span:.3g}]")
            if np.any(np.diff(p) < -1e-12):
                flags.append(f"grade {i} industry {j + 1}: curve decreases on [0, {span:.3g}]")
    for f in flags:
        log.warning("TSDP diagnostic: %s", f)
    return tuple(flags)


def _assemble(groups, betas, gamma, theta, rho, xi, res: GlsResult, objective_value, estimates, mode) -> CreditFit:
    J = len(next(iter(groups.values()))[0].portfolio)
    tsdp = TsdpCoefficients.from_betas(betas, J)
    K = res.residuals.size
    P = res.coefficients.size
    nll = float(profiled_nll(res.objective, res.log_det, K))
    n_params = P + len(groups)
    residuals, stds, ids, spans = {}, {}, {}, {}
    start = 0
    for i, members in groups.items():
        k = len(members)
        r = res.residuals[start:start + k]
        residuals[i] = r
        stds[i] = float(np.sqrt(r @ r / max(k - tsdp.order * J, 1)))
        ids[i] = tuple(b.id for b in members)
        spans[i] = max(b.schedule.maturity for b in members)
        start += k
    sigma2 = res.sigma2 if res.sigma2 > 0 else np.finfo(float).tiny
    return CreditFit(
        tsdp=tsdp,
        recovery=RecoveryRates(gamma),
        covariance=CbCovarianceParams(sigma2, theta, rho, xi),
        residuals=residuals,
        residual_std=stds,
        objective=float(objective_value),
        criterion=nll + n_params * math.log(K),
        coef_covariance=res.coef_covariance,
        grade_estimates=tuple(estimates),
        bond_ids=ids,
        flags=_curve_flags(tsdp, spans),
        maturity_span=spans,
    )


def _warn_span(bonds: Sequence[CorporateBond], gb: GbCurveModel):
    late = [b.id for b in bonds if b.schedule.maturity > gb.max_maturity + 1e-12]
    if late:
        log.warning("%d bond(s) mature after the government curve's fitted span of %.4g years: %s",
                    len(late), gb.max_maturity, ", ".join(late))


def fit_credit(bonds: Sequence[CorporateBond], gb: GbCurveModel, order: int = 2,
               grid: GridSpec | None = None, cross_grid: GridSpec | None = None, **kwargs) -> CreditFit:
    """Per-grade fits followed by the combined fit, at a fixed polynomial order."""
    if kwargs.pop("_warn", True):
        _warn_span(bonds, gb)
    objective = kwargs.get("objective", "nll")
    estimates = fit_grades(bonds, gb, order, grid, **kwargs)
    return fit_cb_full(bonds, estimates, gb, cross_grid, objective=objective)


def select_order(
    bonds: Sequence[CorporateBond],
    gb: GbCurveModel,
    q_range: Sequence[int] = DEFAULT_Q_RANGE,
    grid: GridSpec | None = None,
    cross_grid: GridSpec | None = None,
    **kwargs,
) -> CreditFit:
    """Fit every feasible order in ``q_range`` and keep the lowest BIC.

    An order is feasible when every grade has at least ``2 J q`` bonds. The
    returned fit carries ``selection_trace``: one ``(q, bic, nll)`` entry per
    feasible order.
    """
    groups = _group_by_grade(bonds)
    J = _industries(bonds)
    smallest = min(len(g) for g in groups.values())
    feasible = [q for q in sorted(set(q_range)) if q >= 1 and smallest >= 2 * J * q]
    if not feasible:
        raise UnderIdentifiedError(f"every order in {sorted(set(q_range))} (J={J})", smallest,
                                   2 * J * min(q_range))
    _warn_span(bonds, gb)
    fits = []
    for q in feasible:
        fit = fit_credit(bonds, gb, q, grid, cross_grid, _warn=False, **kwargs)
        K = sum(len(g) for g in groups.values())
        nll = fit.criterion - (q * J * len(groups) + len(groups)) * math.log(K)
        fits.append((fit.criterion, q, nll, fit))
        log.info("order q=%d: BIC %.6g", q, fit.criterion)
    trace = tuple((q, crit, nll) for crit, q, nll, _ in fits)
    crit, q, _, fit = min(fits, key=lambda t: (t[0], t[1]))
    return _with_trace(fit, trace)


def _with_trace(fit: CreditFit, trace) -> CreditFit:
    return replace(fit, selection_trace=trace)
