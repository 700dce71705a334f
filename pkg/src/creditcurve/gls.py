"""Generalized least squares and grid minimization.

The GLS estimator solves ``min_b (y - X b)' Phi^{-1} (y - X b)`` by whitening
with the Cholesky factor of ``Phi`` and running a QR least-squares solve on the
whitened system; ``Phi`` is never inverted explicitly.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import linalg

from .errors import InvalidInputError, NoFeasiblePointError, SingularSystemError

DEFAULT_GRID = tuple(round(0.1 * k, 1) for k in range(10))
OBJECTIVES = ("nll", "psi")


def default_workers() -> int:
    """Worker cap from ``CREDITCURVE_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("CREDITCURVE_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"CREDITCURVE_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InvalidInputError("CREDITCURVE_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


@dataclass(frozen=True)
class GlsProblem:
    design: np.ndarray
    response: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.design, dtype=float))
        y = np.asarray(self.response, dtype=float).reshape(-1)
        S = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        n, p = X.shape
        if y.size != n or S.shape != (n, n):
            raise InvalidInputError(f"inconsistent shapes: X {X.shape}, y {y.shape}, Phi {S.shape}")
        if n < p:
            raise InvalidInputError(f"need at least as many observations ({n}) as coefficients ({p})")
        scale = max(float(np.max(np.abs(S))), 1.0)
        if np.max(np.abs(S - S.T)) > 1e-10 * scale:
            raise InvalidInputError("covariance matrix is not symmetric")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "covariance", S)


@dataclass(frozen=True)
class GlsResult:
    coefficients: np.ndarray
    objective: float
    coef_covariance: np.ndarray
    log_det: float
    residuals: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.residuals.size

    @property
    def sigma2(self) -> float:
        dof = self.n_obs - self.coefficients.size
        return self.objective / dof if dof > 0 else math.nan

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.coef_covariance))


def profiled_nll(psi, log_det, n: int):
    """Gaussian negative log-likelihood (x2, constants dropped) with the scale profiled out."""
    psi = np.asarray(psi, dtype=float)
    with np.errstate(divide="ignore"):
        return n * np.log(psi / n) + log_det


def grid_objective(psi, log_det, n: int, mode: str = "nll"):
    if mode == "nll":
        return profiled_nll(psi, log_det, n)
    if mode == "psi":
        return np.asarray(psi, dtype=float)
    raise InvalidInputError(f"unknown objective mode {mode!r}; expected one of {OBJECTIVES}")


def _rank_ok(r_diag: np.ndarray) -> bool:
    d = np.abs(r_diag)
    top = d.max() if d.size else 0.0
    return top > 0 and d.min() > top * max(r_diag.size, 1) * 1e3 * np.finfo(float).eps


def check_design_rank(design: np.ndarray) -> None:
    """Raise a design :class:`SingularSystemError` if ``design`` lacks full column rank.

    Columns are scaled to unit norm first so that regressors of very different
    magnitudes (``s`` versus ``s^6`` moments) do not trip the test.
    """
    X = np.asarray(design, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise SingularSystemError("design", "a regressor column is identically zero")
    R = np.linalg.qr(X / norms, mode="r")
    if not _rank_ok(np.diag(R)):
        raise SingularSystemError("design", "regressor columns are linearly dependent")


def glse(problem: GlsProblem) -> GlsResult:
    """GLS estimate, minimized quadratic form and coefficient covariance.

    ``coef_covariance`` is ``sigma2_hat * (X' Phi^{-1} X)^{-1}`` with
    ``sigma2_hat = psi / (N - P)``.
    """
    X, y, S = problem.design, problem.response, problem.covariance
    try:
        L = linalg.cholesky(S, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularSystemError("covariance", "not positive definite") from exc
    Xw = linalg.solve_triangular(L, X, lower=True)
    yw = linalg.solve_triangular(L, y, lower=True)
    Q, R = np.linalg.qr(Xw, mode="reduced")
    if not _rank_ok(np.diag(R)):
        raise SingularSystemError("design", "rank deficient after whitening")
    beta = linalg.solve_triangular(R, Q.T @ yw)
    resid_w = yw - Xw @ beta
    psi = float(resid_w @ resid_w)
    r_inv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    n, p = X.shape
    sigma2 = psi / (n - p) if n > p else math.nan
    return GlsResult(
        coefficients=beta,
        objective=psi,
        coef_covariance=sigma2 * (r_inv @ r_inv.T),
        log_det=float(2.0 * np.sum(np.log(np.diag(L)))),
        residuals=y - X @ beta,
    )


def glse_batch(design: np.ndarray, response: np.ndarray, covariances: np.ndarray):
    """Vectorized GLS over a stack of covariance matrices.

    ``design`` is ``(N, P)`` or ``(B, N, P)``; ``response`` is ``(N,)`` or
    ``(B, N)``; ``covariances`` is ``(B, N, N)``. Returns
    ``(beta (B, P), psi (B,), log_det (B,), ok (B,))``. Entries where ``Phi``
    is not PD or the whitened design is rank deficient have ``ok = False``
    and ``psi = +inf``.
    """
    S = np.asarray(covariances, dtype=float)
    b, n, _ = S.shape
    X = np.broadcast_to(np.asarray(design, dtype=float), (b,) + np.shape(design)[-2:])
    y = np.broadcast_to(np.asarray(response, dtype=float), (b, n))
    p = X.shape[-1]
    beta = np.full((b, p), np.nan)
    psi = np.full(b, np.inf)
    logdet = np.full(b, np.nan)
    ok = np.zeros(b, dtype=bool)

    try:
        L = np.linalg.cholesky(S)
        chol_ok = np.all(np.isfinite(L), axis=(1, 2))
    except np.linalg.LinAlgError:
        L = np.zeros_like(S)
        chol_ok = np.zeros(b, dtype=bool)
        for i in range(b):
            try:
                L[i] = np.linalg.cholesky(S[i])
                chol_ok[i] = True
            except np.linalg.LinAlgError:
                pass
    idx = np.flatnonzero(chol_ok)
    if idx.size == 0:
        return beta, psi, logdet, ok
    Li = L[idx]
    rhs = np.concatenate([X[idx], y[idx][:, :, None]], axis=2)
    w = np.linalg.solve(Li, rhs)
    Xw, yw = w[:, :, :p], w[:, :, p]
    Q, R = np.linalg.qr(Xw, mode="reduced")
    rd = np.abs(np.diagonal(R, axis1=1, axis2=2))
    top = rd.max(axis=1)
    rank_ok = (top > 0) & (rd.min(axis=1) > top * max(p, 1) * 1e3 * np.finfo(float).eps)
    qty = np.einsum("bnp,bn->bp", Q, yw)
    safe_R = np.where(rank_ok[:, None, None], R, np.eye(p))
    bi = np.linalg.solve(safe_R, qty[:, :, None])[:, :, 0]
    rw = yw - np.einsum("bnp,bp->bn", Xw, bi)
    good = idx[rank_ok]
    beta[good] = bi[rank_ok]
    psi[good] = np.einsum("bn,bn->b", rw, rw)[rank_ok]
    logdet[good] = 2.0 * np.sum(np.log(np.diagonal(Li, axis1=1, axis2=2)), axis=1)[rank_ok]
    ok[good] = True
    return beta, psi, logdet, ok


@dataclass(frozen=True)
class GridSpec:
    """Candidate values per parameter, in a fixed axis order.

    With ``refine_depth > 0`` the minimizer re-grids around the incumbent:
    each axis spans one original spacing either side of the best value with
    a step of ``spacing * shrink``, repeated ``refine_depth`` times.
    """

    values: Mapping[str, Sequence[float]]
    refine_depth: int = 0
    shrink: float = 0.1
    bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        vals = {name: tuple(float(v) for v in seq) for name, seq in self.values.items()}
        lo, hi = self.bounds
        for name, seq in vals.items():
            if not seq:
                raise InvalidInputError(f"grid axis {name!r} is empty")
            if any(not (lo <= v <= hi) for v in seq):
                raise InvalidInputError(f"grid axis {name!r} has values outside [{lo}, {hi}]")
        if self.refine_depth < 0:
            raise InvalidInputError("refine_depth must be >= 0")
        if not 0 < self.shrink < 1:
            raise InvalidInputError("shrink must lie in (0, 1)")
        object.__setattr__(self, "values", vals)

    @classmethod
    def default(cls, names: Sequence[str], **kwargs) -> "GridSpec":
        return cls({name: DEFAULT_GRID for name in names}, **kwargs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.values)

    def points(self) -> list[tuple[float, ...]]:
        return list(itertools.product(*(sorted(set(v)) for v in self.values.values())))

    def with_values(self, **overrides) -> "GridSpec":
        vals = dict(self.values)
        vals.update(overrides)
        return GridSpec(vals, self.refine_depth, self.shrink, self.bounds)

    def restrict(self, names: Sequence[str]) -> "GridSpec":
        return GridSpec({n: self.values[n] for n in names}, self.refine_depth, self.shrink, self.bounds)


@dataclass
class GridResult:
    names: tuple[str, ...]
    best_point: dict
    best_value: float
    evaluations: list = field(default_factory=list)

    @property
    def best_tuple(self) -> tuple:
        return tuple(self.best_point[n] for n in self.names)


def _key(point) -> tuple:
    return tuple(round(float(v), 12) for v in point)


def _evaluate(objective, points, vectorized: bool, max_workers: int) -> list[float]:
    if not points:
        return []
    if vectorized:
        try:
            vals = np.asarray(objective(np.array(points, dtype=float)), dtype=float).reshape(-1)
        except Exception:  # noqa: BLE001 - an erroring batch counts as infeasible
            return [math.inf] * len(points)
        if vals.size != len(points):
            raise InvalidInputError("vectorized objective returned the wrong number of values")
        return [math.inf if math.isnan(v) else float(v) for v in vals]

    def one(pt):
        try:
            v = float(objective(pt))
        except Exception:  # noqa: BLE001 - errors at a point are recorded as +inf
            return math.inf
        return math.inf if math.isnan(v) else v

    if max_workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(one, points))
    return [one(pt) for pt in points]


def grid_minimize(
    objective: Callable,
    spec: GridSpec,
    *,
    vectorized: bool = False,
    max_workers: int | None = None,
) -> GridResult:
    """Exhaustive minimization of ``objective`` over ``spec``.

    ``objective`` receives a point as a tuple in ``spec.names`` order (or, when
    ``vectorized``, an ``(n, d)`` array of points and returns ``n`` values).
    Exceptions and NaN count as ``+inf``. Ties resolve to the lexicographically
    smallest point, so the answer does not depend on evaluation order.
    """
    workers = default_workers() if max_workers is None else max(1, int(max_workers))
    names = spec.names
    seen: dict[tuple, float] = {}
    evaluations: list = []

    def run(points):
        fresh = [p for p in dict.fromkeys(_key(p) for p in points) if p not in seen]
        for p, v in zip(fresh, _evaluate(objective, fresh, vectorized, workers)):
            seen[p] = v
            evaluations.append((dict(zip(names, p)), v))

    def incumbent():
        finite = [(v, p) for p, v in seen.items() if v != math.inf]
        if not finite:
            raise NoFeasiblePointError(f"all {len(seen)} grid points are infeasible")
        return min(finite)

    run(spec.points())
    best_v, best_p = incumbent()

    spacing = {}
    for name, vals in spec.values.items():
        u = sorted(set(vals))
        spacing[name] = min(np.diff(u)) if len(u) > 1 else 0.0
    lo, hi = spec.bounds
    steps = int(round(1.0 / spec.shrink))
    for _ in range(spec.refine_depth):
        axes = []
        for name, centre in zip(names, best_p):
            h = spacing[name]
            if h == 0.0:
                axes.append((centre,))
                continue
            fine = h * spec.shrink
            axes.append(tuple(sorted({min(hi, max(lo, centre + k * fine)) for k in range(-steps, steps + 1)})))
            spacing[name] = fine
        run(list(itertools.product(*axes)))
        best_v, best_p = incumbent()

    return GridResult(names, dict(zip(names, best_p)), best_v, evaluations)
