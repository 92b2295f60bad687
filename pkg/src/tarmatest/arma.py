"""Conditional Gaussian ML estimation of ARMA(p, q) with intercept, and Hannan-Rissanen.

The likelihood conditions on the first ``p`` observations and on zero
pre-sample residuals; ``sigma2`` is profiled out, so maximising the
likelihood is minimising the residual sum of squares.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dgp import ArmaSpec, as_array, roots_ok
from .errors import EstimationError, PreconditionError
from .score import residuals as _residuals
from .score import zeta_derivatives

__all__ = [
    "ArmaFit",
    "OrderSelection",
    "residuals_conditional",
    "conditional_loglik",
    "fit_arma",
    "hannan_rissanen_init",
    "select_order_hr",
    "long_ar_order",
    "standard_errors",
]

logger = logging.getLogger(__name__)


def residuals_conditional(series, spec: ArmaSpec) -> np.ndarray:
    """Residuals ``e_t`` for every observation after the first ``p``."""
    return _residuals(series, spec)


def conditional_loglik(eps: np.ndarray, sigma2: float | None = None) -> float:
    """Gaussian log-likelihood of the residuals; ``sigma2`` defaults to the profiled MLE."""
    n = eps.size
    ss = float(eps @ eps)
    if sigma2 is None:
        sigma2 = ss / n
    return -0.5 * n * math.log(2.0 * math.pi * sigma2) - ss / (2.0 * sigma2)


@dataclass
class ArmaFit:
    """Result of :func:`fit_arma`.

    ``loglik_trace`` holds the profile log-likelihood after every accepted
    iteration (starting value first).
    """

    spec: ArmaSpec
    residuals: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    naic: float
    nbic: float
    gradient_norm: float = float("nan")
    loglik_trace: list[float] = field(default_factory=list)

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def q(self) -> int:
        return self.spec.q

    @property
    def sigma2(self) -> float:
        return self.spec.sigma2

    @property
    def nobs(self) -> int:
        return self.residuals.size

    def summary(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "phi": self.spec.phi.tolist(),
            "theta": self.spec.theta.tolist(),
            "sigma2": self.sigma2,
            "loglik": self.loglik,
            "naic": self.naic,
            "nbic": self.nbic,
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass
class OrderSelection:
    p_hat: int
    q_hat: int
    criterion_grid: np.ndarray
    long_ar_order: int
    criterion: str = "bic"


def long_ar_order(N: int) -> int:
    """Stage-one AR order ``floor(10 log10 N)``, capped so the regression stays overdetermined."""
    m = int(math.floor(10.0 * math.log10(max(N, 1))))
    return max(1, min(m, (N - 1) // 3))


def _lag_matrix(x: np.ndarray, lags: int, rows: slice) -> np.ndarray:
    t = np.arange(x.size)[rows]
    return np.column_stack([x[t - k] for k in range(1, lags + 1)]) if lags else np.empty((t.size, 0))


def _ols(X: np.ndarray, y: np.ndarray):
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    return coef, rank


def _long_ar_residuals(y: np.ndarray, m: int) -> np.ndarray | None:
    """Stage one: OLS AR(m) with intercept; residuals are NaN for t < m."""
    N = y.size
    rows = slice(m, N)
    X = np.column_stack([np.ones(N - m), _lag_matrix(y, m, rows)])
    coef, rank = _ols(X, y[rows])
    if rank < X.shape[1]:
        return None
    ehat = np.full(N, np.nan)
    ehat[m:] = y[rows] - X @ coef
    return ehat


def _stage_two(y, ehat, p, q, start):
    N = y.size
    rows = slice(start, N)
    cols = [np.ones(N - start), _lag_matrix(y, p, rows)]
    if q:
        cols.append(_lag_matrix(ehat, q, rows))
    X = np.column_stack(cols)
    coef, rank = _ols(X, y[rows])
    if rank < X.shape[1]:
        return None, None
    resid = y[rows] - X @ coef
    phi = coef[: p + 1]
    theta = -coef[p + 1 :]
    return ArmaSpec(phi, theta, max(float(resid @ resid) / resid.size, 1e-300)), resid


def _shrink_to_feasible(spec: ArmaSpec) -> ArmaSpec:
    phi, theta = spec.phi.copy(), spec.theta.copy()
    for _ in range(2000):
        if roots_ok(phi[1:]) and roots_ok(theta):
            break
        phi[1:] *= 0.9
        theta *= 0.9
    return ArmaSpec(phi, theta, spec.sigma2)


def _fallback(y: np.ndarray, p: int, q: int) -> ArmaSpec:
    var = float(np.var(y))
    return ArmaSpec(np.r_[np.mean(y), np.zeros(p)], np.zeros(q), var if var > 0 else 1.0)


def hannan_rissanen_init(series, p: int, q: int, m: int | None = None) -> ArmaSpec:
    """Two-stage Hannan-Rissanen estimate, shrunk into the stationary/invertible region.

    With ``q = 0`` stage two is the OLS AR(p) regression on all rows after
    the first ``p``, i.e. the exact conditional MLE.
    """
    y = as_array(series)
    N = y.size
    if q == 0:
        spec, _ = _stage_two(y, None, p, 0, p)
        return _fallback(y, p, q) if spec is None else _shrink_to_feasible(spec)
    m = long_ar_order(N) if m is None else m
    ehat = _long_ar_residuals(y, m)
    start = max(p, m + q)
    if ehat is None or N - start <= p + q + 1:
        return _fallback(y, p, q)
    spec, _ = _stage_two(y, ehat, p, q, start)
    return _fallback(y, p, q) if spec is None else _shrink_to_feasible(spec)


def select_order_hr(series, p_max: int, q_max: int, criterion: str = "bic", m: int | None = None) -> OrderSelection:
    """Hannan-Rissanen order selection over ``[0..p_max] x [0..q_max]`` minus (0, 0).

    Every candidate is regressed on the same rows so the criteria are comparable.
    Ties go to the smallest ``p + q``, then the smallest ``p``.
    """
    if p_max < 1 or q_max < 1:
        raise PreconditionError("p_max and q_max must be >= 1")
    y = as_array(series)
    N = y.size
    m = long_ar_order(N) if m is None else m
    ehat = _long_ar_residuals(y, m)
    start = max(p_max, m + q_max)
    grid = np.full((p_max + 1, q_max + 1), np.inf)
    if ehat is None or N - start <= p_max + q_max + 1:
        raise EstimationError("series too short or degenerate for order selection")
    for p in range(p_max + 1):
        for q in range(q_max + 1):
            if p == 0 and q == 0:
                continue
            spec, resid = _stage_two(y, ehat, p, q, start)
            if spec is None:
                continue
            nn = resid.size
            k = p + q + 1
            penalty = 2.0 * k if criterion == "aic" else k * math.log(nn)
            grid[p, q] = nn * math.log(spec.sigma2) + penalty
    if not np.isfinite(grid).any():
        raise EstimationError("no candidate order could be estimated")
    best = min(
        ((grid[p, q], p + q, p, q) for p in range(p_max + 1) for q in range(q_max + 1) if np.isfinite(grid[p, q])),
    )
    return OrderSelection(best[2], best[3], grid, m, criterion)


def standard_errors(series, fit: ArmaFit) -> np.ndarray:
    """Asymptotic standard errors of (intercept, AR, MA) from ``sigma2 (J'J)^{-1}``."""
    _, J = zeta_derivatives(as_array(series), fit.spec)
    cov = fit.sigma2 * np.linalg.pinv(J.T @ J)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def _criteria(loglik: float, n: int, k: int) -> tuple[float, float]:
    return (-2.0 * loglik + 2.0 * k) / n, (-2.0 * loglik + k * math.log(n)) / n


def _make_fit(spec_params, p, q, eps, converged, iterations, gnorm, trace) -> ArmaFit:
    n = eps.size
    sigma2 = float(eps @ eps) / n
    spec = ArmaSpec.from_zeta(spec_params, p, q, sigma2)
    ll = conditional_loglik(eps, sigma2)
    naic, nbic = _criteria(ll, n, p + q + 2)
    return ArmaFit(spec, eps, ll, converged, iterations, naic, nbic, gnorm, trace)


def fit_arma(
    series,
    p: int,
    q: int,
    *,
    start: ArmaSpec | None = None,
    max_iter: int = 500,
    gtol: float = 1e-6,
    check_length: bool = True,
) -> ArmaFit:
    """Maximise the conditional likelihood over (phi, theta) with sigma2 profiled out.

    BFGS on the negative profile log-likelihood ``(n/2) log(SS/n)``, whose
    gradient ``J'e / sigma2`` comes from :func:`score.zeta_derivatives`. The
    inverse-Hessian approximation starts from the Gauss-Newton matrix
    ``(J'J / sigma2)^-1``. Points outside the stationary/invertible region
    have objective +inf and are rejected by the backtracking line search.
    ``converged`` means the profile score reached ``gtol`` in max-norm.
    """
    y = as_array(series)
    N = y.size
    if check_length and N < 10 * (p + q + 2):
        raise PreconditionError(f"series of length {N} too short for ARMA({p},{q})")
    if not np.all(np.isfinite(y)):
        raise EstimationError("series contains non-finite values")
    if np.ptp(y) == 0.0:
        raise EstimationError("series has zero variance")
    spec = start if start is not None else hannan_rissanen_init(y, p, q)
    if spec.p != p or spec.q != q:
        raise PreconditionError("starting spec has the wrong orders")

    def evaluate(x):
        if not (roots_ok(x[1 : p + 1]) and roots_ok(x[p + 1 :])):
            return np.inf, None, None, None
        eps, J = zeta_derivatives(y, ArmaSpec.from_zeta(x, p, q))
        ss = float(eps @ eps)
        if not np.isfinite(ss) or ss <= 0.0:
            return np.inf, None, None, None
        n = eps.size
        return 0.5 * n * math.log(ss / n), (J.T @ eps) * (n / ss), eps, J

    x = spec.zeta.copy()
    f, g, eps, J = evaluate(x)
    if not np.isfinite(f):
        raise EstimationError("degenerate residuals at the starting point")
    n = eps.size
    trace = [conditional_loglik(eps)]
    Hinv = _gn_inverse(J, float(eps @ eps) / n)
    converged = False
    it = 0
    for it in range(max_iter + 1):
        if np.max(np.abs(g)) <= gtol:
            converged = True
            break
        if it == max_iter:
            break
        direction = -Hinv @ g
        slope = float(g @ direction)
        if slope >= 0:
            Hinv = _gn_inverse(J, float(eps @ eps) / n)
            direction = -Hinv @ g
            slope = float(g @ direction)
        step = 1.0
        while step > 1e-12:
            x_t = x + step * direction
            f_t, g_t, eps_t, J_t = evaluate(x_t)
            if f_t <= f + 1e-4 * step * slope:
                break
            # objective differences below roundoff: judge by the gradient instead
            if f_t <= f + 1e-12 * abs(f) and np.max(np.abs(g_t)) < np.max(np.abs(g)):
                break
            step *= 0.5
        else:
            break
        s_vec, y_vec = x_t - x, g_t - g
        sy = float(s_vec @ y_vec)
        if sy > 1e-12 * float(s_vec @ s_vec) ** 0.5 * float(y_vec @ y_vec) ** 0.5:
            rho = 1.0 / sy
            V = np.eye(x.size) - rho * np.outer(s_vec, y_vec)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s_vec, s_vec)
        stalled = f - f_t <= 1e-15 * abs(f)
        x, f, g, eps, J = x_t, f_t, g_t, eps_t, J_t
        trace.append(conditional_loglik(eps))
        if stalled and np.max(np.abs(g)) > gtol:
            # a few more tries from the Gauss-Newton matrix before giving up
            Hinv = _gn_inverse(J, float(eps @ eps) / n)
    gnorm = float(np.max(np.abs(g)))
    if not converged:
        logger.debug("ARMA(%d,%d) fit stopped after %d iterations, |score|=%.3g", p, q, it, gnorm)
    return _make_fit(x, p, q, eps, converged, it, gnorm, trace)


def _gn_inverse(J: np.ndarray, sigma2: float) -> np.ndarray:
    H = J.T @ J / sigma2
    try:
        return np.linalg.inv(H + 1e-10 * np.trace(H) * np.eye(H.shape[0]) / H.shape[0])
    except np.linalg.LinAlgError:
        return np.eye(H.shape[0]) / max(np.trace(H), 1.0)
