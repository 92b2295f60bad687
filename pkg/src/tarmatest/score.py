"""Derivatives of the conditional residuals with respect to the ARMA and threshold parameters.

Time indexing: for observations ``y[0..N-1]`` and AR order ``p`` the first
``p`` values are conditioning values and residuals exist for array times
``t = p..N-1`` (``n = N - p`` of them). Pre-sample residuals are zero, and a
threshold marker ``I(y[t-d-j] <= r)`` whose index falls before ``y[0]``
contributes zero.

Every derivative satisfies

    de_t/dl = (direct term)_t + sum_s theta_s de_{t-s}/dl,

i.e. it is the direct term passed through the all-pole filter ``1/theta(B)``;
the impulse response of that filter is the alpha sequence. The filtering is
done with :func:`scipy.signal.lfilter`, so a panel costs O(n (p+q) |grid|).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit
from scipy.signal import lfilter

from .dgp import ArmaSpec, as_array
from .errors import PreconditionError, ValidationError

__all__ = [
    "Variant",
    "ScorePanel",
    "alpha_sequence",
    "residuals",
    "residuals_threshold",
    "zeta_derivatives",
    "build_score_panel",
    "direct_sum_panel",
    "threshold_moments",
]


class Variant(str, Enum):
    """Which block is tested: AR only (sLM) or AR and MA (sLMg)."""

    AR_ONLY = "sLM"
    GENERAL = "sLMg"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip()
        for v in cls:
            if key.lower() in (v.value.lower(), v.name.lower()):
                return v
        raise ValueError(f"unknown variant {value!r} (use sLM or sLMg)")

    def psi_dim(self, p: int, q: int) -> int:
        return p + 1 if self is Variant.AR_ONLY else p + q + 1


def alpha_sequence(theta, n: int) -> np.ndarray:
    """``alpha_0 = 1``, ``alpha_j = sum_s theta_s alpha_{j-s}``, for ``j < n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    theta = np.asarray(theta, dtype=float)
    alpha = np.zeros(n)
    alpha[0] = 1.0
    for j in range(1, n):
        for s in range(1, min(j, theta.size) + 1):
            alpha[j] += theta[s - 1] * alpha[j - s]
    return alpha


def _ma_filter(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    if theta.size == 0:
        return x
    return lfilter([1.0], np.r_[1.0, -theta], x, axis=0)


def _ar_part(y: np.ndarray, phi: np.ndarray) -> np.ndarray:
    p = phi.size - 1
    N = y.size
    u = y[p:] - phi[0]
    for k in range(1, p + 1):
        u = u - phi[k] * y[p - k : N - k]
    return u


def residuals(series, spec: ArmaSpec) -> np.ndarray:
    """Conditional residuals for ``t = p..N-1`` with zero pre-sample residuals."""
    y = as_array(series)
    if y.size <= spec.p:
        raise PreconditionError(f"need more than p={spec.p} observations, got {y.size}")
    return _ma_filter(spec.theta, _ar_part(y, spec.phi))


def _lagged(x: np.ndarray, s: int) -> np.ndarray:
    out = np.zeros_like(x)
    if s < x.size:
        out[s:] = x[: x.size - s]
    return out


def _direct_zeta(y: np.ndarray, eps: np.ndarray, p: int, q: int) -> np.ndarray:
    n = eps.size
    N = y.size
    cols = np.empty((n, p + q + 1))
    cols[:, 0] = -1.0
    for k in range(1, p + 1):
        cols[:, k] = -y[p - k : N - k]
    for s in range(1, q + 1):
        cols[:, p + s] = _lagged(eps, s)
    return cols


def zeta_derivatives(series, spec: ArmaSpec) -> tuple[np.ndarray, np.ndarray]:
    """Residuals and the n x (p+q+1) matrix of ``d e_t / d zeta``.

    Column order: intercept, AR lags 1..p, MA lags 1..q.
    """
    y = as_array(series)
    eps = residuals(y, spec)
    direct = _direct_zeta(y, eps, spec.p, spec.q)
    return eps, _ma_filter(spec.theta, direct)


def _markers(y: np.ndarray, p: int, d: int, grid: np.ndarray) -> np.ndarray:
    """n x G matrix of I(y[t-d] <= r_g) for t = p..N-1 (zero before the sample)."""
    lagged = _delayed_marker(y, p, d)
    return (lagged[:, None] <= grid[None, :]).astype(float)


@dataclass(frozen=True)
class ScorePanel:
    """Per-observation derivative vectors evaluated at a given ARMA spec.

    ``d_psi`` has shape ``(G, n, m)``: one n x m block per grid threshold,
    columns ordered intercept, AR lags, then (GENERAL only) MA lags.
    """

    d_zeta: np.ndarray
    d_psi: np.ndarray
    grid: np.ndarray
    delay: int
    variant: Variant
    residuals: np.ndarray
    p: int
    q: int

    @property
    def n(self) -> int:
        return self.residuals.size

    def block(self, r: float) -> np.ndarray:
        idx = np.flatnonzero(self.grid == r)
        if idx.size == 0:
            raise ValidationError(f"threshold {r!r} is not on the panel grid")
        return self.d_psi[idx[0]]

    def restrict(self, variant: Variant) -> "ScorePanel":
        """Drop the MA columns of a GENERAL panel to obtain the AR_ONLY one."""
        variant = Variant.parse(variant)
        if variant is self.variant:
            return self
        if self.variant is Variant.AR_ONLY:
            raise ValueError("cannot widen an AR_ONLY panel")
        return ScorePanel(
            self.d_zeta, self.d_psi[:, :, : self.p + 1], self.grid, self.delay, variant, self.residuals, self.p, self.q
        )


def _check_grid(grid) -> np.ndarray:
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValidationError("threshold grid is empty")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValidationError("threshold grid must be strictly increasing")
    return grid


def build_score_panel(series, fit, grid, d: int = 1, variant=Variant.GENERAL) -> ScorePanel:
    """Derivatives of the residuals at ``fit`` (an ArmaFit or ArmaSpec), with Psi = 0.

    The threshold block for threshold r is the filtered product of the
    direct terms with the marker ``I(y[t-d] <= r)``.
    """
    variant = Variant.parse(variant)
    grid = _check_grid(grid)
    if d < 1:
        raise ValidationError("delay d must be >= 1")
    spec = getattr(fit, "spec", fit)
    y = as_array(series)
    eps, d_zeta = zeta_derivatives(y, spec)
    p, q = spec.p, spec.q
    m = variant.psi_dim(p, q)
    direct = _direct_zeta(y, eps, p, q)[:, :m]
    marks = _markers(y, p, d, grid)
    n, G = marks.shape
    # (n, G, m) so that a single lfilter call along time covers all thresholds
    stacked = marks[:, :, None] * direct[:, None, :]
    filtered = _ma_filter(spec.theta, stacked.reshape(n, G * m)).reshape(n, G, m)
    d_psi = np.ascontiguousarray(filtered.transpose(1, 0, 2))
    return ScorePanel(d_zeta, d_psi, grid, int(d), variant, eps, p, q)


@njit(cache=True)
def _gram_kernel(direct, theta, marker, grid):
    # sum_t D_t D_t' for every threshold, filtering one threshold at a time
    n, m = direct.shape
    q = theta.size
    G = grid.size
    gram = np.zeros((G, m, m))
    D = np.zeros((n, m))
    for g in range(G):
        r = grid[g]
        for t in range(n):
            on = marker[t] <= r
            for c in range(m):
                v = direct[t, c] if on else 0.0
                for s in range(1, min(q, t) + 1):
                    v += theta[s - 1] * D[t - s, c]
                D[t, c] = v
            for a in range(m):
                da = D[t, a]
                if da != 0.0:
                    for b in range(a, m):
                        gram[g, a, b] += da * D[t, b]
        for a in range(m):
            for b in range(a):
                gram[g, a, b] = gram[g, b, a]
    return gram


def _adjoint_filter(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    # F'x where F is the lower-triangular MA filter: the same filter run backwards in time
    return _ma_filter(theta, x[::-1])[::-1]


def _marked_cumsums(values: np.ndarray, marker: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """``sum_t values[t] * I(marker[t] <= r)`` for every r in ``grid``."""
    order = np.argsort(marker, kind="stable")
    csum = np.cumsum(values[order], axis=0)
    cut = np.searchsorted(marker[order], grid, side="right")
    out = np.zeros((grid.size,) + values.shape[1:])
    hit = cut > 0
    out[hit] = csum[cut[hit] - 1]
    return out


def _delayed_marker(y: np.ndarray, p: int, d: int) -> np.ndarray:
    N = y.size
    n = N - p
    marker = np.full(n, np.inf)
    start = max(0, d - p)
    if start < n:
        marker[start:] = y[p - d + start : N - d]
    return marker


def threshold_moments(series, spec: ArmaSpec, grid, d: int = 1, variant=Variant.GENERAL):
    """Sums over t needed by the LM statistic, without materialising the panel.

    Returns ``(eps, d_zeta, proj, cross, gram)`` where, for grid point g,
    ``proj[g] = sum_t e_t D_t``, ``cross[g] = sum_t dzeta_t D_t'`` and
    ``gram[g] = sum_t D_t D_t'`` with ``D_t = de_t/dPsi(r_g)``. Matches the
    corresponding products of :func:`build_score_panel` blocks.

    ``proj`` and ``cross`` are linear in the filtered block, so they are
    obtained from the adjoint-filtered residuals and nuisance derivatives by
    cumulative sums over observations sorted by their marker value.
    """
    variant = Variant.parse(variant)
    grid = _check_grid(grid)
    if d < 1:
        raise ValidationError("delay d must be >= 1")
    y = as_array(series)
    eps, d_zeta = zeta_derivatives(y, spec)
    p, q = spec.p, spec.q
    m = variant.psi_dim(p, q)
    direct = np.ascontiguousarray(_direct_zeta(y, eps, p, q)[:, :m])
    marker = _delayed_marker(y, p, d)
    theta = spec.theta
    lhs = _adjoint_filter(theta, np.column_stack([eps, d_zeta]))
    proj = _marked_cumsums(lhs[:, 0:1] * direct, marker, grid)
    cross = _marked_cumsums(lhs[:, 1:, None] * direct[:, None, :], marker, grid)
    if q == 0:
        gram = _marked_cumsums(direct[:, :, None] * direct[:, None, :], marker, grid)
    else:
        gram = _gram_kernel(direct, np.ascontiguousarray(theta), marker, grid)
    return eps, d_zeta, proj, cross, gram


def direct_sum_panel(series, spec: ArmaSpec, grid, d: int = 1, variant=Variant.GENERAL) -> ScorePanel:
    """Literal convolution sums with the alpha sequence, O(n^2). Reference only."""
    variant = Variant.parse(variant)
    grid = _check_grid(grid)
    y = as_array(series)
    p, q = spec.p, spec.q
    eps = residuals(y, spec)
    n = eps.size
    alpha = alpha_sequence(spec.theta, n)
    m = variant.psi_dim(p, q)

    def X(i):  # array time i; conditioning values included
        return y[i] if i >= 0 else 0.0

    def E(i):
        return eps[i - p] if i >= p else 0.0

    def I(i, r):
        return 1.0 if (i >= 0 and y[i] <= r) else 0.0

    d_zeta = np.zeros((n, p + q + 1))
    d_psi = np.zeros((grid.size, n, m))
    for ti in range(n):
        t = ti + p
        for j in range(ti + 1):
            a = alpha[j]
            if a == 0.0:
                continue
            d_zeta[ti, 0] -= a
            for k in range(1, p + 1):
                d_zeta[ti, k] -= a * X(t - k - j)
            for s in range(1, q + 1):
                d_zeta[ti, p + s] += a * E(t - s - j)
            for g, r in enumerate(grid):
                ind = I(t - d - j, r)
                if ind == 0.0:
                    continue
                d_psi[g, ti, 0] -= a
                for k in range(1, p + 1):
                    d_psi[g, ti, k] -= a * X(t - k - j)
                if variant is Variant.GENERAL:
                    for s in range(1, q + 1):
                        d_psi[g, ti, p + s] += a * E(t - s - j)
    return ScorePanel(d_zeta, d_psi, grid, int(d), variant, eps, p, q)


def residuals_threshold(series, spec: ArmaSpec, psi, r: float, d: int = 1, variant=Variant.GENERAL) -> np.ndarray:
    """Residuals of the full threshold recursion at an arbitrary ``psi`` (slow reference)."""
    variant = Variant.parse(variant)
    y = as_array(series)
    p, q = spec.p, spec.q
    psi = np.asarray(psi, dtype=float)
    if psi.size != variant.psi_dim(p, q):
        raise ValidationError("psi has the wrong length for this variant")
    psi_ma = psi[p + 1 :] if variant is Variant.GENERAL else np.zeros(q)
    N = y.size
    eps = np.zeros(N)
    for t in range(p, N):
        e = y[t] - spec.phi[0]
        for k in range(1, p + 1):
            e -= spec.phi[k] * y[t - k]
        for s in range(1, q + 1):
            if t - s >= p:
                e += spec.theta[s - 1] * eps[t - s]
        if t - d >= 0 and y[t - d] <= r:
            reg = psi[0]
            for k in range(1, p + 1):
                reg += psi[k] * y[t - k]
            for s in range(1, q + 1):
                if t - s >= p:
                    reg -= psi_ma[s - 1] * eps[t - s]
            e -= reg
        eps[t] = e
    return eps[p:]
