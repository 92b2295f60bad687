"""Supremum LM statistics for ARMA against threshold ARMA alternatives.

For each candidate threshold ``r`` the LM statistic is the quadratic form of
the threshold-block score in the inverse of the Schur complement of the
outer-product information; the test statistic is its maximum over a grid of
sample percentiles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dgp import as_array
from .errors import PreconditionError, SingularityError, TableMismatchError, ValidationError
from .score import ScorePanel, Variant, threshold_moments

__all__ = [
    "Variant",
    "InfoBlocks",
    "TestReport",
    "threshold_grid",
    "score_vector",
    "info_blocks",
    "lm_profile",
    "test_statistic",
    "test_statistics",
    "pvalue",
    "DEFAULT_BAND",
    "DEFAULT_MAX_POINTS",
]

logger = logging.getLogger(__name__)

DEFAULT_BAND = (0.25, 0.75)
DEFAULT_MAX_POINTS = 200
SKIP_RATIO = 1e-10


def threshold_grid(series, d: int = 1, band=DEFAULT_BAND, max_points: int | None = DEFAULT_MAX_POINTS) -> np.ndarray:
    """Sorted distinct delayed values lying between the band's sample percentiles.

    The percentiles are lower empirical quantiles (inverse of the empirical
    CDF) of the whole series and both ends are inclusive. Grids longer than
    ``max_points`` are thinned to ``max_points`` values evenly spaced by rank,
    keeping both endpoints. ``max_points=None`` disables thinning.
    """
    lo, hi = band
    if not (0.0 < lo < hi < 1.0):
        raise ValidationError(f"band must satisfy 0 < lo < hi < 1, got {band}")
    y = as_array(series)
    if d < 1 or d >= y.size:
        raise ValidationError("delay must be in [1, n)")
    r_lo, r_hi = np.quantile(y, [lo, hi], method="inverted_cdf")
    lagged = np.unique(y[: y.size - d])
    grid = lagged[(lagged >= r_lo) & (lagged <= r_hi)]
    if grid.size == 0:
        raise ValidationError("no delayed values fall inside the threshold band")
    if max_points is not None and grid.size > max_points:
        if max_points < 1:
            raise ValidationError("max_points must be positive")
        idx = np.unique(np.round(np.linspace(0, grid.size - 1, max_points)).astype(int))
        grid = grid[idx]
    return grid


@dataclass(frozen=True)
class InfoBlocks:
    """Outer-product information blocks, one ``I12``/``I22`` per grid threshold."""

    I11: np.ndarray
    I12: np.ndarray
    I22: np.ndarray

    def full(self, g: int) -> np.ndarray:
        return np.block([[self.I11, self.I12[g]], [self.I12[g].T, self.I22[g]]])


def info_blocks(panel: ScorePanel, sigma2: float) -> InfoBlocks:
    Dz, Dp = panel.d_zeta, panel.d_psi
    I11 = Dz.T @ Dz / sigma2
    I12 = np.matmul(Dz.T[None, :, :], Dp) / sigma2
    I22 = np.matmul(Dp.transpose(0, 2, 1), Dp) / sigma2
    I22 = 0.5 * (I22 + I22.transpose(0, 2, 1))
    return InfoBlocks(I11, I12, I22)


def _scores(panel: ScorePanel, residuals, sigma2) -> np.ndarray:
    # dl/dPsi = -sum_t e_t/sigma2 * de_t/dPsi, for every grid point at once
    return -np.einsum("gtm,t->gm", panel.d_psi, residuals) / sigma2


def score_vector(panel: ScorePanel, residuals, sigma2: float, r: float) -> np.ndarray:
    """Score of the log-likelihood with respect to the threshold block at ``r`` (Psi = 0)."""
    block = panel.block(r)
    return -(block.T @ np.asarray(residuals, dtype=float)) / sigma2


@dataclass
class TestReport:
    """Outcome of one supLM test."""

    __test__ = False  # not a pytest class

    variant: Variant
    statistic: float
    r_hat: float
    profile: np.ndarray  # (k, 2): threshold, Tn(r) for non-skipped thresholds
    p_value: float | None = None
    skipped_r: list[float] = field(default_factory=list)
    fit: object = None
    grid_band: tuple[float, float] = DEFAULT_BAND
    d: int = 1
    p: int = 0
    q: int = 0

    def top(self, k: int = 5) -> np.ndarray:
        order = np.lexsort((self.profile[:, 0], -self.profile[:, 1]))
        return self.profile[order[:k]]

    def to_dict(self, full_profile: bool = True) -> dict:
        out = {
            "variant": self.variant.value,
            "statistic": self.statistic,
            "r_hat": self.r_hat,
            "p_value": self.p_value,
            "band": list(self.grid_band),
            "d": self.d,
            "p": self.p,
            "q": self.q,
            "skipped_r": list(map(float, self.skipped_r)),
            "n_thresholds": int(self.profile.shape[0]),
        }
        if full_profile:
            out["profile"] = [[float(r), float(t)] for r, t in self.profile]
        if self.fit is not None and hasattr(self.fit, "summary"):
            out["fit"] = self.fit.summary()
        return out


def _solve_i11(I11: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return linalg.cho_solve(linalg.cho_factor(I11), rhs)
    except linalg.LinAlgError:
        return np.linalg.lstsq(I11, rhs, rcond=None)[0]


def _profile(I11, I12, I22, scores) -> tuple[np.ndarray, np.ndarray]:
    G, k, m = I12.shape
    W = _solve_i11(I11, I12.transpose(1, 0, 2).reshape(k, G * m))
    W = W.reshape(k, G, m).transpose(1, 0, 2)
    S = I22 - np.matmul(I12.transpose(0, 2, 1), W)
    S = 0.5 * (S + S.transpose(0, 2, 1))
    eig_min = np.linalg.eigvalsh(S)[:, 0]
    trace = np.trace(S, axis1=1, axis2=2)
    skip = ~(eig_min > SKIP_RATIO * trace)
    tn = np.full(G, np.nan)
    ok = np.flatnonzero(~skip)
    if ok.size:
        L = np.linalg.cholesky(S[ok])
        z = np.linalg.solve(L, scores[ok][:, :, None])[:, :, 0]
        tn[ok] = np.einsum("gm,gm->g", z, z)
    return tn, skip


def lm_profile(panel: ScorePanel, sigma2: float, residuals=None) -> tuple[np.ndarray, np.ndarray]:
    """Tn(r) for every grid point and a mask of thresholds skipped as ill-conditioned.

    Skipped entries of the returned profile are NaN.
    """
    eps = panel.residuals if residuals is None else np.asarray(residuals, dtype=float)
    blocks = info_blocks(panel, sigma2)
    return _profile(blocks.I11, blocks.I12, blocks.I22, _scores(panel, eps, sigma2))


def _report(grid, tn, skip, variant, fit, band, d, p, q) -> TestReport:
    if np.all(skip):
        raise SingularityError("information Schur complement is singular at every grid threshold")
    keep = ~skip
    prof = np.column_stack([grid[keep], tn[keep]])
    best = int(np.argmax(prof[:, 1]))  # first maximiser = smallest threshold
    return TestReport(
        variant=variant,
        statistic=float(prof[best, 1]),
        r_hat=float(prof[best, 0]),
        profile=prof,
        skipped_r=grid[skip].tolist(),
        fit=fit,
        grid_band=tuple(band),
        d=d,
        p=p,
        q=q,
    )


def test_statistics(
    series,
    fit,
    variants=(Variant.AR_ONLY, Variant.GENERAL),
    d: int = 1,
    band=DEFAULT_BAND,
    max_points: int | None = DEFAULT_MAX_POINTS,
    grid=None,
    require_converged: bool = True,
) -> dict[Variant, TestReport]:
    """Several variants from one pass over the data.

    The AR-only block is a leading sub-block of the general one, so the
    sums are accumulated once for the widest variant requested.
    """
    variants = [Variant.parse(v) for v in variants]
    if require_converged and not getattr(fit, "converged", True):
        raise PreconditionError("ARMA fit did not converge")
    if d < 1:
        raise ValidationError("delay d must be >= 1")
    y = as_array(series)
    if grid is None:
        grid = threshold_grid(y, d, band, max_points)
    spec = getattr(fit, "spec", fit)
    widest = Variant.GENERAL if Variant.GENERAL in variants else Variant.AR_ONLY
    eps, d_zeta, proj, cross, gram = threshold_moments(y, spec, grid, d, widest)
    grid = np.asarray(grid, dtype=float)
    sigma2 = float(spec.sigma2)
    I11 = d_zeta.T @ d_zeta / sigma2
    out = {}
    for v in variants:
        m = v.psi_dim(spec.p, spec.q)
        tn, skip = _profile(I11, cross[:, :, :m] / sigma2, gram[:, :m, :m] / sigma2, -proj[:, :m] / sigma2)
        out[v] = _report(grid, tn, skip, v, fit, band, d, spec.p, spec.q)
    return out


def test_statistic(
    series,
    fit,
    variant=Variant.AR_ONLY,
    d: int = 1,
    band=DEFAULT_BAND,
    max_points: int | None = DEFAULT_MAX_POINTS,
    grid=None,
) -> TestReport:
    """supLM statistic of one variant. ``fit`` must be a converged :class:`ArmaFit`."""
    variant = Variant.parse(variant)
    return test_statistics(series, fit, (variant,), d, band, max_points, grid)[variant]


def pvalue(report: TestReport, table, match: str = "exact") -> float:
    """Upper-tail probability of ``report.statistic`` under the tabulated null.

    ``match="dimension"`` accepts any table whose tested-block dimension
    equals the report's (the null law depends on that dimension only).
    """
    return table.pvalue(report.statistic, report.variant, report.p, report.q, report.grid_band, match=match)


def check_table_match(table, variant, p, q, band, match="exact"):
    variant = Variant.parse(variant)
    if tuple(map(float, table.band)) != tuple(map(float, band)):
        raise TableMismatchError(f"table band {table.band} differs from test band {band}")
    if match == "exact":
        if (table.variant, table.p, table.q) != (variant, p, q):
            raise TableMismatchError(
                f"table is for {table.variant.value}({table.p},{table.q}), statistic is {variant.value}({p},{q})"
            )
    elif match == "dimension":
        if table.psi_dim != variant.psi_dim(p, q):
            raise TableMismatchError("table tests a block of a different dimension")
    else:
        raise ValueError(f"unknown match mode {match!r}")
