"""Seedable simulation of ARMA, TARMA and related data generating processes.

All simulators share one convention: pre-sample values of X and of the
innovations are zero, the first ``burn_in`` values are discarded, and a
threshold term whose delayed value would fall before the start of the
recursion contributes nothing.

Innovations come either from an :class:`RngStream` (standard Gaussian scaled
by ``sqrt(sigma2)``) or from an explicit ``innovations`` array of length
``burn_in + n``, which is what the hand-checked unit tests use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .errors import ValidationError

__all__ = [
    "ArmaSpec",
    "TarmaSpec",
    "LocalAltSpec",
    "TimeSeries",
    "RngStream",
    "NAMED_DGPS",
    "LINEAR_DGPS",
    "simulate_arma",
    "simulate_tarma",
    "simulate_local_alternative",
    "simulate_named_dgp",
    "ar_roots",
    "ma_roots",
]

DEFAULT_BURN_IN = 200
ROOT_MARGIN = 1e-8
COMMON_ROOT_TOL = 1e-6


def _poly_roots(coefs: np.ndarray) -> np.ndarray:
    """Roots of ``1 - c1 z - ... - ck z^k``."""
    coefs = np.asarray(coefs, dtype=float)
    if coefs.size == 0 or not np.any(coefs):
        return np.empty(0, dtype=complex)
    # np.roots wants highest degree first and strips leading zeros itself
    return np.roots(np.r_[-coefs[::-1], 1.0])


def ar_roots(phi: Sequence[float]) -> np.ndarray:
    """Roots of the AR polynomial; ``phi`` includes the intercept at index 0."""
    return _poly_roots(np.asarray(phi, dtype=float)[1:])


def ma_roots(theta: Sequence[float]) -> np.ndarray:
    return _poly_roots(theta)


def roots_ok(coefs: np.ndarray, margin: float = ROOT_MARGIN) -> bool:
    roots = _poly_roots(coefs)
    return bool(np.all(np.abs(roots) > 1.0 + margin))


@dataclass(frozen=True)
class ArmaSpec:
    """ARMA(p, q) with intercept.

    ``phi = (phi_10, phi_11, ..., phi_1p)``, ``theta = (theta_11, ..., theta_1q)``
    with the sign convention ``X_t = phi_10 + sum phi_1k X_{t-k} + e_t - sum theta_1s e_{t-s}``.
    """

    phi: np.ndarray
    theta: np.ndarray = field(default_factory=lambda: np.empty(0))
    sigma2: float = 1.0

    def __post_init__(self):
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float)).copy()
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        if phi.ndim != 1 or phi.size < 1:
            raise ValidationError("phi must hold at least the intercept")
        if theta.ndim != 1:
            raise ValidationError("theta must be a vector")
        phi.flags.writeable = False
        theta.flags.writeable = False
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def p(self) -> int:
        return self.phi.size - 1

    @property
    def q(self) -> int:
        return self.theta.size

    @property
    def zeta(self) -> np.ndarray:
        return np.r_[self.phi, self.theta]

    @classmethod
    def from_zeta(cls, zeta, p: int, q: int, sigma2: float = 1.0) -> "ArmaSpec":
        zeta = np.asarray(zeta, dtype=float)
        return cls(zeta[: p + 1], zeta[p + 1 : p + 1 + q], sigma2)

    def is_feasible(self) -> bool:
        """Stationary and invertible (ignores the common-root condition)."""
        return roots_ok(self.phi[1:]) and roots_ok(self.theta)

    def validate(self) -> "ArmaSpec":
        if not (np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.theta))):
            raise ValidationError("non-finite ARMA coefficients")
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ValidationError(f"sigma2 must be positive, got {self.sigma2}")
        if not roots_ok(self.phi[1:]):
            raise ValidationError("AR polynomial has a root on or inside the unit circle")
        if not roots_ok(self.theta):
            raise ValidationError("MA polynomial has a root on or inside the unit circle")
        ra, rm = ar_roots(self.phi), ma_roots(self.theta)
        if ra.size and rm.size and np.min(np.abs(ra[:, None] - rm[None, :])) < COMMON_ROOT_TOL:
            raise ValidationError("AR and MA polynomials share a common root")
        return self

    def to_dict(self) -> dict:
        return {"phi": self.phi.tolist(), "theta": self.theta.tolist(), "sigma2": self.sigma2}

    @classmethod
    def from_dict(cls, d: dict) -> "ArmaSpec":
        return cls(d["phi"], d.get("theta", []), d.get("sigma2", 1.0))

    def __eq__(self, other):
        if not isinstance(other, ArmaSpec):
            return NotImplemented
        return (
            np.array_equal(self.phi, other.phi)
            and np.array_equal(self.theta, other.theta)
            and self.sigma2 == other.sigma2
        )

    def __hash__(self):
        return hash((self.phi.tobytes(), self.theta.tobytes(), self.sigma2))


@dataclass(frozen=True)
class TarmaSpec:
    """Two-regime TARMA: ``base`` plus the ``psi`` block switched on when X_{t-d} <= r.

    ``psi = (Psi_10, Psi_11..Psi_1p[, Psi_21..Psi_2q])``; the MA part enters
    with a minus sign, as the base MA coefficients do.
    """

    base: ArmaSpec
    psi: np.ndarray
    r: float = 0.0
    d: int = 1
    psi_ma_present: bool = False

    def __post_init__(self):
        psi = np.atleast_1d(np.asarray(self.psi, dtype=float)).copy()
        psi.flags.writeable = False
        object.__setattr__(self, "psi", psi)

    def validate(self) -> "TarmaSpec":
        p, q = self.base.p, self.base.q
        expected = p + q + 1 if self.psi_ma_present else p + 1
        if self.psi.size != expected:
            raise ValidationError(f"psi must have length {expected}, got {self.psi.size}")
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise ValidationError("delay d must be a positive integer")
        self.base.validate()
        lower = ArmaSpec(self.base.phi + self.psi[: p + 1], self.base.theta + self.psi_ma, self.base.sigma2)
        if not (roots_ok(lower.phi[1:]) and roots_ok(lower.theta)):
            raise ValidationError("switched regime violates the root conditions")
        return self

    @property
    def psi_ma(self) -> np.ndarray:
        p, q = self.base.p, self.base.q
        if self.psi_ma_present:
            return self.psi[p + 1 : p + 1 + q]
        return np.zeros(q)

    def _key(self):
        return (self.base, self.psi.tobytes(), float(self.r), int(self.d), bool(self.psi_ma_present))

    def __eq__(self, other):
        if not isinstance(other, TarmaSpec):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


@dataclass(frozen=True)
class LocalAltSpec:
    """Local alternative: TARMA whose switched block is ``h / sqrt(n)``."""

    base: ArmaSpec
    h: np.ndarray
    r0: float = 0.0
    d: int = 1
    n: int = 100

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=float)).copy()
        h.flags.writeable = False
        object.__setattr__(self, "h", h)

    @property
    def ma_switching(self) -> bool:
        return self.h.size == self.base.p + self.base.q + 1

    def validate(self) -> "LocalAltSpec":
        p, q = self.base.p, self.base.q
        if self.h.size not in (p + 1, p + q + 1):
            raise ValidationError(f"h must have length {p + 1} or {p + q + 1}")
        if self.n < 1:
            raise ValidationError("n must be positive")
        return self

    def as_tarma(self) -> TarmaSpec:
        return TarmaSpec(self.base, self.h / np.sqrt(self.n), self.r0, self.d, self.ma_switching)

    def _key(self):
        return (self.base, self.h.tobytes(), float(self.r0), int(self.d), int(self.n))

    def __eq__(self, other):
        if not isinstance(other, LocalAltSpec):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


@dataclass(frozen=True)
class TimeSeries:
    """Finite real-valued observations with an optional time index."""

    values: np.ndarray
    index: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1:
            raise ValidationError("a series needs at least one observation")
        if not np.all(np.isfinite(v)):
            raise ValidationError("series contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def as_array(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=float).ravel()


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, replicate_id)``.

    Backed by Philox: the key is the pair itself, so replicate k draws the same
    numbers whichever worker runs it. ``substream`` selects an independent
    stream for the same replicate (used when a replicate must be redrawn).
    """

    seed: int
    replicate_id: int = 0

    def generator(self, substream: int = 0) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.replicate_id % 2**64], dtype=np.uint64)
        counter = np.array([0, 0, 0, substream % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))


InnovationSampler = Callable[[np.random.Generator, int], np.ndarray]


def gaussian_innovations(gen: np.random.Generator, size: int) -> np.ndarray:
    return gen.standard_normal(size)


def _draw(rng, size: int, sampler: InnovationSampler) -> np.ndarray:
    if rng is None:
        raise ValidationError("either rng or innovations must be given")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return np.asarray(sampler(gen, size), dtype=float)


def _innovations(rng, innovations, size, scale, sampler) -> np.ndarray:
    if innovations is not None:
        eps = np.asarray(innovations, dtype=float).ravel()
        if eps.size != size:
            raise ValidationError(f"expected {size} innovations, got {eps.size}")
        return eps
    return _draw(rng, size, sampler) * scale


@njit(cache=True)
def _tarma_kernel(eps, phi, theta, psi_ar, psi_ma, r, d, switching):
    n = eps.size
    p = phi.size - 1
    q = theta.size
    x = np.zeros(n)
    for t in range(n):
        acc = phi[0]
        for k in range(1, p + 1):
            if t - k >= 0:
                acc += phi[k] * x[t - k]
        acc += eps[t]
        for s in range(1, q + 1):
            if t - s >= 0:
                acc -= theta[s - 1] * eps[t - s]
        if switching and t - d >= 0 and x[t - d] <= r:
            reg = psi_ar[0]
            for k in range(1, p + 1):
                if t - k >= 0:
                    reg += psi_ar[k] * x[t - k]
            for s in range(1, q + 1):
                if t - s >= 0:
                    reg -= psi_ma[s - 1] * eps[t - s]
            acc += reg
        x[t] = acc
    return x


def _check_n(n: int, burn_in: int):
    if n < 1:
        raise ValidationError("n must be >= 1")
    if burn_in < 0:
        raise ValidationError("burn_in must be >= 0")


def simulate_arma(
    spec: ArmaSpec,
    n: int,
    burn_in: int = DEFAULT_BURN_IN,
    rng: RngStream | np.random.Generator | None = None,
    *,
    innovations=None,
    sampler: InnovationSampler = gaussian_innovations,
) -> TimeSeries:
    """Simulate ``n`` observations of a linear ARMA after ``burn_in`` discarded ones."""
    _check_n(n, burn_in)
    spec.validate()
    eps = _innovations(rng, innovations, n + burn_in, np.sqrt(spec.sigma2), sampler)
    empty = np.zeros(0)
    x = _tarma_kernel(eps, spec.phi, spec.theta, empty, empty, 0.0, 1, False)
    return TimeSeries(x[burn_in:])


def simulate_tarma(
    spec: TarmaSpec,
    n: int,
    burn_in: int = DEFAULT_BURN_IN,
    rng: RngStream | np.random.Generator | None = None,
    *,
    innovations=None,
    sampler: InnovationSampler = gaussian_innovations,
) -> TimeSeries:
    _check_n(n, burn_in)
    spec.validate()
    base = spec.base
    eps = _innovations(rng, innovations, n + burn_in, np.sqrt(base.sigma2), sampler)
    x = _tarma_kernel(
        eps, base.phi, base.theta, spec.psi[: base.p + 1].copy(), spec.psi_ma.copy(), float(spec.r), int(spec.d), True
    )
    return TimeSeries(x[burn_in:])


def simulate_local_alternative(
    spec: LocalAltSpec,
    burn_in: int = DEFAULT_BURN_IN,
    rng: RngStream | np.random.Generator | None = None,
    *,
    innovations=None,
    sampler: InnovationSampler = gaussian_innovations,
) -> TimeSeries:
    """Simulate ``spec.n`` observations with switched block ``h / sqrt(spec.n)``."""
    spec.validate()
    return simulate_tarma(spec.as_tarma(), spec.n, burn_in, rng, innovations=innovations, sampler=sampler)


# --- named data generating processes ------------------------------------------------

def _linear(phi, theta=()):
    return ArmaSpec(np.r_[0.0, phi], theta, 1.0)


# sign convention: X_t = ... - theta_s e_{t-s}, so "+0.7 e_{t-1}" is theta = -0.7
LINEAR_DGPS: dict[str, ArmaSpec] = {
    "AR5": _linear([-0.6, -0.4, -0.3, -0.4, -0.5]),
    "AR2.1": _linear([0.75, -0.125]),
    "AR2.2": _linear([1.35, -0.55]),
    "ARMA21.1": _linear([0.75, -0.125], [0.7]),
    "ARMA21.2": _linear([0.75, -0.125], [-0.7]),
    "ARMA22": _linear([0.75, -0.125], [-0.7, 0.4]),
    "MA2": _linear([], [-0.7, 0.125]),
}


def _tar3(eps):
    x = np.zeros(eps.size)
    for t in range(eps.size):
        x1 = x[t - 1] if t >= 1 else 0.0
        x2 = x[t - 2] if t >= 2 else 0.0
        x3 = x[t - 3] if t >= 3 else 0.0
        sign = 1.0 if (t < 1 or x1 <= 0.0) else -1.0
        x[t] = sign * (0.3 * x1 - 0.7 * x2 + 0.6 * x3) + eps[t]
    return x


def _3tar1(eps):
    x = np.zeros(eps.size)
    for t in range(eps.size):
        x1 = x[t - 1] if t >= 1 else 0.0
        slope = 1.0 if -1.0 < x1 <= 1.0 else 0.5
        x[t] = 0.3 + slope * x1 + eps[t]
    return x


def _nlma(coef):
    def f(eps):
        x = eps.copy()
        x[1:] += coef * eps[:-1] ** 2
        return x

    return f


def _bil1(eps):
    x = np.zeros(eps.size)
    for t in range(eps.size):
        x1 = x[t - 1] if t >= 1 else 0.0
        e1 = eps[t - 1] if t >= 1 else 0.0
        x[t] = 0.5 - 0.4 * x1 + 0.4 * e1 * x1 + eps[t]
    return x


def _bil2(eps):
    x = np.zeros(eps.size)
    for t in range(eps.size):
        x2 = x[t - 2] if t >= 2 else 0.0
        e1 = eps[t - 1] if t >= 1 else 0.0
        x[t] = 0.7 * e1 * x2 + eps[t]
    return x


def _expar(coef):
    def f(eps):
        x = np.zeros(eps.size)
        for t in range(eps.size):
            x1 = x[t - 1] if t >= 1 else 0.0
            x[t] = 0.3 + coef * np.exp(-x1 * x1) * x1 + eps[t]
        return x

    return f


_NONLINEAR = {
    "TAR3": _tar3,
    "3TAR1": _3tar1,
    "NLMA.1": _nlma(-0.8),
    "NLMA.2": _nlma(0.8),
    "BIL.1": _bil1,
    "BIL.2": _bil2,
    "EXPAR.1": _expar(10.0),
    "EXPAR.2": _expar(100.0),
}

NAMED_DGPS: tuple[str, ...] = tuple(LINEAR_DGPS) + tuple(_NONLINEAR) + ("NLAR",)


def _logistic(x0: float, size: int) -> np.ndarray:
    x = np.empty(size)
    prev = x0
    for t in range(size):
        prev = 4.0 * prev * (1.0 - prev)
        x[t] = prev
    return x


def simulate_named_dgp(
    name: str,
    n: int,
    burn_in: int = DEFAULT_BURN_IN,
    rng: RngStream | np.random.Generator | None = None,
    *,
    innovations=None,
    x0: float | None = None,
) -> TimeSeries:
    """Simulate one of the registered linear or non-linear benchmark processes.

    ``NLAR`` is the noiseless logistic map; its starting value is ``x0`` or a
    uniform(0, 1) draw from ``rng``.
    """
    _check_n(n, burn_in)
    if name not in NAMED_DGPS:
        raise ValidationError(f"unknown DGP {name!r}; choose from {', '.join(NAMED_DGPS)}")
    size = n + burn_in
    if name == "NLAR":
        if x0 is None:
            gen = rng.generator() if isinstance(rng, RngStream) else rng
            if gen is None:
                raise ValidationError("NLAR needs rng or x0")
            x0 = gen.uniform(0.0, 1.0)
        return TimeSeries(_logistic(float(x0), size)[burn_in:])
    if name in LINEAR_DGPS:
        # simulated as printed: only stationarity is needed to generate data,
        # and ARMA22's MA polynomial is not invertible
        spec = LINEAR_DGPS[name]
        eps = _innovations(rng, innovations, size, 1.0, gaussian_innovations)
        empty = np.zeros(0)
        return TimeSeries(_tarma_kernel(eps, spec.phi, spec.theta, empty, empty, 0.0, 1, False)[burn_in:])
    eps = _innovations(rng, innovations, size, 1.0, gaussian_innovations)
    return TimeSeries(_NONLINEAR[name](eps)[burn_in:])
