"""Null quantile tables: Monte Carlo tabulation, persistence and lookup."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from ._montecarlo import FixedOrder, ReplicateTask, parallel_map
from .dgp import ArmaSpec
from .errors import ChecksumError, TableError, TableMismatchError, TabulationError, ValidationError
from .score import Variant
from .suplm import DEFAULT_BAND

__all__ = [
    "QuantileTable",
    "KNOT_PROBS",
    "SCHEMA_VERSION",
    "default_generator",
    "tabulate",
    "tabulate_variants",
    "save_table",
    "load_table",
    "table_filename",
    "bundled_defaults",
    "find_table",
    "lookup_bundled",
    "brownian_bridge_table",
    "TABLE_DIR_ENV",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TABLE_DIR_ENV = "TARMATEST_TABLE_DIR"
KNOT_PROBS = tuple(np.round(np.r_[np.arange(1, 100) / 100, 0.995, 0.999], 3))
MAX_REDRAW_RATE = 0.01


@dataclass(frozen=True, eq=False)
class QuantileTable:
    """Tabulated null quantiles of one statistic for one ARMA order and band.

    ``knots`` is an (k, 2) array of (probability, quantile) rows sorted by
    probability. ``full_sample`` holds all B sorted statistics when available.
    """

    variant: Variant
    p: int
    q: int
    band: tuple[float, float]
    n_sim: int | None
    B: int
    generator: ArmaSpec | None
    knots: np.ndarray
    full_sample: np.ndarray | None = None
    seed: int | None = None
    source: str = "simulated"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))
        knots = np.asarray(self.knots, dtype=float).reshape(-1, 2)
        if knots.shape[0] == 0:
            raise ValidationError("a table needs at least one knot")
        if np.any(np.diff(knots[:, 0]) <= 0) or np.any(np.diff(knots[:, 1]) <= 0):
            raise ValidationError("knot probabilities and quantiles must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        if self.full_sample is not None:
            fs = np.sort(np.asarray(self.full_sample, dtype=float))
            if fs.size != self.B:
                raise ValidationError(f"full_sample has {fs.size} values, B = {self.B}")
            object.__setattr__(self, "full_sample", fs)

    @property
    def psi_dim(self) -> int:
        return self.variant.psi_dim(self.p, self.q)

    def quantile(self, prob: float) -> float:
        """Stored knot at ``prob`` (type-7 quantile of ``full_sample`` otherwise)."""
        hit = np.flatnonzero(np.isclose(self.knots[:, 0], prob, rtol=0, atol=1e-12))
        if hit.size:
            return float(self.knots[hit[0], 1])
        if self.full_sample is not None:
            return float(np.quantile(self.full_sample, prob))
        raise KeyError(f"no knot at probability {prob}")

    def cdf(self, x: float) -> float:
        """Estimated null CDF at ``x``.

        With a full sample this is the inverse of the type-7 quantile function,
        so the CDF evaluated at a knot returns the knot's probability exactly.
        Otherwise the knots are interpolated linearly; below the lowest knot the
        CDF is 0 and above the highest it is 1.
        """
        if self.full_sample is not None and self.full_sample.size > 1:
            xs = self.full_sample
            probs = np.arange(xs.size) / (xs.size - 1)
            # right-continuous at ties: take the last index with value <= x
            i = np.searchsorted(xs, x, side="right") - 1
            if i < 0:
                return 0.0
            if i >= xs.size - 1:
                return 1.0
            lo, hi = xs[i], xs[i + 1]
            return float(probs[i] + (x - lo) / (hi - lo) * (probs[i + 1] - probs[i]))
        pr, qv = self.knots[:, 0], self.knots[:, 1]
        if x < qv[0]:
            return 0.0
        if x > qv[-1]:
            return 1.0
        return float(np.interp(x, qv, pr))

    def pvalue(self, statistic: float, variant=None, p=None, q=None, band=None, match: str = "exact") -> float:
        """Upper-tail probability ``1 - F(statistic)`` clipped to ``[1/(B+1), 1 - 1/(B+1)]``.

        When ``variant``/``p``/``q``/``band`` are given the table is checked
        against them first (see :func:`tarmatest.suplm.check_table_match`).
        """
        if variant is not None:
            from .suplm import check_table_match

            check_table_match(self, variant, p, q, band if band is not None else self.band, match)
        eps = 1.0 / (self.B + 1)
        pv = 1.0 - self.cdf(float(statistic))
        return float(min(max(pv, eps), 1.0 - eps))

    def matches(self, variant, p: int, q: int, band, match: str = "exact") -> bool:
        from .suplm import check_table_match

        try:
            check_table_match(self, variant, p, q, band, match)
        except TableMismatchError:
            return False
        return True

    def with_source(self, source: str) -> "QuantileTable":
        return replace(self, source=source)

    def __eq__(self, other):
        if not isinstance(other, QuantileTable):
            return NotImplemented
        return _payload(self) == _payload(other)

    def __hash__(self):
        return hash((self.variant, self.p, self.q, self.band, self.B))


def default_generator(p: int, q: int) -> ArmaSpec:
    """Null generator used for tabulation: AR polynomial (1-0.3z)^p, MA polynomial (1+0.3z)^q.

    AR and MA roots sit on opposite sides of zero, so over-parameterised fits
    rarely drift to a cancelling pair and redraws stay rare for p, q >= 2.
    Larger roots inflate the finite-sample quantiles of high-order tables.
    """

    def expand(root_coef, order):
        poly = np.array([1.0])
        for _ in range(order):
            poly = np.convolve(poly, [1.0, -root_coef])
        return -poly[1:]

    return ArmaSpec(np.r_[0.0, expand(0.3, p)], expand(-0.3, q), 1.0)


def _knots_from_sample(sample: np.ndarray) -> np.ndarray:
    probs = np.array(KNOT_PROBS)
    return np.column_stack([probs, np.quantile(sample, probs)])


def tabulate_variants(
    p: int,
    q: int,
    variants=(Variant.AR_ONLY, Variant.GENERAL),
    band=DEFAULT_BAND,
    generator_spec: ArmaSpec | None = None,
    n_sim: int = 1000,
    B: int = 10000,
    seed: int = 0,
    parallelism: int | None = 1,
    burn_in: int = 200,
    max_points: int | None = None,
    d: int = 1,
) -> dict[Variant, QuantileTable]:
    """Tabulate several variants from the same B simulated null series.

    Replicates whose fit fails are redrawn from a fresh substream of the same
    replicate stream. Thresholds are searched over every distinct delayed
    value in the band unless ``max_points`` is given.
    """
    if B < 100:
        raise ValidationError("B must be at least 100")
    variants = tuple(Variant.parse(v) for v in variants)
    gen = (generator_spec or default_generator(p, q)).validate()
    task = ReplicateTask(gen, int(n_sim), int(burn_in), int(seed), FixedOrder(p, q), variants, tuple(band), d, max_points)
    results = parallel_map(task, range(B), parallelism)
    redraws = sum(r.redraws for r in results)
    abandoned = [r for r in results if not r.stats]
    logger.info("tabulation (p=%d, q=%d): %d redraws over B=%d", p, q, redraws, B)
    if abandoned or redraws >= MAX_REDRAW_RATE * B:
        raise TabulationError(
            f"{redraws} redraws for B={B} (limit {MAX_REDRAW_RATE:.0%}); check the generator specification"
        )
    out = {}
    for v in variants:
        sample = np.sort([r.stats[v.value][0] for r in results])
        out[v] = QuantileTable(
            v, p, q, band, n_sim, B, gen, _knots_from_sample(sample), sample, seed, "simulated",
            {"redraws": redraws},
        )
    return out


def tabulate(
    variant,
    p: int,
    q: int,
    band=DEFAULT_BAND,
    generator_spec: ArmaSpec | None = None,
    n_sim: int = 1000,
    B: int = 10000,
    seed: int = 0,
    parallelism: int | None = 1,
    **kwargs,
) -> QuantileTable:
    """Simulate the null law of one statistic and return its quantile table."""
    variant = Variant.parse(variant)
    return tabulate_variants(p, q, (variant,), band, generator_spec, n_sim, B, seed, parallelism, **kwargs)[variant]


# ---------------------------------------------------------------- persistence

def _payload(table: QuantileTable) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "variant": table.variant.value,
        "p": int(table.p),
        "q": int(table.q),
        "band": [table.band[0], table.band[1]],
        "n_sim": table.n_sim,
        "B": int(table.B),
        "generator": table.generator.to_dict() if table.generator is not None else None,
        "seed": table.seed,
        "knots": [[float(a), float(b)] for a, b in table.knots],
        "full_sample": None if table.full_sample is None else [float(x) for x in table.full_sample],
    }


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def table_filename(variant, p: int, q: int, band) -> str:
    variant = Variant.parse(variant)
    return f"{variant.value}_p{p}q{q}_b{float(band[0]):g}-{float(band[1]):g}.qt.json"


def save_table(table: QuantileTable, path) -> Path:
    """Write ``table`` as JSON; a directory path gets the conventional file name."""
    path = Path(path)
    if path.is_dir():
        path = path / table_filename(table.variant, table.p, table.q, table.band)
    payload = _payload(table)
    payload["checksum"] = _digest(payload)
    path.write_text(json.dumps(payload, separators=(",", ":")) + "\n")
    return path


def load_table(path) -> QuantileTable:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"{path}: unreadable or truncated table file ({exc})") from exc
    if not isinstance(raw, dict) or "checksum" not in raw:
        raise ChecksumError(f"{path}: missing checksum")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise TableError(f"{path}: schema version {version!r}, expected {SCHEMA_VERSION}")
    checksum = raw.pop("checksum")
    if _digest(raw) != checksum:
        raise ChecksumError(f"{path}: checksum mismatch")
    gen = raw["generator"]
    return QuantileTable(
        variant=raw["variant"],
        p=raw["p"],
        q=raw["q"],
        band=tuple(raw["band"]),
        n_sim=raw["n_sim"],
        B=raw["B"],
        generator=ArmaSpec.from_dict(gen) if gen is not None else None,
        knots=np.array(raw["knots"], dtype=float),
        full_sample=None if raw["full_sample"] is None else np.array(raw["full_sample"], dtype=float),
        seed=raw["seed"],
        source="file",
    )


# ---------------------------------------------------------------- bundled tables

_PUBLISHED_PROBS = (0.90, 0.95, 0.99, 0.999)
# (p, q): (AR-only quantiles, general quantiles), threshold band 25th-75th percentiles
_PUBLISHED = {
    (1, 1): ((9.61, 11.37, 15.19, 20.38), (11.64, 13.44, 17.42, 22.83)),
    (2, 1): ((11.53, 13.41, 17.22, 22.17), (13.48, 15.46, 19.63, 25.60)),
    (3, 1): ((13.74, 15.71, 19.98, 25.04), (15.59, 17.61, 21.91, 27.98)),
    (4, 1): ((15.65, 17.68, 22.25, 27.44), (17.42, 19.52, 24.02, 29.94)),
    (1, 2): ((9.64, 11.47, 15.50, 20.25), (13.69, 15.57, 19.67, 25.07)),
    (2, 2): ((11.71, 13.48, 17.61, 22.49), (15.59, 17.58, 21.95, 28.17)),
    (3, 2): ((13.46, 15.35, 19.33, 25.06), (17.13, 19.18, 23.54, 29.78)),
    (4, 2): ((15.55, 17.58, 21.82, 27.80), (18.97, 21.21, 26.42, 31.92)),
}


@lru_cache(maxsize=1)
def _bundled() -> tuple[QuantileTable, ...]:
    out = []
    for (p, q), rows in _PUBLISHED.items():
        for variant, vals in zip((Variant.AR_ONLY, Variant.GENERAL), rows):
            knots = np.column_stack([_PUBLISHED_PROBS, vals])
            out.append(QuantileTable(variant, p, q, (0.25, 0.75), 1000, 10000, None, knots, None, None, "paper"))
    return tuple(out)


def bundled_defaults() -> frozenset[QuantileTable]:
    """Published knots (90/95/99/99.9%) for orders p=1..4, q=1..2, band (0.25, 0.75)."""
    return frozenset(_bundled())


def lookup_bundled(variant, p: int, q: int, band=DEFAULT_BAND, match: str = "exact") -> QuantileTable | None:
    for t in _bundled():
        if t.matches(variant, p, q, band, match):
            return t
    return None


@lru_cache(maxsize=32)
def brownian_bridge_table(dim: int, band=DEFAULT_BAND, B: int = 10000, steps: int = 1000, seed: int = 20210) -> QuantileTable:
    """Simulated sup of the squared standardised Brownian bridge of dimension ``dim``.

    This is the large-sample law of the statistic when the tested block has
    ``dim`` components; it serves orders not covered by a tabulated table.
    The returned table is keyed as an AR-only table with ``p = dim - 1, q = 0``.
    """
    if dim < 1:
        raise ValidationError("dimension must be positive")
    lo, hi = band
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, dim], dtype=np.uint64)))
    frac = np.arange(1, steps + 1) / steps
    sel = (frac >= lo) & (frac <= hi)
    out = np.empty(B)
    batch = max(1, 200_000 // (steps * dim))
    for start in range(0, B, batch):
        k = min(batch, B - start)
        W = np.cumsum(rng.standard_normal((k, steps, dim)), axis=1) / np.sqrt(steps)
        bridge = W[:, sel, :] - frac[sel][None, :, None] * W[:, -1:, :]
        stat = (bridge**2).sum(axis=2) / (frac[sel] * (1 - frac[sel]))
        out[start : start + k] = stat.max(axis=1)
    out.sort()
    return QuantileTable(Variant.AR_ONLY, dim - 1, 0, band, None, B, None, _knots_from_sample(out), out, seed, "asymptotic")


def _env_tables(variant, p, q, band):
    root = os.environ.get(TABLE_DIR_ENV)
    if not root:
        return None
    path = Path(root) / table_filename(variant, p, q, band)
    return load_table(path) if path.is_file() else None


def find_table(variant, p: int, q: int, band=DEFAULT_BAND, allow_asymptotic: bool = True) -> QuantileTable | None:
    """Best available table for a statistic.

    Search order: a file named by convention in ``$TARMATEST_TABLE_DIR``, the
    bundled table for the same order, a bundled table testing a block of the
    same dimension, then the Brownian-bridge table of that dimension.
    """
    variant = Variant.parse(variant)
    band = (float(band[0]), float(band[1]))
    t = _env_tables(variant, p, q, band)
    if t is not None:
        return t
    for mode in ("exact", "dimension"):
        t = lookup_bundled(variant, p, q, band, mode)
        if t is not None:
            return t
    if allow_asymptotic:
        return brownian_bridge_table(variant.psi_dim(p, q), band)
    return None
