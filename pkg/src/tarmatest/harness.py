"""Monte Carlo experiments: size, power, mis-specification and local-alternative power growth.

Every experiment writes an append-only JSON-lines report: a header with the
full configuration, one record per replicate and variant, and a trailing
summary record. A partial report is resumed by replicate id.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._montecarlo import (
    FixedOrder,
    HannanRissanenOrder,
    ReplicateResult,
    ReplicateTask,
    order_policy_from_dict,
    parallel_map,
    variants_tuple,
)
from .dgp import LINEAR_DGPS, NAMED_DGPS, ArmaSpec, LocalAltSpec, TarmaSpec
from .errors import ResumeMismatchError, ValidationError
from .score import Variant
from .suplm import DEFAULT_BAND
from .tables import QuantileTable, default_generator, find_table, load_table, tabulate_variants

__all__ = [
    "FixedOrder",
    "HannanRissanenOrder",
    "TableSource",
    "ExperimentConfig",
    "VariantSummary",
    "ExperimentReport",
    "run_experiment",
    "run_size_experiment",
    "run_power_experiment",
    "run_misspec_suite",
    "run_power_growth",
    "size_corrected_rate",
    "dgp_to_dict",
    "dgp_from_dict",
]

logger = logging.getLogger(__name__)

TN_PROBS = (0.5, 0.9, 0.95, 0.99)
# paired-null replicates use stream ids shifted by this offset
NULL_STREAM_OFFSET = 1 << 40


@dataclass(frozen=True)
class TableSource:
    """Where p-value tables come from: ``bundled``, ``file`` (a path) or ``tabulate`` (on the fly, B replicates)."""

    kind: str = "bundled"
    path: str | None = None
    B: int | None = None

    @classmethod
    def bundled(cls) -> "TableSource":
        return cls("bundled")

    @classmethod
    def file(cls, path) -> "TableSource":
        return cls("file", str(path))

    @classmethod
    def tabulate_on_the_fly(cls, B: int) -> "TableSource":
        return cls("tabulate", None, int(B))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "path": self.path, "B": self.B}


def _is_linear(dgp) -> bool:
    return isinstance(dgp, ArmaSpec) or (isinstance(dgp, str) and dgp in LINEAR_DGPS)


def dgp_to_dict(dgp) -> dict:
    if isinstance(dgp, str):
        return {"kind": "named", "name": dgp}
    if isinstance(dgp, LocalAltSpec):
        return {"kind": "local", "base": dgp.base.to_dict(), "h": list(map(float, dgp.h)),
                "r0": float(dgp.r0), "d": int(dgp.d), "n": int(dgp.n)}
    if isinstance(dgp, TarmaSpec):
        return {"kind": "tarma", "base": dgp.base.to_dict(), "psi": list(map(float, dgp.psi)),
                "r": float(dgp.r), "d": int(dgp.d), "psi_ma_present": bool(dgp.psi_ma_present)}
    if isinstance(dgp, ArmaSpec):
        return {"kind": "arma", **dgp.to_dict()}
    raise TypeError(f"unsupported data-generating process {dgp!r}")


def dgp_from_dict(d: dict):
    kind = d["kind"]
    if kind == "named":
        return d["name"]
    if kind == "arma":
        return ArmaSpec.from_dict({k: v for k, v in d.items() if k != "kind"})
    if kind == "tarma":
        return TarmaSpec(ArmaSpec.from_dict(d["base"]), d["psi"], d["r"], d["d"], d["psi_ma_present"])
    if kind == "local":
        return LocalAltSpec(ArmaSpec.from_dict(d["base"]), d["h"], d["r0"], d["d"], d["n"])
    raise ValueError(f"unknown dgp kind {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo design.

    ``paired_null`` (an ArmaSpec) requests size-corrected power: critical
    values are taken from the same number of replicates simulated under it.
    """

    name: str
    dgp: object
    n_obs: int
    replicates: int
    nominal_level: float = 0.05
    variants: tuple = (Variant.AR_ONLY, Variant.GENERAL)
    order_policy: object = FixedOrder(1, 1)
    band: tuple = DEFAULT_BAND
    d: int = 1
    seed: int = 0
    table_source: TableSource = TableSource()
    burn_in: int = 200
    max_points: int | None = None
    paired_null: ArmaSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "variants", variants_tuple(self.variants))
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))
        if isinstance(self.dgp, str) and self.dgp not in NAMED_DGPS:
            raise ValidationError(f"unknown named process {self.dgp!r}")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if not 0.0 < self.nominal_level <= 1.0:
            raise ValidationError("nominal_level must lie in (0, 1]")
        if self.n_obs < 1:
            raise ValidationError("n_obs must be positive")
        if not self.variants:
            raise ValidationError("at least one variant is required")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dgp": dgp_to_dict(self.dgp),
            "n_obs": int(self.n_obs),
            "replicates": int(self.replicates),
            "nominal_level": float(self.nominal_level),
            "variants": [v.value for v in self.variants],
            "order_policy": self.order_policy.to_dict(),
            "band": list(self.band),
            "d": int(self.d),
            "seed": int(self.seed),
            "table_source": self.table_source.to_dict(),
            "burn_in": int(self.burn_in),
            "max_points": self.max_points,
            "paired_null": None if self.paired_null is None else self.paired_null.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        ts = d.get("table_source") or {}
        return cls(
            name=d["name"],
            dgp=dgp_from_dict(d["dgp"]),
            n_obs=d["n_obs"],
            replicates=d["replicates"],
            nominal_level=d.get("nominal_level", 0.05),
            variants=tuple(d.get("variants", ("sLM", "sLMg"))),
            order_policy=order_policy_from_dict(d.get("order_policy", {"kind": "fixed", "p": 1, "q": 1})),
            band=tuple(d.get("band", DEFAULT_BAND)),
            d=d.get("d", 1),
            seed=d.get("seed", 0),
            table_source=TableSource(ts.get("kind", "bundled"), ts.get("path"), ts.get("B")),
            burn_in=d.get("burn_in", 200),
            max_points=d.get("max_points"),
            paired_null=None if d.get("paired_null") is None else ArmaSpec.from_dict(d["paired_null"]),
        )

    def task(self, dgp=None) -> ReplicateTask:
        return ReplicateTask(dgp if dgp is not None else self.dgp, self.n_obs, self.burn_in, self.seed,
                             self.order_policy, self.variants, self.band, self.d, self.max_points)


@dataclass
class VariantSummary:
    variant: str
    replicates: int
    rejections: int
    rejection_rate: float
    se: float
    mean_tn: float
    tn_quantiles: dict
    critical_value: float | None = None
    null_sorted: list | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    kind: str
    variants: dict  # variant value -> VariantSummary
    failures: int
    redraws: int
    orders: dict
    runtime: float = 0.0
    checks: dict = field(default_factory=dict)

    def rate(self, variant) -> float:
        return self.variants[Variant.parse(variant).value].rejection_rate

    def se(self, variant) -> float:
        return self.variants[Variant.parse(variant).value].se

    def summary_record(self) -> dict:
        """Deterministic summary (no timing), as written to the report file."""
        return {
            "type": "summary",
            "experiment": self.config.name,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "variants": {k: v.to_dict() for k, v in sorted(self.variants.items())},
            "failures": self.failures,
            "redraws": self.redraws,
            "orders": dict(sorted(self.orders.items())),
            "checks": self.checks,
        }


def size_corrected_rate(alt: Sequence[float], null: Sequence[float], level: float) -> tuple[float, float]:
    """Rejection rate of ``alt`` against the type-7 ``1 - level`` quantile of ``null``.

    Returns ``(rate, critical_value)``; a statistic rejects when it exceeds the
    critical value.
    """
    cv = float(np.quantile(np.asarray(null, dtype=float), 1.0 - level))
    alt = np.asarray(alt, dtype=float)
    return float(np.mean(alt > cv)), cv


# ---------------------------------------------------------------- p-value tables

class _TableCache:
    def __init__(self, config: ExperimentConfig, threads):
        self.config = config
        self.threads = threads
        self._tables: dict = {}

    def get(self, variant: Variant, p: int, q: int) -> QuantileTable:
        key = (variant, p, q)
        if key not in self._tables:
            self._tables.update(self._resolve(variant, p, q))
        return self._tables[key]

    def _resolve(self, variant, p, q) -> dict:
        src = self.config.table_source
        band = self.config.band
        if src.kind == "bundled":
            return {(variant, p, q): find_table(variant, p, q, band)}
        if src.kind == "file":
            path = Path(src.path)
            if path.is_dir():
                from .tables import table_filename

                cand = path / table_filename(variant, p, q, band)
                if cand.is_file():
                    return {(variant, p, q): load_table(cand)}
                return {(variant, p, q): find_table(variant, p, q, band)}
            table = load_table(path)
            if not table.matches(variant, p, q, band, "dimension"):
                return {(variant, p, q): find_table(variant, p, q, band)}
            return {(variant, p, q): table}
        if src.kind == "tabulate":
            seed = (self.config.seed + 7919 * (p + 1) + 104729 * (q + 1)) % 2**63
            tabs = tabulate_variants(p, q, self.config.variants, band, default_generator(p, q),
                                     self.config.n_obs, src.B, seed, self.threads, max_points=self.config.max_points,
                                     d=self.config.d)
            return {(v, p, q): t for v, t in tabs.items()}
        raise ValidationError(f"unknown table source {src.kind!r}")

    def pvalue(self, variant, p, q, stat) -> float:
        return self.get(variant, p, q).pvalue(stat)


# ---------------------------------------------------------------- report file

def _records(result: ReplicateResult, stream: str, config: ExperimentConfig, tables: _TableCache | None) -> list[dict]:
    base = {"type": "replicate", "experiment": config.name, "stream": stream, "replicate_id": result.replicate_id}
    if not result.stats:
        return [{**base, "variant": None, "Tn": None, "r_hat": None, "p_value": None, "fit_converged": False,
                 "p": None, "q": None, "redraws": result.redraws, "failure": result.failure}]
    out = []
    for v in config.variants:
        tn, r_hat = result.stats[v.value]
        pv = tables.pvalue(v, result.p, result.q, tn) if tables is not None else None
        out.append({**base, "variant": v.value, "Tn": tn, "r_hat": r_hat, "p_value": pv, "fit_converged": True,
                    "p": result.p, "q": result.q, "redraws": result.redraws})
    return out


def _read_report(path: Path, name: str) -> tuple[dict | None, list[dict], dict | None]:
    header, recs, summary = None, [], None
    if not path.exists():
        return header, recs, summary
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                logger.warning("ignoring unreadable line in %s", path)
                continue
            if rec.get("experiment") != name:
                continue
            kind = rec.get("type")
            if kind == "header":
                header = rec
            elif kind == "replicate":
                recs.append(rec)
            elif kind == "summary":
                summary = rec
    return header, recs, summary


def _complete_ids(recs: list[dict], stream: str, n_variants: int) -> dict[int, list[dict]]:
    by_id: dict[int, list[dict]] = {}
    for r in recs:
        if r["stream"] == stream:
            by_id.setdefault(int(r["replicate_id"]), []).append(r)
    return {i: rs for i, rs in by_id.items() if len(rs) == n_variants or (len(rs) == 1 and rs[0]["variant"] is None)}


def _append(path: Path | None, recs: Iterable[dict]):
    if path is None:
        return
    with path.open("a") as fh:
        for r in recs:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
        fh.flush()


# ---------------------------------------------------------------- summary

def _summarise(config: ExperimentConfig, kind: str, alt: dict[int, list[dict]], null: dict[int, list[dict]] | None) -> ExperimentReport:
    failures = 0
    redraws = 0
    orders: dict[str, int] = {}
    per_variant: dict[str, list[dict]] = {v.value: [] for v in config.variants}
    for rid in sorted(alt):
        rs = alt[rid]
        redraws += int(rs[0]["redraws"])
        if rs[0]["variant"] is None:
            failures += 1
            continue
        key = f"{rs[0]['p']},{rs[0]['q']}"
        orders[key] = orders.get(key, 0) + 1
        for r in rs:
            per_variant[r["variant"]].append(r)
    null_stats: dict[str, list[float]] = {}
    if null is not None:
        for rid in sorted(null):
            for r in null[rid]:
                if r["variant"] is not None:
                    null_stats.setdefault(r["variant"], []).append(float(r["Tn"]))
    summaries = {}
    for v, rs in per_variant.items():
        tn = np.array([r["Tn"] for r in rs], dtype=float)
        R = tn.size
        cv = None
        null_sorted = None
        if R == 0:
            rate, rej = 0.0, 0
        elif null is not None:
            rate, cv = size_corrected_rate(tn, null_stats[v], config.nominal_level)
            rej = int(np.sum(tn > cv))
            null_sorted = sorted(null_stats[v])
        else:
            rej = int(sum(r["p_value"] <= config.nominal_level for r in rs))
            rate = rej / R
        se = float(np.sqrt(rate * (1 - rate) / R)) if R else float("nan")
        quant = {f"{pr:g}": float(np.quantile(tn, pr)) for pr in TN_PROBS} if R else {}
        summaries[v] = VariantSummary(v, R, rej, float(rate), se, float(tn.mean()) if R else float("nan"),
                                      quant, cv, null_sorted)
    return ExperimentReport(config, kind, summaries, failures, redraws, orders)


# ---------------------------------------------------------------- runner

def _run_stream(config, task, ids, stream, tables, path, threads) -> dict[int, list[dict]]:
    done: dict[int, list[dict]] = {}

    def sink(chunk: list[ReplicateResult]):
        recs = []
        for res in chunk:
            rs = _records(res, stream, config, tables)
            done[res.replicate_id] = rs
            recs.extend(rs)
        _append(path, recs)

    if stream == "null":
        # distinct stream keys so the null series are independent of the alternative ones
        def shifted_sink(chunk: list[ReplicateResult]):
            for res in chunk:
                res.replicate_id -= NULL_STREAM_OFFSET
            sink(chunk)

        parallel_map(task, [i + NULL_STREAM_OFFSET for i in ids], threads, progress=shifted_sink)
    else:
        parallel_map(task, ids, threads, progress=sink)
    return done


def run_experiment(config: ExperimentConfig, out_path=None, threads: int | None = 1, kind: str | None = None) -> ExperimentReport:
    """Run (or resume) one experiment and return its report.

    With ``out_path`` the JSON-lines report is appended to; replicates already
    recorded there under the same configuration are not recomputed, and a
    complete report is returned unchanged. A header with a different
    configuration raises :class:`ResumeMismatchError`.
    """
    start = time.perf_counter()
    kind = kind or ("size" if _is_linear(config.dgp) else "power")
    path = Path(out_path) if out_path is not None else None
    cfg = config.to_dict()
    alt_done: dict[int, list[dict]] = {}
    null_done: dict[int, list[dict]] = {}
    if path is not None:
        header, recs, summary = _read_report(path, config.name)
        if header is not None:
            if header["config"] != cfg:
                old, new = header["config"].get("seed"), cfg["seed"]
                raise ResumeMismatchError(
                    f"{path}: existing report for {config.name!r} was produced with a different configuration"
                    f" (seed {old} vs {new})"
                )
            nv = len(config.variants)
            alt_done = _complete_ids(recs, "alt", nv)
            null_done = _complete_ids(recs, "null", nv)
            if summary is not None:
                report = _summarise(config, summary["kind"], alt_done, null_done if config.paired_null else None)
                report.checks = summary.get("checks", {})
                report.runtime = time.perf_counter() - start
                return report
        else:
            _append(path, [{"type": "header", "experiment": config.name, "seed": config.seed, "config": cfg}])
    tables = _TableCache(config, threads)
    missing = [i for i in range(config.replicates) if i not in alt_done]
    alt_done.update(_run_stream(config, config.task(), missing, "alt", tables, path, threads))
    if config.paired_null is not None:
        missing = [i for i in range(config.replicates) if i not in null_done]
        null_done.update(_run_stream(config, config.task(config.paired_null), missing, "null", tables, path, threads))
    report = _summarise(config, kind, alt_done, null_done if config.paired_null is not None else None)
    report.runtime = time.perf_counter() - start
    _append(path, [{"type": "timing", "experiment": config.name, "runtime": report.runtime},
                   report.summary_record()])
    return report


def run_size_experiment(config: ExperimentConfig, out_path=None, threads: int | None = 1) -> ExperimentReport:
    """Rejection rate under a linear null, using table p-values."""
    if not (_is_linear(config.dgp)):
        raise ValidationError("a size experiment needs a linear (ARMA) data-generating process")
    if config.paired_null is not None:
        raise ValidationError("size experiments use table p-values; drop paired_null")
    return run_experiment(config, out_path, threads, kind="size")


def run_power_experiment(config: ExperimentConfig, paired_null: ArmaSpec | None = None, out_path=None,
                         threads: int | None = 1) -> ExperimentReport:
    """Rejection rate under an alternative.

    With a paired null the rate is size-corrected: each statistic is compared
    with the empirical ``1 - level`` quantile of the same number of null
    statistics. Otherwise table p-values are used.
    """
    if paired_null is not None:
        config = replace(config, paired_null=paired_null)
    return run_experiment(config, out_path, threads, kind="power")


def run_misspec_suite(configs: Sequence[ExperimentConfig], out_path=None, threads: int | None = 1) -> list[ExperimentReport]:
    """Run each configuration; linear processes are reported as size, the rest as power."""
    out = []
    for c in configs:
        kind = "size" if _is_linear(c.dgp) else "power"
        out.append(run_experiment(c, out_path, threads, kind=kind))
    return out


def run_power_growth(base: LocalAltSpec, h_scales: Sequence[float], config: ExperimentConfig, out_path=None,
                     threads: int | None = 1) -> list[ExperimentReport]:
    """Power along the local alternatives ``base.h * s`` for each scale ``s``.

    Every report carries ``checks["monotone"]``: whether, for every variant,
    each successive rate is at least the previous one minus twice the standard
    error of their difference.
    """
    scales = [float(s) for s in h_scales]
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValidationError("h_scales must be strictly increasing")
    reports = []
    for s in scales:
        dgp = LocalAltSpec(base.base, np.asarray(base.h, dtype=float) * s, base.r0, base.d, config.n_obs)
        c = replace(config, name=f"{config.name}[h*{s:g}]", dgp=dgp)
        reports.append(run_experiment(c, out_path, threads, kind="power"))
    monotone = {}
    for v in config.variants:
        ok = True
        for a, b in zip(reports, reports[1:]):
            slack = 2.0 * np.hypot(a.se(v), b.se(v))
            ok &= b.rate(v) >= a.rate(v) - slack
        monotone[v.value] = bool(ok)
    for r in reports:
        r.checks["monotone"] = monotone
        r.checks["scales"] = scales
    return reports
