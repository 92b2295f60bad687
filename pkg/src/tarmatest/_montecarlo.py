"""Replicate workers and an order-preserving parallel map for Monte Carlo runs."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .arma import fit_arma, select_order_hr
from .dgp import (
    ArmaSpec,
    LocalAltSpec,
    RngStream,
    TarmaSpec,
    simulate_arma,
    simulate_local_alternative,
    simulate_named_dgp,
    simulate_tarma,
)
from .errors import EstimationError, PreconditionError, SingularityError
from .suplm import test_statistics
from .score import Variant

# a replicate whose fit keeps failing is abandoned after this many substreams
MAX_ATTEMPTS = 20


@dataclass(frozen=True)
class FixedOrder:
    """Fit ARMA(p, q) to every replicate."""

    p: int
    q: int

    def to_dict(self) -> dict:
        return {"kind": "fixed", "p": self.p, "q": self.q}


@dataclass(frozen=True)
class HannanRissanenOrder:
    """Select (p, q) per replicate by Hannan-Rissanen BIC over [0..p_max] x [0..q_max]."""

    p_max: int
    q_max: int

    def to_dict(self) -> dict:
        return {"kind": "hannan_rissanen", "p_max": self.p_max, "q_max": self.q_max}


def order_policy_from_dict(d: dict):
    if d["kind"] == "fixed":
        return FixedOrder(int(d["p"]), int(d["q"]))
    if d["kind"] == "hannan_rissanen":
        return HannanRissanenOrder(int(d["p_max"]), int(d["q_max"]))
    raise ValueError(f"unknown order policy {d['kind']!r}")


def simulate_any(dgp, n: int, burn_in: int, gen: np.random.Generator) -> np.ndarray:
    """Draw one series of length n from any supported process description."""
    if isinstance(dgp, str):
        return simulate_named_dgp(dgp, n, burn_in, gen).values
    if isinstance(dgp, LocalAltSpec):
        if dgp.n != n:
            dgp = LocalAltSpec(dgp.base, dgp.h, dgp.r0, dgp.d, n)
        return simulate_local_alternative(dgp, burn_in, gen).values
    if isinstance(dgp, TarmaSpec):
        return simulate_tarma(dgp, n, burn_in, gen).values
    if isinstance(dgp, ArmaSpec):
        return simulate_arma(dgp, n, burn_in, gen).values
    raise TypeError(f"unsupported data-generating process {dgp!r}")


@dataclass(frozen=True)
class ReplicateTask:
    dgp: object
    n: int
    burn_in: int
    seed: int
    order: object
    variants: tuple
    band: tuple
    d: int
    max_points: int | None


@dataclass
class ReplicateResult:
    replicate_id: int
    p: int
    q: int
    redraws: int
    fit_converged: bool
    stats: dict  # variant value -> (Tn, r_hat); empty if abandoned
    failure: str | None = None


def run_replicate(task: ReplicateTask, replicate_id: int) -> ReplicateResult:
    """Simulate, fit and test one replicate, redrawing on a fresh substream when the fit fails."""
    stream = RngStream(task.seed, replicate_id)
    failure = None
    for attempt in range(MAX_ATTEMPTS):
        y = simulate_any(task.dgp, task.n, task.burn_in, stream.generator(attempt))
        try:
            if isinstance(task.order, HannanRissanenOrder):
                sel = select_order_hr(y, task.order.p_max, task.order.q_max)
                p, q = sel.p_hat, sel.q_hat
            else:
                p, q = task.order.p, task.order.q
            fit = fit_arma(y, p, q)
            if not fit.converged:
                failure = "not converged"
                continue
            reports = test_statistics(y, fit, task.variants, task.d, task.band, task.max_points)
        except (EstimationError, PreconditionError, SingularityError) as exc:
            failure = f"{type(exc).__name__}: {exc}"
            continue
        stats = {v.value: (rep.statistic, rep.r_hat) for v, rep in reports.items()}
        return ReplicateResult(replicate_id, p, q, attempt, True, stats)
    return ReplicateResult(replicate_id, -1, -1, MAX_ATTEMPTS, False, {}, failure)


def _run_chunk(args) -> list[ReplicateResult]:
    task, ids = args
    return [run_replicate(task, i) for i in ids]


def resolve_workers(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


def parallel_map(task, ids: Sequence[int], threads: int | None = 1, chunk: int = 25,
                 progress: Callable[[list[ReplicateResult]], None] | None = None) -> list[ReplicateResult]:
    """Run replicates ``ids`` and return their results in the order of ``ids``.

    Each replicate draws from its own counter-based stream, so the results do
    not depend on how the work is split. ``progress`` receives every chunk in
    order as soon as it and all earlier chunks are done.
    """
    ids = list(ids)
    chunks = [ids[i : i + chunk] for i in range(0, len(ids), chunk)]
    out: list[ReplicateResult] = []
    workers = resolve_workers(threads)
    if workers == 1 or len(chunks) <= 1:
        for c in chunks:
            res = _run_chunk((task, c))
            out.extend(res)
            if progress:
                progress(res)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for res in pool.map(_run_chunk, [(task, c) for c in chunks]):
            out.extend(res)
            if progress:
                progress(res)
    return out


def variants_tuple(variants: Iterable) -> tuple:
    seen = []
    for v in variants:
        v = Variant.parse(v)
        if v not in seen:
            seen.append(v)
    return tuple(seen)
