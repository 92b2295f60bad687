"""Command-line interface: ``tarmatest {simulate,test,tabulate,experiment}``.

Exit codes: 0 success, 2 input/configuration error, 3 estimation, singularity
or tabulation failure, 4 an existing experiment report has a different seed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .dgp import (
    NAMED_DGPS,
    ArmaSpec,
    LocalAltSpec,
    RngStream,
    TarmaSpec,
    simulate_arma,
    simulate_local_alternative,
    simulate_named_dgp,
    simulate_tarma,
)
from .errors import (
    EstimationError,
    PreconditionError,
    ResumeMismatchError,
    SingularityError,
    TableError,
    TableMismatchError,
    TabulationError,
    ValidationError,
)

# fitting, testing and tabulation modules are imported inside the commands
# that use them so that `simulate` starts quickly

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATION = 3
EXIT_RESUME = 4

logger = logging.getLogger("tarmatest")


class InputError(Exception):
    """Bad flags, unreadable files or malformed data (exit 2)."""


# ---------------------------------------------------------------- parsing helpers

def _floats(text: str | None) -> list[float]:
    if text is None or text.strip() == "":
        return []
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from exc


def _band(text) -> tuple[float, float]:
    vals = _floats(text) if isinstance(text, str) else [float(v) for v in text]
    if len(vals) != 2:
        raise InputError(f"band needs two percentiles, got {text!r}")
    return vals[0], vals[1]


def _fresh_seed() -> int:
    return int(np.random.SeedSequence().entropy % 2**63)


def read_series(path) -> np.ndarray:
    """Read a one-column (optionally headed) or two-column (time, value) CSV."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    values = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        cells = [c.strip() for c in row]
        if not cells or all(c == "" for c in cells):
            continue
        if len(cells) > 2:
            raise InputError(f"{path}:{lineno}: expected one or two columns, got {len(cells)}")
        cell = cells[-1]
        try:
            v = float(cell)
        except ValueError:
            if not values and lineno == 1:
                continue  # header
            raise InputError(f"{path}:{lineno}: not a number: {cell!r}") from None
        if not math.isfinite(v):
            raise InputError(f"{path}:{lineno}: non-finite value {cell!r}")
        values.append(v)
    if not values:
        raise InputError(f"{path}: no data rows")
    return np.array(values)


def _write_series(x: np.ndarray, out):
    if out in (None, "-"):
        sys.stdout.write("x\n" + "".join(f"{v!r}\n" for v in x.tolist()))
        return
    with open(out, "w") as fh:
        fh.write("x\n")
        if x.size:
            x.tofile(fh, sep="\n")  # shortest round-trip representation
            fh.write("\n")


def _echo(msg: str):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- simulate

def _base_spec(args) -> ArmaSpec:
    phi = _floats(args.phi) or [0.0]
    return ArmaSpec(phi, _floats(args.theta), args.sigma2)


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else _fresh_seed()
    rng = RngStream(seed, args.replicate)
    if args.named:
        x = simulate_named_dgp(args.named, args.n, args.burn_in, rng).values
        model = {"named": args.named}
    else:
        base = _base_spec(args)
        if args.model == "tarma":
            spec = TarmaSpec(base, _floats(args.psi), args.r, args.delay, args.psi_ma)
            x = simulate_tarma(spec, args.n, args.burn_in, rng).values
        elif args.model == "local":
            spec = LocalAltSpec(base, _floats(args.h), args.r0, args.delay, args.n)
            x = simulate_local_alternative(spec, args.burn_in, rng).values
        else:
            x = simulate_arma(base, args.n, args.burn_in, rng).values
        model = {"model": args.model, "phi": list(base.phi), "theta": list(base.theta), "sigma2": base.sigma2}
    _write_series(x, args.out)
    _echo(json.dumps({"seed": seed, "replicate": args.replicate, "n": args.n, "burn_in": args.burn_in, **model}))
    return EXIT_OK


# ---------------------------------------------------------------- test

def _format_report(rep, table_desc) -> str:
    lines = [
        f"{rep.variant.value}: Tn = {rep.statistic:.4f}  r_hat = {rep.r_hat:.6g}  "
        + (f"p-value = {rep.p_value:.4g}" if rep.p_value is not None else "p-value = n/a")
        + (f"  [{table_desc}]" if table_desc else ""),
        "  top thresholds (r, Tn(r)):",
    ]
    for r, t in rep.top(5):
        lines.append(f"    {r:12.6g}  {t:10.4f}")
    if rep.skipped_r:
        lines.append(f"  skipped {len(rep.skipped_r)} ill-conditioned thresholds")
    return "\n".join(lines)


def _table_for(args, variant, p, q, band):
    from .tables import find_table, load_table

    if args.table:
        table = load_table(args.table)
        if not table.matches(variant, p, q, band, "dimension"):
            raise TableMismatchError(
                f"{args.table} is for {table.variant.value}({table.p},{table.q}) band {table.band}; "
                f"statistic is {variant.value}({p},{q}) band {band}"
            )
        return table
    return find_table(variant, p, q, band)


def cmd_test(args) -> int:
    from .arma import fit_arma, select_order_hr
    from .score import Variant
    from .suplm import test_statistics

    y = read_series(args.csv)
    band = _band(args.band)
    variants = (Variant.AR_ONLY, Variant.GENERAL) if args.variant == "both" else (Variant.parse(args.variant),)
    stage = "order selection"
    try:
        if args.auto_order:
            sel = select_order_hr(y, args.p_max, args.q_max)
            p, q = sel.p_hat, sel.q_hat
        else:
            p, q = args.p, args.q
        stage = "ARMA fit"
        fit = fit_arma(y, p, q)
        if not fit.converged:
            raise EstimationError(f"optimizer did not converge in {fit.iterations} iterations")
        stage = "supLM statistic"
        reports = test_statistics(y, fit, variants, args.delay, band, args.max_points)
    except (EstimationError, PreconditionError, SingularityError) as exc:
        raise _StageError(stage, exc) from exc
    out = {"config": {"csv": str(args.csv), "n": int(y.size), "p": p, "q": q, "band": list(band), "delay": args.delay,
                      "max_points": args.max_points, "auto_order": bool(args.auto_order)},
           "fit": fit.summary(), "tests": {}}
    print(f"ARMA({p},{q}) fit: n = {y.size}  loglik = {fit.loglik:.4f}  NAIC = {fit.naic:.4f}  NBIC = {fit.nbic:.4f}")
    print(f"  phi = {np.round(fit.spec.phi, 4).tolist()}  theta = {np.round(fit.spec.theta, 4).tolist()}  "
          f"sigma2 = {fit.spec.sigma2:.5g}")
    for v, rep in reports.items():
        table = _table_for(args, v, p, q, band)
        desc = None
        if table is not None:
            rep.p_value = table.pvalue(rep.statistic)
            if table.source == "asymptotic":
                desc = f"asymptotic sup-Wald table, dimension {table.psi_dim}, B={table.B}"
            else:
                desc = f"table {table.variant.value}({table.p},{table.q}) source={table.source} B={table.B}"
        print(_format_report(rep, desc))
        d = rep.to_dict()
        d.pop("fit", None)
        d["table"] = desc
        out["tests"][v.value] = d
    if args.json_out:
        try:
            Path(args.json_out).write_text(json.dumps(out, indent=2) + "\n")
        except OSError as exc:
            raise InputError(f"cannot write {args.json_out}: {exc}") from exc
    return EXIT_OK


class _StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage} failed: {type(exc).__name__}: {exc}")


# ---------------------------------------------------------------- tabulate

def cmd_tabulate(args) -> int:
    from .score import Variant
    from .tables import save_table, table_filename, tabulate_variants

    seed = args.seed if args.seed is not None else _fresh_seed()
    band = _band(args.band)
    variants = (Variant.AR_ONLY, Variant.GENERAL) if args.variant == "both" else (Variant.parse(args.variant),)
    generator = None
    if args.phi is not None or args.theta is not None:
        generator = ArmaSpec(_floats(args.phi) or [0.0] * (args.p + 1), _floats(args.theta) or [0.0] * args.q, 1.0)
    _echo(json.dumps({"seed": seed, "variant": args.variant, "p": args.p, "q": args.q, "band": list(band),
                      "B": args.B, "n_sim": args.n_sim, "threads": args.threads}))
    tables = tabulate_variants(args.p, args.q, variants, band, generator, args.n_sim, args.B, seed, args.threads,
                               max_points=args.max_points)
    out = Path(args.out) if args.out else Path(".")
    for v, t in tables.items():
        if out.is_dir():
            target = out / table_filename(v, args.p, args.q, band)
        elif len(tables) > 1:
            target = out.with_name(f"{v.value}_{out.name}")
        else:
            target = out
        path = save_table(t, target)
        knots = "  ".join(f"{pr:g}:{t.quantile(pr):.3f}" for pr in (0.9, 0.95, 0.99, 0.999))
        print(f"{v.value}({args.p},{args.q}) B={t.B} n_sim={t.n_sim} seed={seed}  {knots}  -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------- experiment

def _bundled_config(name: str) -> Path | None:
    root = resources.files("tarmatest") / "configs"
    cand = root / (name if name.endswith(".cfg") else name + ".cfg")
    return Path(str(cand)) if cand.is_file() else None


def _parse_order(text: str):
    from .harness import FixedOrder, HannanRissanenOrder

    parts = text.replace(",", " ").split()
    if len(parts) != 3 or parts[0] not in ("fixed", "hr"):
        raise InputError(f"order must be 'fixed P Q' or 'hr P_MAX Q_MAX', got {text!r}")
    a, b = int(parts[1]), int(parts[2])
    return FixedOrder(a, b) if parts[0] == "fixed" else HannanRissanenOrder(a, b)


def _parse_table(text: str):
    from .harness import TableSource

    parts = text.split(None, 1)
    if parts[0] == "bundled":
        return TableSource.bundled()
    if parts[0] == "file" and len(parts) == 2:
        return TableSource.file(parts[1].strip())
    if parts[0] == "tabulate" and len(parts) == 2:
        return TableSource.tabulate_on_the_fly(int(parts[1]))
    raise InputError(f"table must be 'bundled', 'file PATH' or 'tabulate B', got {text!r}")


def parse_experiments(path, seed_override: int | None = None) -> list[tuple]:
    """Parse an INI file into ``(kind, config, extras)`` triples, one per section."""
    from .harness import ExperimentConfig

    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"cannot parse config {path}: {exc}") from exc
    out = []
    for name in cp.sections():
        s = cp[name]
        try:
            kind = s.get("kind", "size")
            dgp_kind = s.get("dgp", "arma")
            base = ArmaSpec(_floats(s.get("phi", "0")), _floats(s.get("theta", "")), s.getfloat("sigma2", 1.0))
            n = s.getint("n")
            if dgp_kind == "arma":
                dgp = base
            elif dgp_kind == "tarma":
                dgp = TarmaSpec(base, _floats(s.get("psi")), s.getfloat("r", 0.0), s.getint("delay", 1),
                                s.getboolean("psi_ma", False))
            elif dgp_kind == "local":
                dgp = LocalAltSpec(base, _floats(s.get("h")), s.getfloat("r0", 0.0), s.getint("delay", 1), n)
            elif dgp_kind == "named":
                dgp = s.get("name")
                if dgp not in NAMED_DGPS:
                    raise InputError(f"unknown named process {dgp!r}")
            else:
                raise InputError(f"unknown dgp {dgp_kind!r}")
            seed = seed_override if seed_override is not None else s.getint("seed", None)
            if seed is None:
                seed = _fresh_seed()
            cfg = ExperimentConfig(
                name=name,
                dgp=dgp,
                n_obs=n,
                replicates=s.getint("replicates", 1000),
                nominal_level=s.getfloat("nominal_level", 0.05),
                variants=tuple(v.strip() for v in s.get("variants", "sLM, sLMg").split(",")),
                order_policy=_parse_order(s.get("order", "fixed 1 1")),
                band=_band(s.get("band", "0.25, 0.75")),
                d=s.getint("test_delay", 1),
                seed=seed,
                table_source=_parse_table(s.get("table", "bundled")),
                burn_in=s.getint("burn_in", 200),
                max_points=s.getint("max_points", None),
                paired_null=base if (kind == "power" and s.getboolean("size_corrected", False)) else None,
            )
            extras = {"scales": _floats(s.get("scales", ""))}
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{path} [{name}]: {exc}") from exc
        if kind not in ("size", "power", "misspec", "growth"):
            raise InputError(f"{path} [{name}]: unknown kind {kind!r}")
        out.append((kind, cfg, extras))
    if not out:
        raise InputError(f"{path}: no experiment sections")
    return out


def cmd_experiment(args) -> int:
    from .harness import run_misspec_suite, run_power_experiment, run_power_growth, run_size_experiment

    path = Path(args.config)
    if not path.is_file():
        bundled = _bundled_config(args.config)
        if bundled is None:
            raise InputError(f"config {args.config} not found")
        path = bundled
    experiments = parse_experiments(path, args.seed)
    out = Path(args.out) if args.out else Path(path.stem + ".jsonl")
    for kind, cfg, extras in experiments:
        _echo(json.dumps({"experiment": cfg.name, "kind": kind, "seed": cfg.seed, "threads": args.threads,
                          "out": str(out), "config": cfg.to_dict()}))
        if kind == "size":
            reports = [run_size_experiment(cfg, out, args.threads)]
        elif kind == "power":
            reports = [run_power_experiment(cfg, None, out, args.threads)]
        elif kind == "misspec":
            reports = run_misspec_suite([cfg], out, args.threads)
        else:
            if not isinstance(cfg.dgp, LocalAltSpec):
                raise InputError(f"[{cfg.name}]: growth experiments need dgp = local")
            reports = run_power_growth(cfg.dgp, extras["scales"] or [0, 1, 2, 4], cfg, out, args.threads)
        for rep in reports:
            for v, s in rep.variants.items():
                extra = f"  cv = {s.critical_value:.3f}" if s.critical_value is not None else ""
                print(f"{rep.config.name}  {v}: rate = {s.rejection_rate:.4f} (SE {s.se:.4f}, R = {s.replicates})"
                      f"{extra}  failures = {rep.failures}")
            if rep.checks:
                print(f"{rep.config.name}  checks: {json.dumps(rep.checks)}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tarmatest", description="supLM tests of ARMA against threshold ARMA")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a series to CSV")
    grp = sim.add_mutually_exclusive_group(required=True)
    grp.add_argument("--arma", dest="model", action="store_const", const="arma")
    grp.add_argument("--tarma", dest="model", action="store_const", const="tarma")
    grp.add_argument("--local", dest="model", action="store_const", const="local")
    grp.add_argument("--named", choices=NAMED_DGPS)
    sim.add_argument("--phi", help="intercept then AR coefficients, comma-separated")
    sim.add_argument("--theta", help="MA coefficients (e_t - theta_1 e_{t-1} - ...)")
    sim.add_argument("--sigma2", type=float, default=1.0)
    sim.add_argument("--psi", help="threshold coefficients added when X_{t-d} <= r")
    sim.add_argument("--psi-ma", action="store_true", help="psi includes MA coefficients")
    sim.add_argument("--r", type=float, default=0.0)
    sim.add_argument("--h", help="local-alternative direction")
    sim.add_argument("--r0", type=float, default=0.0)
    sim.add_argument("--delay", type=int, default=1)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--burn-in", type=int, default=200)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--replicate", type=int, default=0)
    sim.add_argument("--out", "-o", default="-")
    sim.set_defaults(func=cmd_simulate)

    tst = sub.add_parser("test", help="fit an ARMA model and run the supLM tests")
    tst.add_argument("csv")
    tst.add_argument("--p", type=int, default=1)
    tst.add_argument("--q", type=int, default=1)
    tst.add_argument("--auto-order", action="store_true", help="select (p, q) by Hannan-Rissanen BIC")
    tst.add_argument("--p-max", type=int, default=3)
    tst.add_argument("--q-max", type=int, default=3)
    tst.add_argument("--variant", default="both", choices=["sLM", "sLMg", "both"])
    tst.add_argument("--band", default="0.25,0.75")
    tst.add_argument("--delay", type=int, default=1)
    tst.add_argument("--max-points", type=int, default=None, help="thin the threshold grid (default: all points)")
    tst.add_argument("--table", help="quantile table file (default: $TARMATEST_TABLE_DIR or bundled)")
    tst.add_argument("--json-out")
    tst.set_defaults(func=cmd_test)

    tab = sub.add_parser("tabulate", help="simulate null quantile tables")
    tab.add_argument("--variant", default="both", choices=["sLM", "sLMg", "both"])
    tab.add_argument("--p", type=int, required=True)
    tab.add_argument("--q", type=int, required=True)
    tab.add_argument("--band", default="0.25,0.75")
    tab.add_argument("--B", type=int, default=10000)
    tab.add_argument("--n-sim", type=int, default=1000)
    tab.add_argument("--phi", help="generator intercept and AR coefficients")
    tab.add_argument("--theta", help="generator MA coefficients")
    tab.add_argument("--max-points", type=int, default=None)
    tab.add_argument("--seed", type=int)
    tab.add_argument("--threads", type=int, default=1)
    tab.add_argument("--out", "-o", help="output file or directory (default: current directory)")
    tab.set_defaults(func=cmd_tabulate)

    exp = sub.add_parser("experiment", help="run Monte Carlo experiments from an INI config")
    exp.add_argument("config", help="config path or name of a bundled config")
    exp.add_argument("--out", "-o", help="JSON-lines report (default: <config>.jsonl)")
    exp.add_argument("--threads", type=int, default=1)
    exp.add_argument("--seed", type=int, help="override the seeds in the config")
    exp.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ResumeMismatchError as exc:
        _echo(f"error: {exc}")
        return EXIT_RESUME
    except (_StageError, TabulationError, EstimationError, SingularityError, PreconditionError) as exc:
        _echo(f"error: {exc}")
        return EXIT_ESTIMATION
    except (InputError, ValidationError, TableError, OSError) as exc:
        _echo(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
