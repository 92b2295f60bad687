"""Supremum LM tests of linear ARMA models against two-regime threshold ARMA alternatives."""

from importlib import import_module

__version__ = "0.1.0"

# public name -> submodule; resolved on first access so that light commands stay fast
_EXPORTS = {
    "arma": ["ArmaFit", "OrderSelection", "fit_arma", "hannan_rissanen_init", "residuals_conditional", "select_order_hr"],
    "dgp": [
        "ArmaSpec", "LocalAltSpec", "RngStream", "TarmaSpec", "TimeSeries",
        "simulate_arma", "simulate_local_alternative", "simulate_named_dgp", "simulate_tarma",
    ],
    "errors": [
        "ChecksumError", "EstimationError", "PreconditionError", "ResumeMismatchError", "SingularityError",
        "TableError", "TableMismatchError", "TabulationError", "TarmaTestError", "ValidationError",
    ],
    "score": ["ScorePanel", "Variant", "alpha_sequence", "build_score_panel"],
    "suplm": ["TestReport", "pvalue", "test_statistic", "test_statistics", "threshold_grid"],
    "tables": ["QuantileTable", "bundled_defaults", "find_table", "load_table", "save_table", "tabulate"],
    "harness": [
        "ExperimentConfig", "ExperimentReport", "FixedOrder", "HannanRissanenOrder", "TableSource",
        "run_misspec_suite", "run_power_experiment", "run_power_growth", "run_size_experiment",
    ],
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_WHERE)


def __getattr__(name):
    if name in _WHERE:
        value = getattr(import_module(f".{_WHERE[name]}", __name__), name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(__all__))
