"""Risk measurement for poisoning attacks on small image classifiers."""

import json

from ._core import (
    ConfigError,
    DataError,
    DivergenceError,
    Error,
    ReportWriteError,
    apply_trigger,
    classify,
    compute_metrics,
    extent_of_damage,
    generate_synthetic,
    ledger_total,
    selftest,
    version,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "Error",
    "ReportWriteError",
    "apply_trigger",
    "classify",
    "compute_metrics",
    "extent_of_damage",
    "generate_synthetic",
    "ledger_total",
    "print_report",
    "run_measurement",
    "selftest",
    "version",
]


def run_measurement(config, write_outputs=False):
    """Run baseline and attacked training for a config dict; returns the report dict."""
    from ._core import run_measurement_json

    return json.loads(run_measurement_json(json.dumps(config), write_outputs))


def print_report(report):
    """Fixed-order text rendering of a report dict."""
    from ._core import print_report_json

    return print_report_json(json.dumps(report))
