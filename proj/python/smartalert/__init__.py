"""Python access to the SmartAlert core."""

import json

from . import _core
from ._core import ContractError, ValidationError, fisher_exact, format_mean, format_rate, mann_whitney
from ._core import relative_reduction, render_report, savings

__all__ = [
    "ContractError",
    "ValidationError",
    "calibrate_threshold",
    "cohort_dataset",
    "fisher_exact",
    "format_mean",
    "format_rate",
    "label_stability",
    "mann_whitney",
    "poisson_rate_compare",
    "relative_reduction",
    "render_report",
    "report",
    "savings",
]


def label_stability(component, previous, next_value):
    """Label a consecutive result pair with the default thresholds."""
    return json.loads(_core.label_json(component, previous, next_value))


def poisson_rate_compare(treatment, control):
    return json.loads(_core.poisson_json(list(treatment), list(control)))


def calibrate_threshold(scores, labels, target_ppv=0.90):
    return json.loads(_core.calibrate_json(list(scores), [bool(x) for x in labels], target_ppv))


def cohort_dataset(config=None, seed=1, n=20):
    """FHIR-shaped natural-history dataset for a cohort config dict."""
    return json.loads(_core.cohort_dataset(json.dumps(config or {}), seed, n))


def report(events_jsonl, encounters_jsonl):
    return json.loads(_core.report_json(events_jsonl, encounters_jsonl))
