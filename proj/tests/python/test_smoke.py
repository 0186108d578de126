import math

import pytest

import smartalert


def test_labeler_boundaries():
    # No change is stable; a drop far below stop_min is not.
    out = smartalert.label_stability("HGB", 10.0, 10.0)
    assert out["stable"] is True
    assert smartalert.label_stability("HGB", 10.0, 3.0)["stable"] is False


def test_savings_and_reduction():
    tests, dollars = smartalert.savings(700000, 0.30, 0.15, 422.22)
    assert tests == 31500
    assert abs(dollars - 13.3e6) < 0.1e6
    assert abs(smartalert.relative_reduction(1.54, 1.82) - 0.1538) < 5e-4


def test_fisher_reconstruction():
    p = smartalert.fisher_exact(0, 486, 3, 457)
    assert 0.10 <= p <= 0.12


def test_mann_whitney_and_poisson():
    u, p, method = smartalert.mann_whitney([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    assert method == "exact"
    assert u == 0.0
    assert math.isclose(p, 0.1, rel_tol=1e-12)
    r = smartalert.poisson_rate_compare([1, 2, 1, 2], [2, 2, 3, 2])
    assert r["method"] == "wald"
    assert 0.0 < r["p"] <= 1.0


def test_calibration_reaches_target():
    scores = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95]
    labels = [0, 0, 1, 0, 1, 1, 1, 1, 1, 1]
    out = smartalert.calibrate_threshold(scores, labels, 0.90)
    assert out["unattainable"] is False
    assert out["ppv"] >= 0.90


def test_cohort_dataset_is_deterministic():
    a = smartalert.cohort_dataset({"n_encounters": 5}, seed=3, n=5)
    b = smartalert.cohort_dataset({"n_encounters": 5}, seed=3, n=5)
    assert a == b
    kinds = {e["resource"]["resourceType"] for bundle in a["bundles"] for e in bundle["entry"]}
    assert {"Patient", "Encounter", "Observation", "ServiceRequest"} <= kinds


def test_empty_report_has_zero_counts():
    header_events = '{"schema":"smartalert-events/1","window":{"from":null,"to":null},"count":0}\n'
    header_enc = '{"schema":"smartalert-encounters/1","count":0}\n'
    rep = smartalert.report(header_events, header_enc)
    assert rep["alerts"] == {"displayed": 0, "silent": 0}


def test_validation_errors_raise():
    with pytest.raises(ValueError):
        smartalert.savings(-1, 0.3, 0.15)
