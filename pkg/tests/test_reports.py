"""Tests for checks, run reports and canonical JSON."""

import json
import math

import numpy as np

from orbit_transport.services.core_spaces import CheckResult
from orbit_transport.services.reports import Check, RunReport, canonical_json, digest_arrays


def test_equality_check():
    assert Check.equality("same", 1.0, 1.0 + 1e-12, 1e-10).passed
    assert not Check.equality("apart", 1.0, 1.1, 1e-3).passed
    c = Check.equality("rel", 1000.0, 1001.0, 1e-2, relative=True)
    assert c.diff == 1.0 / 1001.0
    assert c.passed


def test_equality_of_infinities():
    c = Check.equality("inf", math.inf, math.inf, 0.0)
    assert c.passed
    assert c.diff == 0.0


def test_lower_bound_check():
    assert Check.lower_bound("above", 2.0, 1.0, 0.0).diff == 0.0
    below = Check.lower_bound("below", 0.5, 1.0, 0.1)
    assert below.diff == 0.5
    assert not below.passed
    assert Check.lower_bound("inf", math.inf, 3.0, 0.0).passed
    assert Check.lower_bound("free", -5.0, -math.inf, 0.0).passed


def test_lower_bound_fails_on_nan():
    for value, bound in [(math.nan, 0.0), (1.0, math.nan), (math.nan, math.nan)]:
        c = Check.lower_bound("nan", value, bound, 1e-9)
        assert not c.passed
        assert math.isnan(c.diff)
        assert c.payload()["diff"] == "nan"


def test_check_from_result():
    c = Check.from_result("foliation", CheckResult(False, (0, 1, 2), 0.25), 1e-9)
    assert not c.passed
    assert c.diff == 0.25
    assert c.detail == "witness (0, 1, 2)"
    assert Check.from_result("expected failure", CheckResult(False, None, 1.0), 1e-9, expect=False).passed


def test_canonical_json_is_sorted_with_string_infinities():
    text = canonical_json({"b": math.inf, "a": [np.float64(0.1), np.nan, -math.inf], "c": np.int64(3)})
    data = json.loads(text)
    assert list(data) == ["a", "b", "c"]
    assert data["a"] == [0.1, "nan", "-inf"]
    assert data["b"] == "inf"
    assert data["c"] == 3
    assert text.endswith("\n")


def test_canonical_json_is_stable():
    payload = {"x": np.arange(3) / 3, "y": {"z": True}}
    assert canonical_json(payload) == canonical_json(dict(reversed(list(payload.items()))))


def test_report_payload_and_timing():
    report = RunReport(
        command="verify",
        digests={"seed": "0"},
        checks=[Check.equality("ok", 1.0, 1.0, 0.0), Check.lower_bound("bad", 0.0, 1.0, 0.0)],
        wall_time=1.5,
    )
    assert not report.passed
    assert report.n_failed == 1
    payload = report.payload()
    assert "wall_time" not in payload
    assert payload["pass"] is False
    assert payload["checks"][1]["pass"] is False
    assert report.payload(timing=True)["wall_time"] == 1.5


def test_report_digest_depends_on_inputs():
    a = RunReport(command="verify", digests={"seed": "0", "suite": "lift"})
    b = RunReport(command="verify", digests={"suite": "lift", "seed": "0"})
    c = RunReport(command="verify", digests={"seed": "1", "suite": "lift"})
    assert a.digest == b.digest
    assert a.digest != c.digest
    assert len(a.digest) == 64


def test_digest_arrays():
    assert digest_arrays(np.eye(2)) == digest_arrays([[1, 0], [0, 1]])
    assert digest_arrays(np.eye(2)) != digest_arrays(np.ones((2, 2)))
