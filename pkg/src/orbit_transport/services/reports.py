"""Verification checks, run reports and canonical JSON emission."""

import hashlib
import json
import math
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field


def _number(value: float) -> float | str:
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


class Check(BaseModel):
    name: str
    lhs: float
    rhs: float
    diff: float
    tolerance: float
    passed: bool
    detail: str = ""

    @classmethod
    def equality(cls, name: str, lhs: float, rhs: float, tolerance: float, relative: bool = False, detail: str = "") -> "Check":
        lhs, rhs = float(lhs), float(rhs)
        if lhs == rhs:
            diff = 0.0
        else:
            diff = abs(lhs - rhs)
            if relative:
                diff /= max(1.0, abs(lhs), abs(rhs))
        return cls(name=name, lhs=lhs, rhs=rhs, diff=diff, tolerance=tolerance, passed=diff <= tolerance, detail=detail)

    @classmethod
    def lower_bound(cls, name: str, value: float, bound: float, tolerance: float, detail: str = "") -> "Check":
        """value ≥ bound - tolerance; diff is how far value falls below bound (0 if it doesn't).

        A NaN on either side fails with diff NaN.
        """
        value, bound = float(value), float(bound)
        if math.isnan(value) or math.isnan(bound):
            return cls(name=name, lhs=value, rhs=bound, diff=math.nan, tolerance=tolerance, passed=False, detail=detail)
        if value == bound or value == math.inf or bound == -math.inf:
            diff = 0.0
        else:
            diff = max(0.0, bound - value)
        return cls(name=name, lhs=value, rhs=bound, diff=diff, tolerance=tolerance, passed=diff <= tolerance, detail=detail)

    @classmethod
    def from_result(cls, name: str, result, tolerance: float, expect: bool = True) -> "Check":
        """Wrap a yes/no checker answer; lhs and rhs hold the answer and the expectation as 0/1."""
        holds = bool(result)
        detail = "" if result.witness is None else f"witness {result.witness}"
        return cls(
            name=name,
            lhs=float(holds),
            rhs=float(expect),
            diff=float(result.max_deviation),
            tolerance=tolerance,
            passed=holds == expect,
            detail=detail,
        )

    def payload(self) -> dict:
        return {
            "name": self.name,
            "lhs": _number(self.lhs),
            "rhs": _number(self.rhs),
            "diff": _number(self.diff),
            "tolerance": _number(self.tolerance),
            "pass": self.passed,
            "detail": self.detail,
        }


class RunReport(BaseModel):
    command: str
    digests: dict[str, str] = Field(default_factory=dict)
    checks: list[Check] = Field(default_factory=list)
    results: dict = Field(default_factory=dict)
    wall_time: float | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def n_failed(self) -> int:
        return sum(not c.passed for c in self.checks)

    @property
    def digest(self) -> str:
        """One hash over the command and its input digests."""
        h = hashlib.sha256(self.command.encode())
        for key, value in sorted(self.digests.items()):
            h.update(f"\n{key}={value}".encode())
        return h.hexdigest()

    def payload(self, timing: bool = False) -> dict:
        out = {
            "command": self.command,
            "digests": self.digests,
            "checks": [c.payload() for c in self.checks],
            "results": _jsonable(self.results),
            "pass": self.passed,
        }
        if timing and self.wall_time is not None:
            out["wall_time"] = self.wall_time
        return out


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _number(value)
    return value


def canonical_json(data) -> str:
    """Sorted keys, shortest round-trip floats, non-finite numbers as strings."""
    return json.dumps(_jsonable(data), sort_keys=True, indent=2, allow_nan=False) + "\n"


def digest_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def digest_arrays(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]
