"""Reading and writing instance files, plan files and convergence traces.

Instance files are JSON objects with exactly these fields::

    m, n, u_tilde, v_tilde, cost, zero_pattern, ideal_plan (optional), gamma0, gamma

``cost`` and ``ideal_plan`` are either dense (``m`` rows of ``n`` numbers)
or sparse (a list of ``[i, j, value]`` triples covering every allowed pair).
A list of ``m`` rows of length ``n`` is always read as dense. Indices are
0-based. Floats are written with Python's shortest round-trip repr, so
write-then-read reproduces every value exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import IdealPlan, InstanceError, MaskedMatrix, ProblemInstance, ZeroPattern
from .solvers import TRACE_COLUMNS, SolveReport, TraceRecord

__all__ = [
    "InstanceFormatError",
    "INSTANCE_FIELDS",
    "instance_from_dict",
    "instance_to_dict",
    "read_instance",
    "write_instance",
    "plan_to_dict",
    "report_to_dict",
    "read_plan",
    "write_json",
    "write_trace",
    "read_trace",
]

INSTANCE_FIELDS = ("m", "n", "u_tilde", "v_tilde", "cost", "zero_pattern", "ideal_plan", "gamma0", "gamma")
_REQUIRED = set(INSTANCE_FIELDS) - {"ideal_plan"}


class InstanceFormatError(InstanceError):
    pass


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _matrix_field(name: str, data, m: int, n: int, pattern: ZeroPattern) -> np.ndarray:
    if not isinstance(data, list):
        raise InstanceFormatError(f"{name} must be a list")
    if len(data) == m and all(isinstance(r, list) and len(r) == n and all(map(_is_number, r)) for r in data):
        return np.array(data, dtype=float).reshape(m, n)
    out = np.full((m, n), np.nan)
    for item in data:
        if not (isinstance(item, list) and len(item) == 3 and all(map(_is_number, item))):
            raise InstanceFormatError(f"{name}: expected a dense {m}x{n} array or [i, j, value] triples")
        i, j, val = item
        if int(i) != i or int(j) != j or not (0 <= i < m and 0 <= j < n):
            raise InstanceFormatError(f"{name}: bad index pair ({i}, {j})")
        if not math.isnan(out[int(i), int(j)]):
            raise InstanceFormatError(f"{name}: duplicate entry ({i}, {j})")
        out[int(i), int(j)] = val
    missing = np.isnan(out) & pattern.allowed
    if missing.any():
        i, j = np.argwhere(missing)[0]
        raise InstanceFormatError(f"{name}: no value for allowed pair ({i}, {j})")
    out[~pattern.allowed & np.isnan(out)] = 0.0
    return out


def instance_from_dict(doc: dict) -> ProblemInstance:
    """Parse an instance document. Coverage and positivity are left to
    :func:`~constrained_ot.core.validate_instance`."""
    if not isinstance(doc, dict):
        raise InstanceFormatError("instance must be a JSON object")
    unknown = set(doc) - set(INSTANCE_FIELDS)
    if unknown:
        raise InstanceFormatError(f"unknown fields: {sorted(unknown)}")
    missing = _REQUIRED - set(doc)
    if missing:
        raise InstanceFormatError(f"missing fields: {sorted(missing)}")
    m, n = doc["m"], doc["n"]
    if not (isinstance(m, int) and isinstance(n, int) and m >= 1 and n >= 1):
        raise InstanceFormatError("m and n must be positive integers")
    for key, size in (("u_tilde", m), ("v_tilde", n)):
        vec = doc[key]
        if not (isinstance(vec, list) and len(vec) == size and all(map(_is_number, vec))):
            raise InstanceFormatError(f"{key} must be a list of {size} numbers")
    pairs = doc["zero_pattern"]
    if not (isinstance(pairs, list) and all(
        isinstance(p, list) and len(p) == 2 and all(isinstance(x, int) and not isinstance(x, bool) for x in p)
        for p in pairs
    )):
        raise InstanceFormatError("zero_pattern must be a list of [i, j] integer pairs")
    pattern = ZeroPattern(m, n, pairs, check_coverage=False)
    cost = _matrix_field("cost", doc["cost"], m, n, pattern)
    if doc.get("ideal_plan") is None:
        ideal = IdealPlan.ones(pattern)
    else:
        dense = _matrix_field("ideal_plan", doc["ideal_plan"], m, n, pattern)
        if np.any(dense[~pattern.allowed] != 0):
            raise InstanceFormatError("ideal_plan must be zero on the zero pattern")
        ideal = IdealPlan.from_matrix(dense, pattern)
    for key in ("gamma0", "gamma"):
        if not _is_number(doc[key]):
            raise InstanceFormatError(f"{key} must be a number")
    return ProblemInstance(
        np.array(doc["u_tilde"], dtype=float), np.array(doc["v_tilde"], dtype=float),
        cost, pattern, ideal, doc["gamma0"], doc["gamma"],
    )


def instance_to_dict(inst: ProblemInstance) -> dict:
    doc = {
        "m": inst.m,
        "n": inst.n,
        "u_tilde": inst.u_tilde.tolist(),
        "v_tilde": inst.v_tilde.tolist(),
        "cost": inst.cost.tolist(),
        "zero_pattern": [list(p) for p in inst.pattern.sorted_pairs()],
        "gamma0": inst.gamma0,
        "gamma": inst.gamma,
    }
    if not np.all(inst.ideal.values == 1.0):
        doc["ideal_plan"] = inst.ideal.matrix.tolist()
    return doc


def read_instance(path) -> ProblemInstance:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(doc)


def _clean(obj):
    # strict JSON has no NaN/inf
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def write_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(_clean(doc), allow_nan=False) + "\n", encoding="utf-8")


def write_instance(inst: ProblemInstance, path) -> None:
    write_json(instance_to_dict(inst), path)


def plan_to_dict(plan: MaskedMatrix, fmt: str = "sparse") -> dict:
    if fmt == "sparse":
        body = [[i, j, x] for i, j, x in plan.triples()]
    elif fmt == "dense":
        body = plan.matrix.tolist()
    else:
        raise ValueError(f"unknown plan format {fmt!r}")
    m, n = plan.shape
    return {"m": m, "n": n, "format": fmt, "plan": body}


def report_to_dict(report: SolveReport, fmt: str = "sparse") -> dict:
    doc = plan_to_dict(report.plan, fmt)
    doc["v_star"] = report.v_star.tolist()
    doc["summary"] = report.summary()
    return doc


def read_plan(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Dense plan matrix and ``v_star`` (None if absent) from a plan file.

    Entries on forbidden pairs are kept as written so they can be flagged.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: not valid JSON ({exc})") from exc
    try:
        m, n, fmt, body = doc["m"], doc["n"], doc["format"], doc["plan"]
    except (KeyError, TypeError) as exc:
        raise InstanceFormatError(f"{path}: plan file needs m, n, format and plan") from exc
    if fmt == "dense":
        mat = np.array(body, dtype=float)
        if mat.shape != (m, n):
            raise InstanceFormatError(f"{path}: dense plan has shape {mat.shape}, expected ({m}, {n})")
    elif fmt == "sparse":
        mat = np.zeros((m, n))
        for i, j, x in body:
            mat[int(i), int(j)] = x
    else:
        raise InstanceFormatError(f"{path}: unknown plan format {fmt!r}")
    v_star = doc.get("v_star")
    return mat, (None if v_star is None else np.array(v_star, dtype=float))


def write_trace(records: Iterable[TraceRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in records:
            writer.writerow([repr(x) for x in rec.as_tuple()])


def read_trace(path) -> list[TraceRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise InstanceFormatError(f"{path}: unexpected trace header {reader.fieldnames}")
        return [
            TraceRecord(int(row["iter"]), *(float(row[c]) for c in TRACE_COLUMNS[1:]))
            for row in reader
        ]
