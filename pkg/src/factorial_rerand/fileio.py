"""Readers and writers for the on-disk formats the command line uses.

CSV for tabular data (covariates, allocations, outcomes, reports), JSON for
structured records (manifests, thresholds, study summaries).  Readers
validate aggressively and raise ParseError with row and column context;
writers emit full-precision floats so a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .assignment import Allocation
from .balance import BalanceProfile, CovariateMatrix
from .design import DesignSpec, Order, build_design_matrix
from .errors import ParseError


def _rows_of(path: Path) -> list[list[str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{path}: file is empty")
    delimiter = "\t" if "\t" in lines[0] else ","
    rows = [row for row in csv.reader(lines, delimiter=delimiter) if row]
    if not rows:
        raise ParseError(f"{path}: file is empty")
    return rows


def _parse_float(token: str, path: Path, row: int, col: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(
            f"{path}: row {row}, column {col!r}: cannot parse {token!r} as a number"
        ) from None
    if not math.isfinite(value):
        raise ParseError(f"{path}: row {row}, column {col!r}: non-finite value {token!r}")
    return value


def _parse_int(token: str, path: Path, row: int, col: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(
            f"{path}: row {row}, column {col!r}: cannot parse {token!r} as an integer"
        ) from None


def _check_width(row: Sequence[str], width: int, path: Path, idx: int) -> None:
    if len(row) != width:
        raise ParseError(
            f"{path}: row {idx} has {len(row)} fields, expected {width}"
        )


def _order_by_unit(
    ids: list[int], path: Path
) -> np.ndarray:
    n = len(ids)
    seen = sorted(ids)
    if seen != list(range(1, n + 1)):
        missing = sorted(set(range(1, n + 1)) - set(ids))
        if missing:
            raise ParseError(f"{path}: unit_id values are not 1..{n} (missing {missing[:5]})")
        raise ParseError(f"{path}: unit_id values are not 1..{n} (duplicates present)")
    return np.argsort(np.asarray(ids, dtype=np.int64), kind="stable")


def read_covariates(path: str | Path) -> CovariateMatrix:
    """Load a covariate table: header of names, one row of floats per unit.

    A leading ``unit_id`` column is accepted and used to order the rows;
    otherwise file order is unit order.
    """
    path = Path(path)
    rows = _rows_of(path)
    header = [h.strip() for h in rows[0]]
    if any(_is_number(h) for h in header):
        raise ParseError(f"{path}: first row must be a header of covariate names")
    has_ids = bool(header) and header[0] == "unit_id"
    names = header[1:] if has_ids else header
    if not names:
        raise ParseError(f"{path}: no covariate columns found")
    body = rows[1:]
    if not body:
        raise ParseError(f"{path}: no data rows")
    ids: list[int] = []
    values = np.empty((len(body), len(names)))
    for i, row in enumerate(body):
        _check_width(row, len(header), path, i + 2)
        offset = 0
        if has_ids:
            ids.append(_parse_int(row[0], path, i + 2, "unit_id"))
            offset = 1
        for j, name in enumerate(names):
            values[i, j] = _parse_float(row[j + offset], path, i + 2, name)
    if has_ids:
        values = values[_order_by_unit(ids, path)]
    return CovariateMatrix(entries=values, names=tuple(names))


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def write_covariates(path: str | Path, x: CovariateMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(x.names)
        for row in x.entries:
            writer.writerow([repr(float(v)) for v in row])


def write_allocation(path: str | Path, alloc: Allocation) -> None:
    """Persist an allocation: unit_id, combination index, and factor signs."""
    dm = build_design_matrix(alloc.spec)
    signs = dm.entries[alloc.combo_of_unit - 1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "combination", *alloc.spec.factor_names])
        for i in range(alloc.n):
            writer.writerow([i + 1, int(alloc.combo_of_unit[i]), *map(int, signs[i])])


def read_allocation(path: str | Path, spec: DesignSpec | None = None) -> Allocation:
    """Load an allocation and verify it is internally consistent.

    The combination index is authoritative; the factor sign columns must
    agree with it under the design's row ordering.  Without an explicit
    ``spec`` the ordering is inferred by trying the standard orderings.
    """
    path = Path(path)
    rows = _rows_of(path)
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0] != "unit_id" or header[1] != "combination":
        raise ParseError(
            f"{path}: expected header starting with unit_id, combination, then factor names"
        )
    factor_names = tuple(header[2:])
    k = len(factor_names)
    body = rows[1:]
    n = len(body)
    if spec is None:
        if n % (1 << k) != 0:
            raise ParseError(
                f"{path}: {n} units cannot split evenly over {1 << k} combinations"
            )
        r = n // (1 << k)
    else:
        if spec.k != k:
            raise ParseError(
                f"{path}: file has {k} factor columns, design expects {spec.k}"
            )
        if tuple(spec.factor_names) != factor_names:
            raise ParseError(
                f"{path}: factor columns {factor_names} do not match design "
                f"{tuple(spec.factor_names)}"
            )
        r = spec.r
        if n != spec.n:
            raise ParseError(f"{path}: {n} rows, design allocates {spec.n} units")

    ids: list[int] = []
    combos = np.empty(n, dtype=np.int32)
    signs = np.empty((n, k), dtype=np.int64)
    for i, row in enumerate(body):
        _check_width(row, k + 2, path, i + 2)
        ids.append(_parse_int(row[0], path, i + 2, "unit_id"))
        combos[i] = _parse_int(row[1], path, i + 2, "combination")
        for j, name in enumerate(factor_names):
            signs[i, j] = _parse_int(row[j + 2], path, i + 2, name)
        if combos[i] < 1 or combos[i] > (1 << k):
            raise ParseError(
                f"{path}: row {i + 2}: combination {combos[i]} outside 1..{1 << k}"
            )
    if np.any(np.abs(signs) != 1):
        bad = int(np.argwhere(np.abs(signs) != 1)[0][0])
        raise ParseError(f"{path}: row {bad + 2}: factor levels must be +1 or -1")
    order_rows = _order_by_unit(ids, path)
    combos = combos[order_rows]
    signs = signs[order_rows]

    candidates = (
        (spec,)
        if spec is not None
        else tuple(
            DesignSpec(k=k, r=r, order=o, factor_names=factor_names)
            for o in (Order.LEXICOGRAPHIC, Order.YATES)
        )
    )
    for cand in candidates:
        dm = build_design_matrix(cand)
        if np.array_equal(dm.entries[combos - 1], signs):
            return Allocation(spec=cand, combo_of_unit=combos)
    raise ParseError(
        f"{path}: factor sign columns disagree with the combination indices "
        "under any standard row ordering"
    )


def read_outcomes(path: str | Path, n: int | None = None) -> np.ndarray:
    """Load observed outcomes keyed by unit_id; returns y ordered by unit."""
    path = Path(path)
    rows = _rows_of(path)
    header = [h.strip() for h in rows[0]]
    if header != ["unit_id", "outcome"]:
        raise ParseError(f"{path}: expected header unit_id,outcome")
    body = rows[1:]
    if n is not None and len(body) != n:
        raise ParseError(f"{path}: {len(body)} outcome rows, expected {n}")
    ids: list[int] = []
    y = np.empty(len(body))
    for i, row in enumerate(body):
        _check_width(row, 2, path, i + 2)
        ids.append(_parse_int(row[0], path, i + 2, "unit_id"))
        y[i] = _parse_float(row[1], path, i + 2, "outcome")
    return y[_order_by_unit(ids, path)]


def write_outcomes(path: str | Path, y: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "outcome"])
        for i, value in enumerate(np.asarray(y, dtype=np.float64)):
            writer.writerow([i + 1, repr(float(value))])


def write_balance_report(path: str | Path, profile: BalanceProfile) -> None:
    """Flat CSV of mean differences and distances, one statistic per row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["effect", "covariate", "statistic", "value"])
        for effect, covariate, statistic, value in profile.rows():
            writer.writerow([effect, covariate, statistic, repr(float(value))])


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: str | Path, payload: dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=_jsonable)
        fh.write("\n")


def read_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: expected a JSON object at top level")
    return payload


def write_thresholds(path: str | Path, thresholds: dict[str, float], p: int) -> None:
    """Persist calibrated thresholds with the covariate count they assume."""
    write_json(path, {"mode": "empirical", "p": p, "thresholds": dict(thresholds)})


def read_thresholds(path: str | Path) -> tuple[dict[str, float], int]:
    payload = read_json(path)
    try:
        thresholds = {str(k): float(v) for k, v in payload["thresholds"].items()}
        p = int(payload["p"])
    except (KeyError, TypeError, ValueError, AttributeError):
        raise ParseError(
            f"{path}: expected keys 'thresholds' (name to number) and 'p'"
        ) from None
    return thresholds, p


def write_study_report(out_dir: str | Path, report: Any) -> list[Path]:
    """Write a study or independence report: JSON summary plus CSV tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "study.json"]
    write_json(written[0], report.to_dict())
    rows = getattr(report, "reduction_rows", lambda: [])()
    if rows:
        p = out / "reduction.csv"
        _write_dict_rows(p, rows)
        written.append(p)
    rows = getattr(report, "estimator_rows", lambda: [])()
    if rows:
        p = out / "estimators.csv"
        _write_dict_rows(p, rows)
        written.append(p)
    return written


def _write_dict_rows(path: Path, rows: list[dict[str, Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
