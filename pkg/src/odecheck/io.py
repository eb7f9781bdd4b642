"""Dataset ingestion and report emission (CSV in, JSON/TSV out)."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientData, OdeCheckError, ParseError, SchemaError
from .smoothing import ObservationSet


class IoError(OdeCheckError, OSError):
    pass


FORMATS = ("json", "tsv")


def ingest_csv(path, min_n: int = 5, span=None) -> ObservationSet:
    """Read ``t,y1,...,yp`` rows into a time-sorted ObservationSet.

    Rows may come in any order and time points may repeat.
    """
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0].lower() != "t":
            raise SchemaError(f"{path}: header must be 't,y1,...,yp', got {','.join(header)!r}")
        width = len(header)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                raise SchemaError(f"{path}: line {line_no} has {len(row)} fields, header has {width}")
            try:
                vals = [float(cell) for cell in row]
            except ValueError as exc:
                raise ParseError(f"{exc}", line=line_no) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", line=line_no)
            rows.append(vals)
    if len(rows) < min_n:
        raise InsufficientData(f"{path}: {len(rows)} observations, need at least {min_n}")
    raw = np.array(rows, dtype=float).reshape(len(rows), width)
    return ObservationSet.from_unsorted(raw[:, 0], raw[:, 1:], span=span, names=tuple(header[1:]))


def write_csv(data: ObservationSet, path) -> Path:
    """Write with ``repr`` floats so that ingest_csv reads back identical values."""
    path = Path(path)
    try:
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["t", *data.names])
            for ti, yi in zip(data.times, data.values):
                writer.writerow([repr(float(ti)), *(repr(float(v)) for v in yi)])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def _g6(x):
    if x is None:
        return "NA"
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "NA" if math.isnan(x) else f"{x:.6g}"


def report_dict(report) -> dict:
    if isinstance(report, dict):
        return report
    if isinstance(report, (list, tuple)):
        return {"kind": "test-batch", "reports": [report_dict(r) for r in report]}
    if hasattr(report, "to_dict"):
        out = report.to_dict()
        if hasattr(report, "statistic") and "kind" not in out:
            out = {"kind": "test", **out}
        return out
    raise TypeError(f"cannot serialize {type(report).__name__}")


def to_json(report, config: Optional[dict] = None) -> str:
    doc = report_dict(report)
    if config is not None:
        doc = {**doc, "run_config": config}
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def monte_carlo_tsv(report) -> str:
    """hypothesis, alpha, beta and one rejection-rate column per test."""
    doc = report_dict(report)
    spec = doc["spec"]
    tests = list(spec["tests"])
    header = ["hypothesis", "alpha", "beta", *tests]
    row = [doc["hypothesis"], _g6(spec["alpha"]), _g6(spec["beta"])]
    row += [_g6(doc["tests"][name]["rate"]) for name in tests]
    return "\t".join(header) + "\n" + "\t".join(row) + "\n"


TEST_TSV_COLUMNS = ("test", "component", "statistic", "reference", "p_value", "level", "reject")


def tests_tsv(reports) -> str:
    docs = report_dict(reports)
    docs = docs["reports"] if docs.get("kind") == "test-batch" else [docs]
    lines = ["\t".join(TEST_TSV_COLUMNS)]
    for d in docs:
        cells = []
        for col in TEST_TSV_COLUMNS:
            val = d[col]
            cells.append(val if isinstance(val, str) else _g6(val))
        lines.append("\t".join(str(c) for c in cells))
    return "\n".join(lines) + "\n"


def estimation_tsv(result) -> str:
    doc = report_dict(result)
    names = doc.get("param_names") or [f"theta{j + 1}" for j in range(len(doc["theta_hat"]))]
    header = ["method", "objective", "converged", *names]
    row = [doc["method"], _g6(doc["objective"]), _g6(doc["converged"]), *(_g6(v) for v in doc["theta_hat"])]
    return "\t".join(header) + "\n" + "\t".join(row) + "\n"


def local_alt_tsv(diag) -> str:
    doc = report_dict(diag)
    lines = ["delta\tresidual\tscaled\tratio"]
    for r in doc["rows"]:
        lines.append("\t".join(_g6(r[k]) for k in ("delta", "residual", "scaled", "ratio")))
    return "\n".join(lines) + "\n"


def render(report, fmt: str = "json", config: Optional[dict] = None) -> str:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    if fmt == "json":
        return to_json(report, config)
    kind = report_dict(report).get("kind")
    if kind == "monte-carlo":
        return monte_carlo_tsv(report)
    if kind in ("test", "test-batch"):
        return tests_tsv(report)
    if kind == "estimation":
        return estimation_tsv(report)
    if kind == "local-alternative":
        return local_alt_tsv(report)
    raise ValueError(f"no TSV layout for report kind {kind!r}")


def emit_report(report, path=None, fmt: str = "json", config: Optional[dict] = None) -> str:
    """Render ``report`` and write it to ``path`` when given; returns the text."""
    text = render(report, fmt, config)
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
    return text


def write_plot_data(path, t, columns, names: Sequence[str]) -> Path:
    """Tab-separated ``t`` plus one column per curve, one row per grid point."""
    t = np.asarray(t, dtype=float).reshape(-1)
    cols = np.asarray(columns, dtype=float).reshape(t.size, -1)
    if cols.shape[1] != len(names):
        raise SchemaError("one name per plot column required")
    path = Path(path)
    try:
        with path.open("w") as handle:
            handle.write("\t".join(["t", *names]) + "\n")
            for ti, row in zip(t, cols):
                handle.write("\t".join(repr(float(v)) for v in (ti, *row)) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path
