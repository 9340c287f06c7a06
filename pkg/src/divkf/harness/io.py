"""CSV and JSON result files."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from .runner import PredictionRecord, ResultRow

COLUMNS = ("scenario", "filter", "sigma_q", "sigma_cv", "sigma_r", "alpha", "r_max",
           "metric", "value", "stderr", "trials", "runtime_ms")
HEADER = ",".join(COLUMNS)
DIVERGED = "diverged"
_FLOAT_COLS = ("sigma_q", "sigma_cv", "sigma_r", "alpha", "r_max", "stderr", "runtime_ms")


def fmt(v: float | None) -> str:
    return "" if v is None else format(v, ".6g")


def _parse(s: str) -> float | None:
    return None if s == "" else float(s)


def row_fields(row: ResultRow) -> list[str]:
    value = DIVERGED if row.diverged else fmt(row.value)
    return [row.scenario, row.filter, fmt(row.sigma_q), fmt(row.sigma_cv), fmt(row.sigma_r),
            fmt(row.alpha), fmt(row.r_max), row.metric, value, fmt(row.stderr),
            str(row.trials), fmt(row.runtime_ms)]


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow(row_fields(row))
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != COLUMNS:
        raise ValueError("unexpected CSV header")
    rows = []
    for rec in reader:
        d = dict(zip(COLUMNS, rec))
        diverged = d["value"] == DIVERGED
        rows.append(ResultRow(
            d["scenario"], d["filter"], *(_parse(d[c]) for c in _FLOAT_COLS[:5]), d["metric"],
            None if diverged else _parse(d["value"]), _parse(d["stderr"]), int(d["trials"]),
            _parse(d["runtime_ms"]), diverged))
    return rows


def rows_to_json(rows: list[ResultRow]) -> str:
    from .config import SCHEMA_VERSION

    records = [dict(zip(COLUMNS, row_fields(row))) for row in rows]
    for rec in records:
        for key in _FLOAT_COLS + ("value", "trials"):
            v = rec[key]
            rec[key] = None if v == "" else v if v == DIVERGED else float(v)
        rec["trials"] = int(rec["trials"])
    payload = {"schema_version": SCHEMA_VERSION, "columns": list(COLUMNS), "rows": records}
    return json.dumps(payload, indent=2) + "\n"


def write_atomic(path, text: str) -> Path:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def emit_results(rows: list[ResultRow], out_dir, stem: str,
                 formats: tuple[str, ...] = ("csv", "json")) -> list[Path]:
    """Write ``<stem>.csv`` and/or ``<stem>.json``. Empty ``rows`` is an error."""
    if not rows:
        raise ValueError("no result rows to emit")
    writers = {"csv": rows_to_csv, "json": rows_to_json}
    bad = [f for f in formats if f not in writers]
    if bad:
        raise ValueError(f"unknown format(s): {bad}")
    return [write_atomic(Path(out_dir) / f"{stem}.{f}", writers[f](rows)) for f in formats]


PREDICTION_COLUMNS = ("filter", "sigma_q", "alpha", "option", "trial", "step", "spot", "strike",
                      "maturity", "rate", "call", "put")


def predictions_to_csv(preds: list[PredictionRecord]) -> str:
    """Full-precision predicted prices, one line per step."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PREDICTION_COLUMNS)
    for p in preds:
        for t in range(len(p.calls)):
            writer.writerow([p.filter, fmt(p.coords[0]), fmt(p.coords[3]), p.option, p.trial, t,
                             repr(float(p.spots[t])), repr(float(p.strike)),
                             repr(float(p.maturities[t])), repr(float(p.rates[t])),
                             repr(float(p.calls[t])), repr(float(p.puts[t]))])
    return buf.getvalue()


def read_predictions(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
