"""CSV interchange for series (``t,y[,true_label]``) and JSON sidecars."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .model import TimeSeries

HEADER = ("t", "y")
LABEL_COLUMN = "true_label"


class CsvFormatError(ValueError):
    """Malformed series CSV; ``line`` is the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def format_series_csv(t, y, labels=None) -> str:
    """Render a series as CSV text with ``%.17g`` values and LF line endings.

    ``labels`` are 0-based segment indices and are written 1-based.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER + ((LABEL_COLUMN,) if labels is not None else ()))
    if labels is None:
        for ti, yi in zip(t, y):
            w.writerow(("%.17g" % ti, "%.17g" % yi))
    else:
        for ti, yi, li in zip(t, y, labels):
            w.writerow(("%.17g" % ti, "%.17g" % yi, int(li) + 1))
    return buf.getvalue()


def write_series_csv(path, t, y, labels=None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_series_csv(t, y, labels))


def parse_series_csv(text: str):
    """Parse CSV text into ``(TimeSeries, labels or None)``; labels come back 0-based."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise CsvFormatError(1, "empty file, expected header 't,y'")
    header = tuple(c.strip() for c in rows[0])
    if header not in (HEADER, HEADER + (LABEL_COLUMN,)):
        raise CsvFormatError(1, f"expected header 't,y' or 't,y,{LABEL_COLUMN}', got {','.join(rows[0])!r}")
    has_labels = len(header) == 3
    t, y, labels = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CsvFormatError(lineno, f"expected {len(header)} fields, got {len(row)}")
        try:
            ti, yi = float(row[0]), float(row[1])
        except ValueError:
            raise CsvFormatError(lineno, f"non-numeric value in {row[:2]!r}") from None
        if not (math.isfinite(ti) and math.isfinite(yi)):
            raise CsvFormatError(lineno, "non-finite value")
        if t and ti <= t[-1]:
            raise CsvFormatError(lineno, f"t must be strictly increasing ({ti!r} after {t[-1]!r})")
        if has_labels:
            try:
                lab = int(row[2])
            except ValueError:
                raise CsvFormatError(lineno, f"label {row[2]!r} is not an integer") from None
            if lab < 1:
                raise CsvFormatError(lineno, "labels are 1-based")
            labels.append(lab - 1)
        t.append(ti)
        y.append(yi)
    if not t:
        raise CsvFormatError(len(rows) + 1, "no data rows")
    series = TimeSeries(np.array(t), np.array(y))
    return series, (np.array(labels, dtype=np.int64) if has_labels else None)


def read_series_csv(path):
    return parse_series_csv(Path(path).read_text(encoding="utf-8"))


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
