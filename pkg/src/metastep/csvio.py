"""Versioned CSV records with lossless float formatting.

Files start with one ``# schema=<int>`` comment line, then a header row, then
data rows.  Floats are written with 17 significant digits, which is enough
for every double to round-trip exactly through ``float()``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence

SCHEMA_VERSION = 1
SCHEMA_PREFIX = "# schema="


class CsvParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    if hasattr(v, "item"):  # numpy scalar
        return format_value(v.item())
    return str(v)


def render_csv(columns: Sequence[str], rows: Sequence[Mapping[str, object]]) -> str:
    buf = io.StringIO()
    buf.write(f"{SCHEMA_PREFIX}{SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        extra = set(row) - set(columns)
        if extra:
            raise KeyError(f"row has columns outside the schema: {sorted(extra)}")
        w.writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, columns: Sequence[str], rows: Sequence[Mapping[str, object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_csv(columns, rows))


@dataclass
class CsvTable:
    schema: int
    columns: List[str]
    rows: List[Dict[str, str]]
    line_numbers: List[int]

    def column(self, name: str) -> List[str]:
        return [r[name] for r in self.rows]

    def floats(self, name: str) -> List[float]:
        out = []
        for r, ln in zip(self.rows, self.line_numbers):
            try:
                out.append(parse_float(r[name]))
            except ValueError as exc:
                raise CsvParseError(f"column {name!r}: {exc}", ln) from None
        return out


def parse_float(s: str) -> float:
    if s == "":
        return math.nan
    return float(s)


def parse_csv(text: str) -> CsvTable:
    lines = text.splitlines()
    if not lines:
        raise CsvParseError("empty file (missing schema line)", 1)
    first = lines[0]
    if not first.startswith(SCHEMA_PREFIX):
        raise CsvParseError(f"expected '{SCHEMA_PREFIX}<int>' comment line", 1)
    try:
        schema = int(first[len(SCHEMA_PREFIX):].strip())
    except ValueError:
        raise CsvParseError(f"bad schema version {first!r}", 1) from None
    if schema != SCHEMA_VERSION:
        raise CsvParseError(f"unsupported schema version {schema}", 1)
    if len(lines) < 2:
        raise CsvParseError("missing header row", 2)

    reader = csv.reader(lines[1:])
    columns = next(reader)
    if not columns or any(c == "" for c in columns):
        raise CsvParseError("header has empty column names", 2)
    if len(set(columns)) != len(columns):
        raise CsvParseError("duplicate column names in header", 2)
    rows, numbers = [], []
    for offset, fields in enumerate(reader):
        ln = offset + 3
        if not fields:
            continue
        if len(fields) != len(columns):
            raise CsvParseError(f"expected {len(columns)} fields, got {len(fields)}", ln)
        rows.append(dict(zip(columns, fields)))
        numbers.append(ln)
    return CsvTable(schema, columns, rows, numbers)


def read_csv(path) -> CsvTable:
    with open(path, encoding="utf-8") as fh:
        return parse_csv(fh.read())
