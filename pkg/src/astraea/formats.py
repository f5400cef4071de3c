"""Text formats: schedule files, CSV tables and JSON records.

Schedule file::

    T=<int>
    t=<index> theta=<tenths>/10      (T lines, index 0 .. T-1 in order)

CSV files are written with :mod:`csv` defaults (CRLF line ends, minimal
quoting) and always carry a header row. Floats are written with ``repr`` so
they round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from pathlib import Path

import numpy as np

from .diffusion import Schedule
from .errors import ConfigError

_T_LINE = re.compile(r"^T=(\d+)$")
_ENTRY_LINE = re.compile(r"^t=(\d+) theta=(\d+)/10$")


def render_schedule(schedule: Schedule) -> str:
    lines = [f"T={len(schedule)}"]
    lines += [f"t={i} theta={v}/10" for i, v in enumerate(schedule.tenths)]
    return "\n".join(lines) + "\n"


def parse_schedule(text: str) -> Schedule:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ConfigError("schedule file is empty")
    m = _T_LINE.match(lines[0])
    if not m:
        raise ConfigError(f"schedule line 1: expected 'T=<int>', got {lines[0]!r}")
    T = int(m.group(1))
    if len(lines) - 1 != T:
        raise ConfigError(f"schedule declares T={T} but has {len(lines) - 1} entries")
    tenths = []
    for i, line in enumerate(lines[1:]):
        m = _ENTRY_LINE.match(line)
        if not m:
            raise ConfigError(f"schedule line {i + 2}: expected 't=<index> theta=<tenths>/10', got {line!r}")
        if int(m.group(1)) != i:
            raise ConfigError(f"schedule line {i + 2}: index {m.group(1)} out of order, expected {i}")
        v = int(m.group(2))
        if v > 10:
            raise ConfigError(f"schedule line {i + 2}: theta {v}/10 exceeds 1.0")
        tenths.append(v)
    return Schedule(tuple(tenths))


def write_schedule(schedule: Schedule, path: str | Path) -> None:
    Path(path).write_text(render_schedule(schedule), newline="\n")


def read_schedule(path: str | Path) -> Schedule:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read schedule file {path}: {exc.strerror}") from None
    return parse_schedule(text)


def fmt_float(v: float | None) -> str:
    if v is None:
        return "NA"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    Path(path).write_text(csv_text(header, rows), newline="")


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_grid_csv(grid: np.ndarray, path: str | Path) -> None:
    header = ["token"] + [f"c{j}" for j in range(grid.shape[1])]
    write_csv(path, header, [[i] + [float(v) for v in row] for i, row in enumerate(grid)])


def read_grid_csv(path: str | Path) -> np.ndarray:
    _, rows = read_csv(path)
    return np.array([[float(v) for v in row[1:]] for row in rows])


def write_json(path: str | Path, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
