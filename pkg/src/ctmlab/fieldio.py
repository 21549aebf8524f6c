"""Plain-text field dumps.

A dump is a block of ``# key=value`` header lines followed by one text line
per grid row, south row first, values printed with 17 significant digits so
that a write/read cycle is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IngestionError
from .grid import Grid, ScalarField

_FMT = "%.17g"


def format_block(arr):
    return "\n".join(" ".join(_FMT % v for v in row) for row in np.atleast_2d(arr)) + "\n"


def write_field(path, c, time=0.0):
    g = c.grid
    header = (
        f"# nx={g.nx}\n# ny={g.ny}\n# dx={_FMT % g.dx}\n# dy={_FMT % g.dy}\n"
        f"# time={_FMT % time}\n"
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(header + format_block(c.values))
    return path


def parse_header_line(line, lineno):
    body = line[1:].strip()
    if "=" not in body:
        raise IngestionError(f"line {lineno}: malformed header {line.strip()!r}")
    key, _, value = body.partition("=")
    return key.strip(), value.strip()


def parse_row(line, lineno, width):
    try:
        row = [float(tok) for tok in line.split()]
    except ValueError as exc:
        raise IngestionError(f"line {lineno}: {exc}") from None
    if len(row) != width:
        raise IngestionError(f"line {lineno}: expected {width} values, found {len(row)}")
    return row


def read_field(path, x0=0.0, y0=0.0):
    """Read a dump written by :func:`write_field`; returns ``(field, time)``."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    header = {}
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, value = parse_header_line(line, lineno)
            header[key] = value
            continue
        try:
            nx = int(header["nx"])
        except (KeyError, ValueError):
            raise IngestionError(f"{path}: data before a valid '# nx=' header") from None
        rows.append(parse_row(line, lineno, nx))
    try:
        grid = Grid(int(header["nx"]), int(header["ny"]), float(header["dx"]), float(header["dy"]), x0, y0)
        time = float(header.get("time", 0.0))
    except KeyError as exc:
        raise IngestionError(f"{path}: missing header {exc.args[0]!r}") from None
    if len(rows) != grid.ny:
        raise IngestionError(f"{path}: expected {grid.ny} rows, found {len(rows)}")
    return ScalarField(grid, np.array(rows)), time
