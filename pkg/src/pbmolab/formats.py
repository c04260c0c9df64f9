"""Text formats: domain masks, grid functions and CSV tables.

CSV output is deterministic: floats are written with ``repr``, lines end in
LF, and every file is written to a temporary name and then renamed.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import DistanceField, QHResult, SpatialDomain
from .oscillation import GridFunction


class FormatError(ValueError):
    """Malformed input file."""


def atomic_write(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: str | Path, rows: Iterable[Sequence]) -> Path:
    return atomic_write(path, csv_text(rows))


def read_csv(path: str | Path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh)]


# ---------------------------------------------------------------------------
# domain masks


def _header_numbers(line: str, what: str) -> list[str]:
    parts = line.split()
    if not parts:
        raise FormatError(f"{what}: empty header line")
    return parts


def parse_mask(text: str, origin: Sequence[float] | None = None) -> SpatialDomain:
    """Parse ``"n nx [ny] h"`` followed by rows of ``#`` (interior) and ``.``; top row first."""
    lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("mask file is empty")
    head = _header_numbers(lines[0], "mask")
    try:
        n = int(head[0])
        if n not in (1, 2) or len(head) != n + 2:
            raise FormatError(f"mask header must be 'n nx [ny] h', got {lines[0]!r}")
        dims = [int(v) for v in head[1:1 + n]]
        h = float(head[-1])
    except ValueError as exc:
        raise FormatError(f"bad mask header {lines[0]!r}") from exc
    rows = [ln.strip() for ln in lines[1:]]
    ny = dims[1] if n == 2 else 1
    if len(rows) != ny:
        raise FormatError(f"expected {ny} mask rows, found {len(rows)}")
    grid = np.zeros((ny, dims[0]), dtype=bool)
    for r, row in enumerate(rows):
        if len(row) != dims[0] or set(row) - {"#", "."}:
            raise FormatError(f"mask row {r + 1} must have {dims[0]} characters from '#.'")
        grid[r] = [c == "#" for c in row]
    mask = grid[0] if n == 1 else grid[::-1].T.copy()  # -> mask[ix, iy]
    return SpatialDomain(mask, h, origin)


def read_mask(path: str | Path, origin: Sequence[float] | None = None) -> SpatialDomain:
    return parse_mask(Path(path).read_text(encoding="utf-8"), origin)


def format_mask(domain: SpatialDomain) -> str:
    m = domain.mask
    head = " ".join([str(domain.n), *map(str, m.shape), repr(domain.h)])
    grid = m[None, :] if domain.n == 1 else m.T[::-1]
    rows = ["".join("#" if v else "." for v in row) for row in grid]
    return "\n".join([head, *rows]) + "\n"


# ---------------------------------------------------------------------------
# grid functions


def grid_function_text(u: GridFunction) -> str:
    """Meta line ``n nx [ny] nt h tstep T``, a column header, then interior cells only."""
    dom = u.domain
    meta = " ".join([str(dom.n), *map(str, dom.shape), str(u.nt), repr(dom.h), repr(u.tstep), repr(u.T)])
    cols = ["ix", "iy"][: dom.n] + ["it", "value"]
    idx = dom.interior_indices()
    vals = np.asarray(u.values)[tuple(idx.T)]  # (m, nt)
    out = [meta + "\n", ",".join(cols) + "\n"]
    for it in range(u.nt):
        col = vals[:, it]
        for i, v in zip(idx, col):
            out.append(",".join([*map(str, i), str(it), repr(float(v))]) + "\n")
    return "".join(out)


def write_grid_function(path: str | Path, u: GridFunction) -> Path:
    return atomic_write(path, grid_function_text(u))


def read_grid_function(path: str | Path, origin: Sequence[float] | None = None) -> GridFunction:
    """Inverse of :func:`write_grid_function`; the interior is the set of listed cells."""
    with open(path, encoding="utf-8") as fh:
        meta = _header_numbers(fh.readline(), "grid function")
        try:
            n = int(meta[0])
            if n not in (1, 2) or len(meta) != n + 5:
                raise FormatError("grid function header must be 'n nx [ny] nt h tstep T'")
            dims = tuple(int(v) for v in meta[1:1 + n])
            nt = int(meta[1 + n])
            h, tstep, T = (float(v) for v in meta[2 + n:])
        except ValueError as exc:
            raise FormatError(f"bad grid function header {' '.join(meta)!r}") from exc
        cols = fh.readline().strip().split(",")
        if cols != ["ix", "iy"][:n] + ["it", "value"]:
            raise FormatError(f"unexpected column header {cols}")
        body = fh.read()
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2) if body.strip() else np.empty((0, n + 2))
    if abs(nt * tstep - T) > 1e-9 * T:
        raise FormatError("nt * tstep does not match T")
    values = np.full((*dims, nt), np.nan)
    if data.size:
        idx = data[:, : n + 1].astype(int)
        values[tuple(idx.T)] = data[:, -1]
    mask = np.isfinite(values).any(axis=-1)
    if not np.all(np.isfinite(values[mask])):
        raise FormatError("some interior cells miss time samples")
    return GridFunction(SpatialDomain(mask, h, origin), values, tstep)


# ---------------------------------------------------------------------------
# tables


def distance_rows(dist: DistanceField, qh: QHResult | None = None) -> list[list]:
    """``ix[,iy],d,k`` for every interior cell, in C order."""
    dom = dist.domain
    head = ["ix", "iy"][: dom.n] + ["d", "k"]
    rows: list[list] = [head]
    for idx in dom.interior_indices():
        key = tuple(idx)
        k = qh.k[key] if qh is not None else float("nan")
        rows.append([*map(int, idx), float(dist.values[key]), float(k)])
    return rows
