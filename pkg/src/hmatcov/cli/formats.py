"""Text formats: the point/value input file, the optimizer iteration log,
replicate rows and the CSV tables written by the command line tool."""

from __future__ import annotations

import csv
import io
import re
from typing import Iterable, List, Sequence, TextIO, Union

import numpy as np

from ..estimate import FitResult, ProfileRow, ReplicateRecord, TraceRow
from ..geometry import PointSet
from ..likelihood import Dataset

__all__ = [
    "InputFormatError",
    "parse_input_text",
    "parse_input_file",
    "format_dataset",
    "write_dataset",
    "write_iteration_log",
    "parse_iteration_log",
    "write_replicate_csv",
    "parse_replicate_csv",
    "write_table_csv",
    "write_profile_csv",
    "shortest",
]



class InputFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


def shortest(x: float) -> str:
    """Shortest decimal string that reads back as the same float."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def parse_input_text(text: str, dim: int = 2) -> Dataset:
    """Parse "N" followed by N lines of ``dim`` coordinates and one value."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    lines = text.splitlines()
    # skip leading blank lines but keep numbering for messages
    k = 0
    while k < len(lines) and not lines[k].strip():
        k += 1
    if k == len(lines):
        raise InputFormatError("missing point count", 1)
    head = lines[k].split()
    if len(head) != 1:
        raise InputFormatError(f"expected a single integer count, got {lines[k].strip()!r}", k + 1)
    try:
        n = int(head[0])
    except ValueError:
        raise InputFormatError(f"non-numeric count {head[0]!r}", k + 1) from None
    if n <= 0:
        raise InputFormatError(f"point count must be positive, got {n}", k + 1)
    rows = []
    lineno = k + 1
    for j in range(k + 1, len(lines)):
        lineno = j + 1
        toks = lines[j].split()
        if not toks:
            continue
        if len(toks) != dim + 1:
            raise InputFormatError(f"expected {dim + 1} fields, found {len(toks)}", lineno)
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            bad = next(t for t in toks if not _is_float(t))
            raise InputFormatError(f"non-numeric token {bad!r}", lineno) from None
        rows.append(vals)
        if len(rows) > n:
            raise InputFormatError(f"expected {n} records, found more", lineno)
    if len(rows) != n:
        raise InputFormatError(f"expected {n} records, found {len(rows)}", len(lines) + 1)
    arr = np.array(rows, dtype=float)
    return Dataset(PointSet(arr[:, :dim]), arr[:, dim])


def _is_float(t: str) -> bool:
    try:
        float(t)
        return True
    except ValueError:
        return False


def parse_input_file(path, dim: int = 2) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_input_text(fh.read(), dim)


def format_dataset(ds: Dataset) -> str:
    out = [str(ds.n)]
    for x, z in zip(ds.points.points, ds.Z):
        out.append(" ".join(shortest(v) for v in (*x, z)))
    return "\n".join(out) + "\n"


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_dataset(ds))


def _fmt_g(x: float, digits: int) -> str:
    return f"{x:.{digits}g}"


def _short_row(r: TraceRow) -> str:
    return (f"{r.index} {r.nu:.3g} {r.ell:.3g} {r.sigma2:.2f}  "
            f"L = {r.value:.1f}  TOL= {r.size:.3g}")


def write_iteration_log(trace: Sequence[TraceRow], out: TextIO = None,
                        result: FitResult = None, digits: int = 10,
                        style: str = "full") -> str:
    """One row per iteration: index, nu, ell, sigma2, "L = value", "TOL= size".

    ``style="short"`` uses a compact layout
    (three significant digits, one decimal for L).  When ``result`` has
    converged a final line with (ell, nu, sigma2) is appended.
    """
    lines = []
    for r in trace:
        if style == "short":
            lines.append(_short_row(r))
        else:
            g = lambda v: _fmt_g(v, digits)
            lines.append(f"{r.index} {g(r.nu)} {g(r.ell)} {g(r.sigma2)}  "
                         f"L = {g(r.value)}  TOL= {g(r.size)}")
    if result is not None and result.converged:
        ell, nu, s2 = result.theta
        lines.append(f"theta* = {_fmt_g(ell, digits)} {_fmt_g(nu, digits)} {_fmt_g(s2, digits)}")
    text = "".join(line + "\n" for line in lines)
    if out is not None:
        out.write(text)
    return text


_LOG_ROW = re.compile(
    r"^\s*(\d+)\s+(\S+)\s+(\S+)\s+(\S+)\s+L\s*=\s*(\S+)\s+TOL\s*=\s*(\S+)\s*$")


def parse_iteration_log(text: str) -> List[TraceRow]:
    """Read back iteration rows written by :func:`write_iteration_log`."""
    rows = []
    for line in text.splitlines():
        m = _LOG_ROW.match(line)
        if m:
            i, *vals = m.groups()
            rows.append(TraceRow(int(i), *(float(v) for v in vals)))
    return rows


def _short_sci(x: float) -> str:
    mant, exp = f"{x:.1e}".split("e")
    return f"{mant}e{int(exp)}"


def write_replicate_csv(records: Iterable[ReplicateRecord], out: TextIO = None,
                        style: str = "full", header: bool = False) -> str:
    """Rows "n ell nu sigma2" (whitespace separated), in input order.

    Failed replicates are written as comment lines carrying the reason.
    """
    lines = ["# n ell nu sigma2"] if header else []
    for r in records:
        if not r.ok:
            lines.append(f"# {r.n} replicate {r.replicate} {r.status}")
            continue
        if style == "short":
            lines.append(f"{r.n} {_short_sci(r.ell)} {_short_sci(r.nu)} {r.sigma2:.2f}")
        else:
            lines.append(f"{r.n} {shortest(r.ell)} {shortest(r.nu)} {shortest(r.sigma2)}")
    text = "".join(line + "\n" for line in lines)
    if out is not None:
        out.write(text)
    return text


def parse_replicate_csv(text: str) -> List[tuple]:
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        n, ell, nu, s2 = line.split()
        rows.append((int(n), float(ell), float(nu), float(s2)))
    return rows


def write_table_csv(path_or_stream, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Comma separated table with shortest round-trip number formatting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([shortest(v) if isinstance(v, (float, int, np.floating, np.integer))
                    and not isinstance(v, bool) else v for v in row])
    text = buf.getvalue()
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(text)
    elif path_or_stream is not None:
        with open(path_or_stream, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def write_profile_csv(path_or_stream, param: str, rows: Sequence[ProfileRow]) -> str:
    return write_table_csv(path_or_stream, [param, "negloglik", "logdet", "quadform", "status"],
                           [(r.value, r.negloglik, r.logdet, r.quadform, r.status) for r in rows])
