"""Long-format CSV input and output.

Columns are ``subject,time,y`` followed by numeric covariate columns; one
row per observed (subject, time) pair.  Missing visits are absent rows.
Subjects keep their order of first appearance.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .model import Dataset, ZibrError

REQUIRED = ("subject", "time", "y")


class InputError(ZibrError):
    """Malformed input file; ``line`` is the 1-based line number when known."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _number(cell: str, column: str, line: int) -> float:
    try:
        val = float(cell)
    except ValueError:
        raise InputError(f"non-numeric value {cell!r} in column {column!r}", line) from None
    if not math.isfinite(val):
        raise InputError(f"non-finite value {cell!r} in column {column!r}", line)
    return val


def _columns(requested, available, what):
    if requested is None:
        return list(available)
    missing = [c for c in requested if c not in available]
    if missing:
        raise InputError(f"unknown {what} column(s) {missing}; available: {list(available)}")
    return list(requested)


def ingest_csv(path, x_cols=None, z_cols=None) -> Dataset:
    """Read a long-format file into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
    x_cols, z_cols : list of str, optional
        Covariates of the presence and abundance parts.  Each defaults to
        every column after ``y``; an empty list gives an intercept-only part.

    Raises
    ------
    InputError
        Missing header columns, non-numeric cells, ``y`` outside ``[0, 1)``
        or a repeated (subject, time) pair, with the offending line number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError("empty file; expected a header row", 1) from None
        if header[:3] != list(REQUIRED):
            raise InputError(f"header must start with {','.join(REQUIRED)}; got {header[:3]}", 1)
        covs = header[3:]
        if len(set(covs)) != len(covs):
            raise InputError("duplicate covariate column names", 1)
        x_cols = _columns(x_cols, covs, "x")
        z_cols = _columns(z_cols, covs, "z")
        xi = [covs.index(c) for c in x_cols]
        zi = [covs.index(c) for c in z_cols]

        ids, pos = [], {}
        index, time, y, cov = [], [], [], []
        seen = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"expected {len(header)} fields, found {len(row)}", line)
            subject = row[0].strip()
            t = _number(row[1], "time", line)
            val = _number(row[2], "y", line)
            if not 0.0 <= val < 1.0:
                hint = " (rescale to pull ones inside (0, 1))" if val == 1.0 else ""
                raise InputError(f"y = {row[2].strip()} outside [0, 1){hint}", line)
            if (subject, t) in seen:
                raise InputError(f"duplicate time {row[1].strip()} for subject {subject!r} "
                                 f"(first on line {seen[subject, t]})", line)
            seen[subject, t] = line
            if subject not in pos:
                pos[subject] = len(ids)
                ids.append(subject)
            index.append(pos[subject])
            time.append(t)
            y.append(val)
            cov.append([_number(c, covs[j], line) for j, c in enumerate(row[3:])])
    if not ids:
        raise InputError("no data rows")
    cov = np.asarray(cov, dtype=float).reshape(len(y), len(covs))
    return Dataset(tuple(ids), index, time, y, cov[:, xi], cov[:, zi],
                   tuple(x_cols), tuple(z_cols))


def _fmt(v: float) -> str:
    return repr(float(v))


def emit_csv(data: Dataset, path=None) -> str:
    """Write ``data`` in the canonical long format and return the text.

    Covariate columns are the presence-part columns followed by any
    abundance-part columns not already written.  Numbers use the shortest
    repr that round-trips, so ``emit_csv(ingest_csv(f))`` reproduces a file
    written by this function byte for byte.
    """
    cols = list(data.x_names)
    src = [("x", j) for j in range(data.p)]
    for j, name in enumerate(data.z_names):
        if name in cols:
            k = cols.index(name)
            kind, jj = src[k]
            if not np.array_equal(data.x[:, jj], data.z[:, j]):
                raise ZibrError(f"column {name!r} differs between the two model parts")
            continue
        cols.append(name)
        src.append(("z", j))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(REQUIRED) + cols)
    for k in range(data.n_obs):
        row = [str(data.ids[data.index[k]]), _fmt(data.time[k]), _fmt(data.y[k])]
        row += [_fmt((data.x if kind == "x" else data.z)[k, j]) for kind, j in src]
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
