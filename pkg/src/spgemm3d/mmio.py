"""Matrix Market coordinate files with exact round-trips.

The reader accepts coordinate files with integer, real, or pattern
fields and general or symmetric symmetry. Symmetric files are expanded
(each off-diagonal entry is mirrored), indices shift from 1-based to
0-based, and duplicate coordinates merge with the semiring add. Every
malformed line is reported with its line number. The writer always
emits general symmetry, integer values as integers, and reals via
``repr``, whose shortest round-trip form reproduces the exact double.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedField
from .semiring import (
    FLOAT64_PLUS_TIMES,
    INT64_PLUS_TIMES,
    PATTERN,
    Semiring,
    infer_semiring,
)
from .sparse import SparseMat, from_coo

_FIELD_SR = {
    "integer": INT64_PLUS_TIMES,
    "real": FLOAT64_PLUS_TIMES,
    "pattern": PATTERN,
}


def _open_text(source, mode: str):
    if isinstance(source, (str, Path)):
        return open(source, mode, encoding="ascii"), True
    return source, False


def read_mm(source) -> tuple[SparseMat, Semiring]:
    """Parse one coordinate file; returns the matrix and its semiring."""
    f, owned = _open_text(source, "r")
    try:
        return _parse(f)
    finally:
        if owned:
            f.close()


def _parse(f) -> tuple[SparseMat, Semiring]:
    banner = f.readline()
    if not banner:
        raise ParseError("line 1: empty file")
    parts = banner.split()
    if len(parts) != 5 or parts[0].lower() != "%%matrixmarket":
        raise ParseError(f"line 1: not a MatrixMarket banner: {banner.strip()!r}")
    obj, fmt, field, sym = (p.lower() for p in parts[1:])
    if obj != "matrix":
        raise UnsupportedField(f"line 1: object {obj!r} not supported")
    if fmt != "coordinate":
        raise UnsupportedField(f"line 1: format {fmt!r} not supported")
    if field not in _FIELD_SR:
        raise UnsupportedField(f"line 1: field {field!r} not supported")
    if sym not in ("general", "symmetric"):
        raise UnsupportedField(f"line 1: symmetry {sym!r} not supported")
    sr = _FIELD_SR[field]
    pattern = field == "pattern"

    lineno = 1
    size = None
    while size is None:
        line = f.readline()
        lineno += 1
        if not line:
            raise ParseError(f"line {lineno}: file ends before the size line")
        text = line.strip()
        if not text or text.startswith("%"):
            continue
        tokens = text.split()
        if len(tokens) != 3:
            raise ParseError(f"line {lineno}: size line needs "
                             f"'rows cols entries', got {text!r}")
        try:
            size = tuple(int(t) for t in tokens)
        except ValueError:
            raise ParseError(f"line {lineno}: bad size line {text!r}") from None
        if any(x < 0 for x in size):
            raise ParseError(f"line {lineno}: negative size in {text!r}")
    nrows, ncols, count = size
    if sym == "symmetric" and nrows != ncols:
        raise ParseError(f"line {lineno}: symmetric matrix must be square, "
                         f"got {nrows} x {ncols}")

    want_tokens = 2 if pattern else 3
    rows, cols, vals = [], [], []
    seen = 0
    while seen < count:
        line = f.readline()
        lineno += 1
        if not line:
            raise ParseError(f"line {lineno}: expected {count} entries, "
                             f"file ended after {seen}")
        text = line.strip()
        if not text or text.startswith("%"):
            continue
        tokens = text.split()
        if len(tokens) != want_tokens:
            raise ParseError(f"line {lineno}: expected {want_tokens} fields, "
                             f"got {text!r}")
        try:
            i = int(tokens[0])
            j = int(tokens[1])
        except ValueError:
            raise ParseError(f"line {lineno}: bad index in {text!r}") from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise ParseError(f"line {lineno}: entry ({i}, {j}) outside "
                             f"{nrows} x {ncols}")
        if pattern:
            v = True
        else:
            try:
                v = int(tokens[2]) if field == "integer" else float(tokens[2])
            except ValueError:
                raise ParseError(
                    f"line {lineno}: bad {field} value {tokens[2]!r}") from None
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)
        if sym == "symmetric" and i != j:
            rows.append(j - 1)
            cols.append(i - 1)
            vals.append(v)
        seen += 1

    for line in f:
        lineno += 1
        text = line.strip()
        if text and not text.startswith("%"):
            raise ParseError(f"line {lineno}: extra data after "
                             f"{count} entries: {text!r}")

    mat = from_coo(nrows, ncols,
                   np.asarray(rows, dtype=np.int64),
                   np.asarray(cols, dtype=np.int64),
                   sr.values(vals), sr, on_duplicate="merge")
    return mat, sr


def write_mm(target, m: SparseMat, sr: Semiring | None = None) -> None:
    """Write one matrix as general coordinate Matrix Market."""
    if sr is None:
        sr = infer_semiring(m.values)
    kind = np.dtype(sr.dtype).kind
    if kind == "i":
        field = "integer"
    elif kind == "f":
        field = "real"
    elif kind == "b":
        field = "pattern"
    else:
        raise UnsupportedField(f"cannot write dtype kind {kind!r}")

    f, owned = _open_text(target, "w")
    try:
        f.write(f"%%MatrixMarket matrix coordinate {field} general\n")
        f.write(f"{m.nrows} {m.ncols} {m.nnz}\n")
        cols = m.entry_cols()
        if field == "pattern":
            for r, c in zip(m.row_idx.tolist(), cols.tolist()):
                f.write(f"{r + 1} {c + 1}\n")
        elif field == "integer":
            for r, c, v in zip(m.row_idx.tolist(), cols.tolist(),
                               m.values.tolist()):
                f.write(f"{r + 1} {c + 1} {v}\n")
        else:
            for r, c, v in zip(m.row_idx.tolist(), cols.tolist(),
                               m.values.tolist()):
                f.write(f"{r + 1} {c + 1} {v!r}\n")
    finally:
        if owned:
            f.close()


def mm_to_string(m: SparseMat, sr: Semiring | None = None) -> str:
    buf = io.StringIO()
    write_mm(buf, m, sr)
    return buf.getvalue()
