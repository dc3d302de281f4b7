"""Matrix Market coordinate reader and writer."""

from __future__ import annotations

import gzip
import os
from typing import Union

import numpy as np

from .errors import MatrixMarketError
from .sparse import CscMatrix, Triplets

PathLike = Union[str, "os.PathLike[str]"]

_FIELDS = ("real", "integer")
_SYMMETRIES = ("general", "symmetric")


def _open(path: PathLike):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="ascii", errors="replace")
    return open(path, "r", encoding="ascii", errors="replace")


def _parse_header(line: str) -> tuple[str, str]:
    tokens = line.strip().split()
    if len(tokens) != 5 or tokens[0] != "%%MatrixMarket":
        raise MatrixMarketError("expected '%%MatrixMarket matrix coordinate <field> <symmetry>'", 1)
    obj, fmt, fld, sym = (t.lower() for t in tokens[1:])
    if obj != "matrix":
        raise MatrixMarketError(f"unsupported object '{obj}'", 1)
    if fmt != "coordinate":
        raise MatrixMarketError(f"unsupported format '{fmt}' (only coordinate)", 1)
    if fld not in _FIELDS:
        raise MatrixMarketError(f"unsupported field '{fld}' (only real or integer)", 1)
    if sym not in _SYMMETRIES:
        raise MatrixMarketError(f"unsupported symmetry '{sym}' (only general or symmetric)", 1)
    return fld, sym


def mm_read(path: PathLike) -> Triplets:
    """Read a coordinate Matrix Market file into 0-based triplets.

    Symmetric files are expanded to both triangles; diagonal entries are
    not duplicated.  Explicit zeros are kept.
    """
    with _open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    fld, sym = _parse_header(lines[0])

    lineno = 1
    while lineno < len(lines) and (not lines[lineno].strip() or lines[lineno].lstrip().startswith("%")):
        lineno += 1
    if lineno >= len(lines):
        raise MatrixMarketError("missing size line", lineno + 1)
    size = lines[lineno].split()
    try:
        nrows, ncols, nnz = (int(s) for s in size)
    except ValueError:
        raise MatrixMarketError("size line must hold three integers", lineno + 1) from None
    if nrows < 0 or ncols < 0 or nnz < 0:
        raise MatrixMarketError("negative dimension in size line", lineno + 1)
    body_start = lineno + 1

    body = [ln for ln in lines[body_start:] if ln.strip() and not ln.lstrip().startswith("%")]
    if len(body) != nnz:
        raise MatrixMarketError(f"header announces {nnz} entries, found {len(body)}", lineno + 1)
    try:
        data = np.array(" ".join(body).split(), dtype=np.float64)
        if data.size != 3 * nnz:
            raise ValueError
        data = data.reshape(nnz, 3)
    except ValueError:
        _locate_bad_entry(lines, body_start)
        raise MatrixMarketError("malformed entry", body_start + 1) from None

    rows = data[:, 0].astype(np.int64) - 1
    cols = data[:, 1].astype(np.int64) - 1
    vals = data[:, 2].copy()
    if np.any(data[:, 0] != np.floor(data[:, 0])) or np.any(data[:, 1] != np.floor(data[:, 1])):
        _locate_bad_entry(lines, body_start)
    bad = np.nonzero((rows < 0) | (rows >= nrows) | (cols < 0) | (cols >= ncols))[0]
    if bad.size:
        k = int(bad[0])
        raise MatrixMarketError(
            f"entry ({rows[k] + 1}, {cols[k] + 1}) out of range for {nrows}x{ncols}",
            _entry_line(lines, body_start, k))
    if sym == "symmetric":
        if nrows != ncols:
            raise MatrixMarketError("symmetric matrix must be square", lineno + 1)
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    return Triplets(nrows, ncols, rows, cols, vals)


def _entry_line(lines: list[str], start: int, k: int) -> int:
    seen = -1
    for idx in range(start, len(lines)):
        s = lines[idx].strip()
        if s and not s.startswith("%"):
            seen += 1
            if seen == k:
                return idx + 1
    return len(lines)


def _locate_bad_entry(lines: list[str], start: int) -> None:
    for idx in range(start, len(lines)):
        s = lines[idx].strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        try:
            if len(parts) != 3:
                raise ValueError
            int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError(f"malformed entry '{s}'", idx + 1) from None


def mm_write(path: PathLike, a: CscMatrix | Triplets, comment: str | None = None) -> None:
    """Write a general real coordinate file with 1-based indices."""
    if isinstance(a, CscMatrix):
        rows, cols, vals = a.row_idx, a.col_indices(), a.values
    else:
        rows, cols, vals = np.asarray(a.rows), np.asarray(a.cols), np.asarray(a.values)
    with open(os.fspath(path), "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for ln in comment.splitlines():
                fh.write(f"% {ln}\n")
        fh.write(f"{a.nrows} {a.ncols} {len(vals)}\n")
        fh.writelines(f"{r + 1} {c + 1} {v:.17g}\n"
                      for r, c, v in zip(rows.tolist(), cols.tolist(), vals.tolist()))
