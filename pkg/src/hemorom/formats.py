"""Plain-text artifact formats.

``ROMFLD v1``  cell fields: header ``ROMFLD v1 <scalar|vector> <nx> <ny>``,
then one line per cell in row-major order.

``ROMMAT v1``  matrices: header ``ROMMAT v1 <rows> <cols>``, one row per line.

``ROMTEN v1``  3-tensors: header ``ROMTEN v1 <d1> <d2> <d3>``, then the
``d1 * d2`` rows of length ``d3`` in row-major order.

All numbers are written with 17 significant digits so that a write/read
round trip reproduces every float64 bit for bit.
"""

import hashlib
from pathlib import Path

import numpy as np

from .errors import BundleError

FMT = "%.17g"


def _fmt_rows(arr):
    arr = np.atleast_2d(arr)
    return "\n".join(" ".join(FMT % x for x in row) for row in arr)


def write_field(path, values, nx, ny):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        kind = "scalar"
        body = "\n".join(FMT % x for x in values)
    elif values.ndim == 2 and values.shape[1] == 2:
        kind = "vector"
        body = _fmt_rows(values)
    else:
        raise ValueError(f"cannot write field of shape {values.shape}")
    if values.shape[0] != nx * ny:
        raise ValueError(f"field has {values.shape[0]} cells, mesh has {nx * ny}")
    Path(path).write_text(f"ROMFLD v1 {kind} {nx} {ny}\n{body}\n")


def read_field(path):
    """Read a ``ROMFLD v1`` file; returns ``(values, nx, ny)``."""
    lines = _read_lines(path)
    head = lines[0].split()
    if head[:2] != ["ROMFLD", "v1"] or len(head) != 5 or head[2] not in ("scalar", "vector"):
        raise BundleError(f"{path}: not a ROMFLD v1 file")
    nx, ny = int(head[3]), int(head[4])
    data = np.array([[float(x) for x in ln.split()] for ln in lines[1:]], dtype=float)
    ncomp = 1 if head[2] == "scalar" else 2
    if data.shape != (nx * ny, ncomp):
        raise BundleError(f"{path}: expected {nx * ny}x{ncomp} values, found {data.shape}")
    return (data[:, 0] if ncomp == 1 else data), nx, ny


def format_matrix(mat):
    """``ROMMAT v1`` text block of a matrix (no trailing newline)."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    rows, cols = mat.shape
    head = f"ROMMAT v1 {rows} {cols}"
    return head + ("\n" + _fmt_rows(mat) if mat.size else "")


def parse_matrix(lines, start=0, source="matrix"):
    """Parse a ``ROMMAT v1`` block from ``lines[start:]``.

    Returns the matrix and the index of the first line after the block.
    """
    head = lines[start].split() if start < len(lines) else []
    if head[:2] != ["ROMMAT", "v1"] or len(head) != 4:
        raise BundleError(f"{source}: expected a ROMMAT v1 header at line {start + 1}")
    rows, cols = int(head[2]), int(head[3])
    n_lines = rows if cols else 0
    body = lines[start + 1:start + 1 + n_lines]
    try:
        mat = np.array([[float(x) for x in ln.split()] for ln in body], dtype=float).reshape(rows, cols)
    except ValueError as exc:
        raise BundleError(f"{source}: malformed ROMMAT block ({exc})") from None
    return mat, start + 1 + n_lines


def write_matrix(path, mat):
    Path(path).write_text(format_matrix(mat) + "\n")


def read_matrix(path):
    lines = _read_lines(path)
    mat, end = parse_matrix(lines, 0, str(path))
    if end != len(lines):
        raise BundleError(f"{path}: trailing data after matrix")
    return mat


def write_tensor(path, ten):
    ten = np.asarray(ten, dtype=float)
    if ten.ndim != 3:
        raise ValueError("tensor must be three-dimensional")
    d1, d2, d3 = ten.shape
    body = _fmt_rows(ten.reshape(d1 * d2, d3)) if ten.size else ""
    Path(path).write_text(f"ROMTEN v1 {d1} {d2} {d3}\n{body}\n")


def read_tensor(path):
    lines = _read_lines(path)
    head = lines[0].split()
    if head[:2] != ["ROMTEN", "v1"] or len(head) != 5:
        raise BundleError(f"{path}: not a ROMTEN v1 file")
    d1, d2, d3 = (int(x) for x in head[2:])
    data = [[float(x) for x in ln.split()] for ln in lines[1:]]
    return np.array(data, dtype=float).reshape(d1, d2, d3)


def _read_lines(path):
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise BundleError(f"missing artifact {path}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise BundleError(f"{path}: empty file")
    return lines


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
