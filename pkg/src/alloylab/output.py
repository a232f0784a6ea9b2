"""Deterministic CSV and JSON writers.

Floats are written with ``repr`` so a value read back is bit-identical, and
nothing time-dependent ever enters a CSV; two runs with the same inputs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def atomic_write(path, data: bytes) -> Path:
    """Write ``data`` to a temporary sibling of ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_bytes(columns: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> bytes:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue().encode()


def write_csv(path, columns, rows, comments=()) -> Path:
    return atomic_write(path, csv_bytes(columns, rows, comments))


def write_json(path, payload) -> Path:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    return atomic_write(path, (text + "\n").encode())


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def content_hash(payload) -> str:
    """sha256 of the canonical JSON encoding of ``payload``."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and data rows of a file written by :func:`write_csv` (comments dropped)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def matrix_triplets(matrix) -> list[tuple[int, int, float]]:
    """Nonzero entries as ``(row, col, value)`` in row-major order."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    return [(int(coo.row[i]), int(coo.col[i]), float(coo.data[i])) for i in order if coo.data[i] != 0.0]


# --------------------------------------------------------------------------
# Plot data


def _ct_rows(fit):
    pred = fit.prediction()
    return [(s, v, p) for s, v, p in zip(fit.separation, fit.log_norm, pred)]


def _table_rows(result):
    return list(result.rows())


PLOT_KINDS = {
    "combes-thomas": (("separation", "log_norm", "fit_prediction"), _ct_rows),
    "ids": (("energy", "ids_mean", "ids_stderr", "l", "bc"), _table_rows),
    "wegner": (("l", "e1", "e2", "n", "mean", "stderr", "ratio"), _table_rows),
    "lifshitz": (("energy", "ids", "e_minus_e0", "exponent"), _table_rows),
    "msa": (("j", "l", "m", "q", "failure_bound"), _table_rows),
}

PLOT_DOC = {
    "combes-thomas": "separation = |x - y|; log_norm = log ||chi_x R(z) chi_y||; fit_prediction = intercept - rate * separation",
    "ids": "ids_mean, ids_stderr = disorder mean and standard error of l^-d #{eigenvalues < energy}",
    "wegner": "mean, stderr = mean trace of the spectral projector on ]e1, e2[; ratio = mean / ((e2 - e1) l^d)",
    "lifshitz": "exponent = log|log ids| / log(e_minus_e0)",
    "msa": "failure_bound = l^-q at scale j",
}


def emit_plot_data(result, kind: str, path) -> Path:
    """Write ``result`` as a tidy long-format CSV, one observation per row.

    ``result=None`` produces a header-only file.
    """
    if kind not in PLOT_KINDS:
        raise ArgumentError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_KINDS)}")
    columns, extract = PLOT_KINDS[kind]
    rows = [] if result is None else extract(result)
    comments = [f"kind: {kind}", f"columns: {PLOT_DOC[kind]}"]
    return write_csv(path, columns, rows, comments)
