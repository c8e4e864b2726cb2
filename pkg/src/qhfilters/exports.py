"""Deterministic matrix dumps: sparse triplet text and dense CSV.

Both formats are byte-stable for identical inputs: fixed float formatting
(%.17e round-trips IEEE doubles), "\n" newlines, rows emitted in index order.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = ["write_triplets", "write_dense_csv"]


def _fmt(x) -> str:
    if np.iscomplexobj(np.asarray(x)):
        return f"{x.real:.17e} {x.imag:.17e}"
    return f"{x:.17e}"


def write_triplets(matrix, path: str) -> None:
    """Sparse triplet dump: header `rows cols nnz kind`, then one
    `row col value` line per stored entry in (row, col) order; complex
    values as two fields (re, im)."""
    m = sp.coo_array(matrix)
    order = np.lexsort((m.col, m.row))
    kind = "complex" if np.iscomplexobj(m.data) else "real"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{m.shape[0]} {m.shape[1]} {m.nnz} {kind}\n")
        for i in order:
            fh.write(f"{m.row[i]} {m.col[i]} {_fmt(m.data[i])}\n")


def write_dense_csv(matrix, path: str) -> None:
    """Dense CSV dump; complex entries as re+imj literals."""
    a = np.asarray(matrix.todense() if sp.issparse(matrix) else matrix)
    if a.ndim == 1:
        a = a[None, :]
    complex_out = np.iscomplexobj(a)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in a:
            if complex_out:
                cells = [f"{x.real:.17e}{x.imag:+.17e}j" for x in row]
            else:
                cells = [f"{x:.17e}" for x in row]
            fh.write(",".join(cells) + "\n")
