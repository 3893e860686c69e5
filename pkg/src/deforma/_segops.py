"""CSR neighborhood reductions for the network layers.

Compiled kernels when numba is importable, numpy loops otherwise; both
paths produce bit-identical results. All reductions run serially so
outputs never depend on thread scheduling.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _seg_max_argmax_py(
    indptr: np.ndarray, indices: np.ndarray, values: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    n, d = indptr.shape[0] - 1, values.shape[1]
    out = np.zeros((n, d), dtype=values.dtype)
    arg = np.full((n, d), -1, dtype=np.int64)
    for v in range(n):
        row = indices[indptr[v] : indptr[v + 1]]
        if row.size == 0:
            continue
        block = values[row]
        pos = np.argmax(block, axis=0)
        out[v] = block[pos, np.arange(d)]
        arg[v] = row[pos]
    return out, arg


def _seg_sum_py(
    indptr: np.ndarray, indices: np.ndarray, values: np.ndarray
) -> np.ndarray:
    n, d = indptr.shape[0] - 1, values.shape[1]
    out = np.zeros((n, d), dtype=values.dtype)
    for v in range(n):
        row = indices[indptr[v] : indptr[v + 1]]
        if row.size:
            out[v] = values[row].sum(axis=0)
    return out


def _scatter_rows_add_py(
    arg: np.ndarray, grad: np.ndarray, out: np.ndarray
) -> None:
    n, d = arg.shape
    for v in range(n):
        for c in range(d):
            a = arg[v, c]
            if a >= 0:
                out[a, c] += grad[v, c]


if HAVE_NUMBA:

    @njit(cache=True)
    def _seg_max_argmax_nb(indptr, indices, values):
        n = indptr.shape[0] - 1
        d = values.shape[1]
        out = np.zeros((n, d), dtype=values.dtype)
        arg = np.full((n, d), -1, dtype=np.int64)
        for v in range(n):
            start, end = indptr[v], indptr[v + 1]
            if start == end:
                continue
            w0 = indices[start]
            for c in range(d):
                out[v, c] = values[w0, c]
                arg[v, c] = w0
            for e in range(start + 1, end):
                w = indices[e]
                for c in range(d):
                    if values[w, c] > out[v, c]:
                        out[v, c] = values[w, c]
                        arg[v, c] = w
        return out, arg

    @njit(cache=True)
    def _seg_sum_nb(indptr, indices, values):
        n = indptr.shape[0] - 1
        d = values.shape[1]
        out = np.zeros((n, d), dtype=values.dtype)
        for v in range(n):
            for e in range(indptr[v], indptr[v + 1]):
                w = indices[e]
                for c in range(d):
                    out[v, c] += values[w, c]
        return out

    @njit(cache=True)
    def _scatter_rows_add_nb(arg, grad, out):
        n, d = arg.shape
        for v in range(n):
            for c in range(d):
                a = arg[v, c]
                if a >= 0:
                    out[a, c] += grad[v, c]


def seg_max_argmax(
    indptr: np.ndarray, indices: np.ndarray, values: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row elementwise max over CSR neighbor rows of ``values``.

    Empty rows yield zeros. The returned ``arg`` holds the source row
    index per component (ties go to the lowest index because neighbor
    lists are ascending and comparison is strict), -1 on empty rows.
    """
    if HAVE_NUMBA:
        return _seg_max_argmax_nb(indptr, indices, values)
    return _seg_max_argmax_py(indptr, indices, values)


def seg_sum(
    indptr: np.ndarray, indices: np.ndarray, values: np.ndarray
) -> np.ndarray:
    """Per-row sum over CSR neighbor rows of ``values``; empty rows zero."""
    if HAVE_NUMBA:
        return _seg_sum_nb(indptr, indices, values)
    return _seg_sum_py(indptr, indices, values)


def scatter_rows_add(
    arg: np.ndarray, grad: np.ndarray, out: np.ndarray
) -> None:
    """Accumulate ``grad[v, c]`` into ``out[arg[v, c], c]``, skipping -1.

    Reverse of the max reduction: gradients flow only to the component's
    argmax source row.
    """
    if HAVE_NUMBA:
        _scatter_rows_add_nb(arg, grad, out)
    else:
        _scatter_rows_add_py(arg, grad, out)
