#!/usr/bin/env python3
"""A small dense LU solver, a coordinate-triplet matrix reader, and service-time calibration.

The kernel does not run inside simulations; it measures how long factorizing
and solving take so that the :class:`~oecsim.nodes.ServiceProfile` can be set
from real timings.

Author, Copyright, and License
------------------------------
Copyright (c) 2024 Hauke Daempfling (haukex@zero-g.net)
at the Leibniz Institute of Freshwater Ecology and Inland Fisheries (IGB),
Berlin, Germany, https://www.igb-berlin.de/

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License
along with this program. If not, see https://www.gnu.org/licenses/
"""
import re
import time
from typing import NamedTuple, Optional
from statistics import median
import numpy as np
from igbpyutils.file import Filename
from igbpyutils.iter import no_duplicates
from .nodes import ServiceProfile

PIVOT_TOL = 1e-12
MAX_CALIBRATION_N = 1000

class SingularMatrixError(ArithmeticError): pass
class TripletFormatError(ValueError): pass

class LUFactorization(NamedTuple):
    """``lu`` holds L (unit diagonal, below) and U (on and above the diagonal) of the row-permuted matrix ``A[perm]``."""
    lu :np.ndarray
    perm :np.ndarray

def lu_factor(A) -> LUFactorization:
    """LU factorization with partial pivoting; raises :class:`SingularMatrixError` on a pivot of magnitude <= 1e-12."""
    a = np.array(A, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, not of shape {a.shape}")
    n = a.shape[0]
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= PIVOT_TOL:
            raise SingularMatrixError(f"matrix is singular to working precision (pivot {a[p, k]!r} in column {k})")
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        a[k+1:, k] /= a[k, k]
        a[k+1:, k+1:] -= np.outer(a[k+1:, k], a[k, k+1:])
    return LUFactorization(lu=a, perm=perm)

def lu_solve_factored(fact :LUFactorization, b) -> np.ndarray:
    """Forward and back substitution with a cached factorization."""
    lu, perm = fact
    n = lu.shape[0]
    y = np.array(b, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"right-hand side must have shape ({n},), not {y.shape}")
    y = y[perm]
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    x = np.empty(n)
    for i in range(n-1, -1, -1):
        x[i] = ( y[i] - lu[i, i+1:] @ x[i+1:] ) / lu[i, i]
    return x

def lu_solve(A, b) -> np.ndarray:
    """Solve ``A x = b``."""
    return lu_solve_factored(lu_factor(A), b)

def residual_ok(A, x, b, *, rel :float = 1e-9) -> bool:
    """Whether ``‖Ax−b‖∞ ≤ rel·(‖A‖∞‖x‖∞ + ‖b‖∞)``."""
    A, x, b = np.asarray(A, dtype=float), np.asarray(x, dtype=float), np.asarray(b, dtype=float)
    lhs = np.linalg.norm(A @ x - b, np.inf)
    return bool( lhs <= rel * ( np.linalg.norm(A, np.inf) * np.linalg.norm(x, np.inf) + np.linalg.norm(b, np.inf) ) )

def well_conditioned_matrix(n :int, rng :np.random.Generator) -> np.ndarray:
    """A random, strictly diagonally dominant matrix."""
    a = rng.uniform(-1, 1, (n, n))
    a[np.diag_indices(n)] = np.abs(a).sum(axis=1) + 1
    return a

_ws_re = re.compile(r'\s+')

def read_triplets(file :Filename) -> np.ndarray:
    """Read a square matrix from a text file of coordinate triplets into a dense array.

    The first non-comment line is either ``n nnz`` or a Matrix Market size line
    ``rows cols nnz`` (with ``rows == cols``); it is followed by ``nnz`` lines of
    ``row col value`` with 1-based indices. Lines starting with ``%`` are
    comments. Duplicate entries are an error."""
    header :Optional[tuple[int, int]] = None
    entries :list[tuple[int, int, float]] = []
    with open(file, encoding='UTF-8') as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith('%'): continue
            fields = _ws_re.split(line)
            try:
                if header is None:
                    if len(fields) == 3 and fields[0] != fields[1]:
                        raise TripletFormatError(f"{file}:{lineno}: matrix is not square")
                    if len(fields) not in (2, 3):
                        raise TripletFormatError(f"{file}:{lineno}: bad size line {line!r}")
                    header = ( int(fields[0]), int(fields[-1]) )
                    continue
                if len(fields) != 3:
                    raise TripletFormatError(f"{file}:{lineno}: expected 'row col value', got {line!r}")
                entries.append(( int(fields[0]), int(fields[1]), float(fields[2]) ))
            except ValueError as ex:
                if isinstance(ex, TripletFormatError): raise
                raise TripletFormatError(f"{file}:{lineno}: {ex}") from ex
    if header is None:
        raise TripletFormatError(f"{file}: no size line")
    n, nnz = header
    if n < 1 or nnz < 0:
        raise TripletFormatError(f"{file}: bad size n={n} nnz={nnz}")
    if len(entries) != nnz:
        raise TripletFormatError(f"{file}: header says {nnz} entries but found {len(entries)}")
    try:
        set(no_duplicates( ( (r, c) for r, c, _ in entries ), name='matrix entry' ))
    except ValueError as ex:
        raise TripletFormatError(f"{file}: {ex}") from ex
    a = np.zeros((n, n))
    for r, c, v in entries:
        if not ( 1 <= r <= n and 1 <= c <= n ):
            raise TripletFormatError(f"{file}: entry ({r}, {c}) outside of {n}x{n}")
        a[r-1, c-1] = v
    return a

def _median_ms(samples :list[float]) -> float:
    m = median(samples) * 1000
    return m if m > 0 else time.get_clock_info('perf_counter').resolution * 1000

def calibrate_service_time(n :int, reps :int, *, matrix :Optional[np.ndarray] = None, seed :int = 0) -> ServiceProfile:
    """Time the kernel and return a profile with the median factorization and solve times.

    Uses ``matrix`` if given (``n`` is then taken from it), otherwise a random
    well-conditioned ``n``×``n`` matrix."""
    rng = np.random.default_rng(seed)
    if matrix is None:
        if not 1 <= n <= MAX_CALIBRATION_N:
            raise ValueError(f"n must be between 1 and {MAX_CALIBRATION_N}")
        matrix = well_conditioned_matrix(n, rng)
    n = matrix.shape[0]
    if reps < 5:
        raise ValueError("need at least 5 repetitions")
    b = rng.uniform(-1, 1, n)
    fact = lu_factor(matrix)  # warm-up, and fails early on singular input
    lu_solve_factored(fact, b)
    fact_times :list[float] = []
    solve_times :list[float] = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fact = lu_factor(matrix)
        t1 = time.perf_counter()
        lu_solve_factored(fact, b)
        t2 = time.perf_counter()
        fact_times.append(t1 - t0)
        solve_times.append(t2 - t1)
    return ServiceProfile(solve_time_ms=_median_ms(solve_times), factorization_time_ms=_median_ms(fact_times)).validate()
