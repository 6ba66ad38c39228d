"""Permutation heuristics: banded row ordering, fill-reducing column
ordering, and the damping-row interleave used by the LM solvers.

The heuristics are plain lexicographic sorts on sparsity-profile keys.  For
matrices that are exact row (column) shuffles of banded matrices -- which is
what the benchmark problems produce -- the sort recovers the banded profile
exactly; no claim is made about general fill minimization.
"""

import numpy as np

from .errors import DimensionError
from .matrices import Permutation, TripletMatrix


def pattern_row_spans(pattern):
    """(first, last) structurally-nonzero column per row; empty rows get
    first = last = cols (a sentinel sorting after every real column)."""
    if not isinstance(pattern, TripletMatrix):
        raise TypeError("expected a TripletMatrix pattern")
    first = np.full(pattern.rows, pattern.cols, dtype=np.int64)
    last = np.full(pattern.rows, -1, dtype=np.int64)
    np.minimum.at(first, pattern.row_idx, pattern.col_idx)
    np.maximum.at(last, pattern.row_idx, pattern.col_idx)
    last[last < 0] = pattern.cols
    return first, last


def bandwidth(pattern):
    """Max row span (last - first + 1) over structurally nonempty rows."""
    first, last = pattern_row_spans(pattern)
    occupied = last < pattern.cols
    if not occupied.any():
        return 0
    return int((last[occupied] - first[occupied] + 1).max())


def row_banding_permutation(pattern):
    """Sort rows by (first nonzero column, last nonzero column), stable.

    Rows that are entirely zero sort last (stable among themselves).  For a
    row-shuffled banded matrix this restores the banded profile exactly.
    """
    first, last = pattern_row_spans(pattern)
    order = np.lexsort((last, first))
    return Permutation.from_order(order)


def column_fill_reducing_permutation(pattern):
    """Sort columns by (minimum row index, column degree), stable.

    Empty columns sort last.  The degree tiebreak pushes dense coupling
    columns (arrowheads) behind sparser columns that start at the same row.
    """
    if not isinstance(pattern, TripletMatrix):
        raise TypeError("expected a TripletMatrix pattern")
    min_row = np.full(pattern.cols, pattern.rows, dtype=np.int64)
    degree = np.zeros(pattern.cols, dtype=np.int64)
    np.minimum.at(min_row, pattern.col_idx, pattern.row_idx)
    np.add.at(degree, pattern.col_idx, 1)
    degree[degree == 0] = pattern.rows + 1  # empty columns after everything
    order = np.lexsort((degree, min_row))
    return Permutation.from_order(order)


def lm_interleave_permutation(r_profile, m):
    """Interleave the m rows of a diagonal D into an upper-triangular R.

    `r_profile[i]` is the last structurally-nonzero column of R's row i.
    Input indices [0, m) are R's rows, [m, 2m) are D's rows; D's row j is
    placed immediately after the last R row whose band covers column j, so
    the permuted [R; D] pattern stays banded with at most one extra entry of
    row span.
    """
    r_profile = np.asarray(r_profile, dtype=np.int64)
    if r_profile.shape != (m,):
        raise DimensionError("profile length mismatch", r_profile.shape, (m,))
    profile = np.maximum(r_profile, np.arange(m, dtype=np.int64))
    # cover[j] = last (largest) row index whose span [i, profile[i]] holds j
    cover = np.arange(m, dtype=np.int64)
    for i in range(m):
        cover[i : profile[i] + 1] = np.maximum(cover[i : profile[i] + 1], i)
    d_order = np.argsort(cover, kind="stable")
    order = np.empty(2 * m, dtype=np.int64)
    pos = 0
    ptr = 0
    for i in range(m):
        order[pos] = i
        pos += 1
        while ptr < m and cover[d_order[ptr]] == i:
            order[pos] = m + d_order[ptr]
            pos += 1
            ptr += 1
    return Permutation.from_order(order)
