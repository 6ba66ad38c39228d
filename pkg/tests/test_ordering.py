"""Row/column ordering heuristics and the damping-row interleave."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from structqr.errors import DimensionError
from structqr.householder import dense_qr
from structqr.matrices import (
    Permutation,
    TripletMatrix,
    apply_row_permutation,
    dense_to_triplet,
    to_dense,
)
from structqr.ordering import (
    bandwidth,
    column_fill_reducing_permutation,
    lm_interleave_permutation,
    pattern_row_spans,
    row_banding_permutation,
)
from structqr.structured import banded_from_profile, block_banded_qr


def _banded_pattern(nblocks, brows, bcols, overlap):
    """Structural block-banded staircase as a TripletMatrix of ones."""
    entries = []
    step = bcols - overlap
    for k in range(nblocks):
        for i in range(brows):
            for j in range(bcols):
                entries.append((k * brows + i, k * step + j, 1.0))
    rows = nblocks * brows
    cols = step * (nblocks - 1) + bcols
    return TripletMatrix.from_entries(rows, cols, entries)


def test_pattern_row_spans_and_sentinels():
    t = TripletMatrix.from_entries(
        4, 5, [(0, 1, 1.0), (0, 3, 1.0), (2, 0, 1.0), (3, 4, 1.0)]
    )
    first, last = pattern_row_spans(t)
    assert_array_equal(first, [1, 5, 0, 4])  # row 1 empty -> sentinel = cols
    assert_array_equal(last, [3, 5, 0, 4])
    with pytest.raises(TypeError):
        pattern_row_spans(np.eye(3))


def test_bandwidth_measures():
    eye = dense_to_triplet(np.eye(4))
    assert bandwidth(eye) == 1
    bidiag = dense_to_triplet(np.eye(4) + np.diag(np.ones(3), 1))
    assert bandwidth(bidiag) == 2
    assert bandwidth(TripletMatrix.from_entries(3, 3, [])) == 0


def test_row_banding_identity_on_banded():
    t = _banded_pattern(5, 4, 3, 1)
    p = row_banding_permutation(t)
    assert_array_equal(p.order, np.arange(t.rows))


def test_row_banding_shuffle_round_trip():
    rng = np.random.default_rng(4)
    t = _banded_pattern(6, 3, 3, 1)
    bw = bandwidth(t)
    for _ in range(10):
        shuffle = Permutation.from_order(rng.permutation(t.rows))
        mixed = apply_row_permutation(shuffle, t)
        restored = apply_row_permutation(row_banding_permutation(mixed), mixed)
        assert bandwidth(restored) == bw
        # the restored profile is sorted by (first, last)
        first, last = pattern_row_spans(restored)
        keys = list(zip(first.tolist(), last.tolist()))
        assert keys == sorted(keys)


def test_row_banding_idempotent():
    rng = np.random.default_rng(5)
    t = apply_row_permutation(
        Permutation.from_order(rng.permutation(18)), _banded_pattern(6, 3, 3, 1)
    )
    p = row_banding_permutation(t)
    sorted_once = apply_row_permutation(p, t)
    again = row_banding_permutation(sorted_once)
    assert_array_equal(again.order, np.arange(t.rows))


def test_row_banding_zero_rows_last_and_dense_row_placement():
    # rows: narrow at 0, dense, empty, narrow at 1
    t = TripletMatrix.from_entries(
        4,
        4,
        [(0, 0, 1.0), (0, 1, 1.0)]
        + [(1, j, 1.0) for j in range(4)]
        + [(3, 1, 1.0)],
    )
    p = row_banding_permutation(t)
    # (first,last): row0 (0,1), row1 (0,3), row2 (4,4), row3 (1,1)
    assert_array_equal(p.order, [0, 1, 3, 2])
    # dense row follows the narrower row that also starts at column 0
    assert list(p.order).index(1) > list(p.order).index(0)
    assert p.order[-1] == 2  # empty row last


def test_column_fill_identity_and_round_trip():
    t = _banded_pattern(4, 3, 3, 1)
    assert_array_equal(column_fill_reducing_permutation(t).order, np.arange(t.cols))

    # staircase with distinct (min_row, degree) keys -> exact recovery
    entries = []
    for j in range(6):
        for i in range(3):
            entries.append((j + i, j, 1.0))
    orig = TripletMatrix.from_entries(8, 6, entries)
    rng = np.random.default_rng(6)
    shuffle = rng.permutation(6)
    mixed = TripletMatrix(
        8, 6, orig.row_idx.copy(), shuffle[orig.col_idx], orig.values.copy()
    )
    p = column_fill_reducing_permutation(mixed)
    restored = TripletMatrix(
        8, 6, mixed.row_idx.copy(), p.map[mixed.col_idx], mixed.values.copy()
    )
    assert_array_equal(to_dense(restored), to_dense(orig))


def test_column_fill_arrow_matrix_dense_column_last():
    n = 5
    entries = [(0, j, 1.0) for j in range(n)]  # dense first row: all tie at 0
    for i in range(1, n):
        entries.append((i, i - 1, 1.0))  # subdiagonal band
        entries.append((i, n - 1, 1.0))  # dense coupling column
    t = TripletMatrix.from_entries(n, n, entries)
    p = column_fill_reducing_permutation(t)
    assert p.order[-1] == n - 1  # max degree sorts after sparser ties
    with pytest.raises(TypeError):
        column_fill_reducing_permutation(np.eye(2))


def test_column_fill_empty_column_last():
    t = TripletMatrix.from_entries(3, 3, [(0, 0, 1.0), (1, 2, 1.0)])
    p = column_fill_reducing_permutation(t)
    assert p.order[-1] == 1


def test_interleave_diagonal_and_bidiagonal():
    # diagonal R: perfect alternation
    p = lm_interleave_permutation(np.array([0, 1, 2]), 3)
    assert_array_equal(p.order, [0, 3, 1, 4, 2, 5])
    # bidiagonal R: same alternation, bandwidth 2 after stacking
    p = lm_interleave_permutation(np.array([1, 2, 2]), 3)
    assert_array_equal(p.order, [0, 3, 1, 4, 2, 5])
    stacked = np.zeros((6, 3))
    stacked[:3] = np.eye(3) + np.diag(np.ones(2), 1)
    stacked[3:] = np.eye(3)
    permuted = dense_to_triplet(to_dense(dense_to_triplet(stacked))[p.inverse().map])
    assert bandwidth(permuted) == 2


def test_interleave_errors():
    with pytest.raises(DimensionError):
        lm_interleave_permutation(np.array([0, 1]), 3)


def _stack_pattern(profile, m):
    """[R; D] structural pattern for an upper-triangular R with the given
    per-row last-column profile and a diagonal D."""
    entries = []
    for i in range(m):
        for j in range(i, profile[i] + 1):
            entries.append((i, j, 1.0))
        entries.append((m + i, i, 1.0))
    return TripletMatrix.from_entries(2 * m, m, entries)


def test_interleave_bandwidth_bound_random_profiles():
    rng = np.random.default_rng(7)
    for _ in range(100):
        m = int(rng.integers(2, 12))
        width = int(rng.integers(1, m + 1))
        profile = np.minimum(
            m - 1, np.arange(m) + rng.integers(0, width, size=m)
        )
        r_pattern = TripletMatrix.from_entries(
            m,
            m,
            [(i, j, 1.0) for i in range(m) for j in range(i, profile[i] + 1)],
        )
        bw = bandwidth(r_pattern)
        p = lm_interleave_permutation(profile, m)
        stacked = _stack_pattern(profile, m)
        permuted = apply_row_permutation(p.inverse(), stacked)
        assert bandwidth(permuted) <= bw + 1


def test_interleave_dense_r_factorizable():
    rng = np.random.default_rng(8)
    for m, width in [(4, 4), (6, 2), (9, 3), (20, 4)]:
        profile = np.minimum(m - 1, np.arange(m) + width - 1)
        r = np.triu(rng.standard_normal((m, m)))
        for i in range(m):
            r[i, profile[i] + 1 :] = 0.0
        r[np.arange(m), np.arange(m)] += 3.0
        d = np.abs(rng.standard_normal(m)) + 0.5
        p = lm_interleave_permutation(profile, m)
        # build the interleaved banded matrix row by row
        firsts, lasts, segs = [], [], []
        for src in p.order:
            if src < m:
                firsts.append(src)
                lasts.append(int(profile[src]))
                segs.append(r[src, src : profile[src] + 1])
            else:
                j = src - m
                firsts.append(j)
                lasts.append(j)
                segs.append(np.array([d[j]]))
        banded = banded_from_profile(
            np.array(firsts), np.array(lasts), segs, m, dtype=np.float64
        )
        f = block_banded_qr(banded)
        stacked = np.vstack([r, np.diag(d)])[p.order]
        b = rng.standard_normal(2 * m)
        x = f.solve_r(f.q_transpose_apply(b)[:m])
        ref = np.linalg.lstsq(stacked, b, rcond=None)[0]
        assert np.linalg.norm(x - ref) <= 1e-8 * max(np.linalg.norm(ref), 1.0)
        # dense upper-triangular R: alternation pattern is the full stack
        if width == m:
            assert_array_equal(
                p.order, np.arange(2 * m).reshape(2, m).T.reshape(-1)
            )
