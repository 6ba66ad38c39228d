"""Dense Householder QR and the compressed-WY blocks built on top of it.

The factorization is stored LAPACK-style: R in the upper triangle of
`packed`, reflector tails below the diagonal (with an implicit unit on the
diagonal), scalings in `tau`.  Each reflector is H_k = I - tau_k v_k v_k^T,
and tau_k = 2/||v_k||^2, so H_k is orthogonal and symmetric.

The pivot sign is chosen so that R's diagonal is nonnegative, which makes
the factorization of a fixed input bit-deterministic -- QR is otherwise
unique only up to column signs.

A run of r consecutive reflectors compresses into (Y, T) with
Q = I + Y T Y^T (Y lower trapezoidal with unit diagonal, T upper
triangular); applying Q^T to a block of columns is then three matrix
products instead of r rank-1 updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kernels
from .errors import DimensionError, SingularMatrixError

#: Default WY panel width: level-3 efficiency vs T-matrix overhead.
WY_BLOCK = 32


@dataclass
class DenseQRFactor:
    """Packed Householder QR of an m x n matrix."""

    packed: np.ndarray
    tau: np.ndarray
    rows: int
    cols: int
    block_size: int = WY_BLOCK
    _wy_cache: list = field(default_factory=list, repr=False)

    @property
    def dtype(self):
        return self.packed.dtype

    @property
    def n_reflectors(self):
        return self.tau.size

    def _panels(self):
        """Lazily built (j0, j1, T) triples covering all reflectors."""
        if not self._wy_cache and self.n_reflectors:
            bs = max(1, self.block_size)
            for j0 in range(0, self.n_reflectors, bs):
                j1 = min(j0 + bs, self.n_reflectors)
                t = np.zeros((j1 - j0, j1 - j0), dtype=self.dtype, order="F")
                kernels.larft(self.packed[j0:, j0:j1], self.tau[j0:j1], t)
                self._wy_cache.append((j0, j1, t))
        return self._wy_cache

    def _check_rhs(self, b):
        b = np.asarray(b, dtype=self.dtype)
        squeeze = b.ndim == 1
        if squeeze:
            b = b.reshape(-1, 1)
        if b.shape[0] != self.rows:
            raise DimensionError(
                "right-hand side rows != factor rows", b.shape, (self.rows, self.cols)
            )
        return np.array(b, order="F", copy=True), squeeze

    def q_transpose_apply(self, b):
        """Full Q^T times b: rows [0, cols) are the economy part, the rest Q-perp."""
        out, squeeze = self._check_rhs(b)
        for j0, j1, t in self._panels():
            kernels.apply_wy_qt(self.packed[j0:, j0:j1], t, out[j0:, :])
        return out[:, 0] if squeeze else out

    def q_apply(self, b):
        out, squeeze = self._check_rhs(b)
        for j0, j1, t in reversed(self._panels()):
            kernels.apply_wy_q(self.packed[j0:, j0:j1], t, out[j0:, :])
        return out[:, 0] if squeeze else out

    def r_dense(self):
        k = min(self.rows, self.cols)
        return np.triu(self.packed[:k, :])

    def r_row_spans(self):
        """(first, last) nonzero-column bounds per R row: row i spans [i, cols)."""
        k = min(self.rows, self.cols)
        first = np.arange(k, dtype=np.int64)
        last = np.full(k, self.cols - 1, dtype=np.int64)
        return first, last

    def r_rows_list(self):
        """R row values as a list of segments aligned to r_row_spans()."""
        k = min(self.rows, self.cols)
        return [self.packed[i, i : self.cols].copy() for i in range(k)]

    def r_nnz(self):
        k = min(self.rows, self.cols)
        return k * self.cols - (k * (k - 1)) // 2

    def q_storage_scalars(self):
        k = min(self.rows, self.cols)
        lower = k * self.rows - (k * (k + 1)) // 2
        return lower + self.tau.size

    def solve_r(self, y):
        """Solve R x = y with the economy (cols x cols) triangle."""
        if self.rows < self.cols:
            raise DimensionError(
                "triangular solve needs a portrait factor",
                (self.rows, self.cols),
            )
        return solve_upper_triangular(self.packed, y, ncols=self.cols)

    def storage_scalars(self):
        return self.packed.size + self.tau.size


@dataclass(frozen=True)
class CompressedWYBlock:
    """(Y, T) pair with Q = I + Y T Y^T acting on rows starting at row_offset."""

    row_offset: int
    y: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        y = np.asfortranarray(self.y)
        t = np.asfortranarray(self.t)
        if y.shape[1] != t.shape[0] or t.shape[0] != t.shape[1]:
            raise DimensionError("Y/T width mismatch", y.shape, t.shape)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)

    @property
    def width(self):
        return self.y.shape[1]

    @property
    def row_extent(self):
        return self.y.shape[0]

    def storage_scalars(self):
        return self.y.size + self.t.size


def dense_qr(a, block_size=WY_BLOCK, dtype=None):
    """Blocked Householder QR; R has a nonnegative diagonal.

    Rank deficiency is allowed (zero diagonal entries in R); the triangular
    solve is where singularity gets reported.
    """
    a = np.array(a, dtype=dtype, order="F", copy=True, ndmin=2)
    m, n = a.shape
    k = min(m, n)
    tau = np.zeros(k, dtype=a.dtype)
    bs = max(1, block_size)
    for j0 in range(0, k, bs):
        j1 = min(j0 + bs, k)
        panel = a[j0:, j0:j1]
        kernels.qr_inplace(panel, tau[j0:j1], -1)
        if j1 < n:
            t = np.zeros((j1 - j0, j1 - j0), dtype=a.dtype, order="F")
            kernels.larft(panel, tau[j0:j1], t)
            kernels.apply_wy_qt(panel, t, a[j0:, j1:])
    return DenseQRFactor(packed=a, tau=tau, rows=m, cols=n, block_size=bs)


def wy_accumulate(factor, block_start, r):
    """Compress reflectors [block_start, block_start + r) into one WY block."""
    k = min(factor.rows, factor.cols)
    if block_start < 0 or r < 0 or block_start + r > k:
        raise DimensionError(
            "WY block out of range", (block_start, r), (factor.rows, factor.cols)
        )
    m = factor.rows - block_start
    y = np.zeros((m, r), dtype=factor.dtype, order="F")
    sub = factor.packed[block_start:, block_start : block_start + r]
    for j in range(r):
        y[j, j] = 1
        y[j + 1 :, j] = sub[j + 1 :, j]
    t = np.zeros((r, r), dtype=factor.dtype, order="F")
    kernels.larft(sub, factor.tau[block_start : block_start + r], t)
    return CompressedWYBlock(row_offset=block_start, y=y, t=t)


def apply_q_transpose(factor, b):
    """Q^T b for a DenseQRFactor or an ordered list of CompressedWYBlock.

    With a block list, the blocks are applied first-to-last (block 0's
    transform hits b first), matching how a sequential factorization builds
    them.
    """
    if isinstance(factor, DenseQRFactor):
        return factor.q_transpose_apply(b)
    return _apply_wy_sequence(factor, b, transpose=True)


def apply_q(factor, b):
    """Q b; inverse of apply_q_transpose."""
    if isinstance(factor, DenseQRFactor):
        return factor.q_apply(b)
    return _apply_wy_sequence(factor, b, transpose=False)


def _apply_wy_sequence(blocks, b, transpose):
    b = np.asarray(b)
    squeeze = b.ndim == 1
    out = np.array(b.reshape(-1, 1) if squeeze else b, order="F", copy=True)
    seq = blocks if transpose else list(reversed(list(blocks)))
    for blk in seq:
        lo = blk.row_offset
        hi = lo + blk.row_extent
        if hi > out.shape[0]:
            raise DimensionError(
                "WY block exceeds right-hand side rows", (lo, hi), out.shape
            )
        if transpose:
            kernels.apply_wy_qt(blk.y, blk.t, out[lo:hi, :])
        else:
            kernels.apply_wy_q(blk.y, blk.t, out[lo:hi, :])
    return out[:, 0] if squeeze else out


def solve_upper_triangular(r, b, ncols=None):
    """Solve R x = b reading only the upper triangle of r's leading block.

    A diagonal entry with |R_ii| <= eps * max|R| raises SingularMatrixError
    naming the column.
    """
    r = np.asarray(r)
    n = r.shape[1] if ncols is None else ncols
    if r.shape[0] < n:
        raise DimensionError("triangular matrix has too few rows", r.shape, (n, n))
    b_arr = np.asarray(b)
    squeeze = b_arr.ndim == 1
    out = np.array(
        b_arr.reshape(-1, 1) if squeeze else b_arr,
        dtype=r.dtype,
        order="F",
        copy=True,
    )
    if out.shape[0] != n:
        raise DimensionError("right-hand side rows != n", out.shape, (n, n))
    if n:
        diag = np.abs(np.diagonal(r)[:n])
        rmax = float(np.abs(np.triu(r[:n, :n])).max())
        thresh = np.finfo(r.dtype).eps * rmax
        bad = np.nonzero(diag <= thresh)[0]
        if bad.size:
            raise SingularMatrixError(int(bad[0]))
        kernels.solve_triu(np.asfortranarray(r), out)
    return out[:, 0] if squeeze else out
