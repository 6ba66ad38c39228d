"""Structure-aware QR solvers that compose.

Every factor produced here satisfies one shared contract:

* ``rows``, ``cols``, ``dtype``
* ``q_transpose_apply(B)`` -- full Q^T B with the *economy-first* row layout:
  rows [0, cols) correspond to R's rows, rows [cols, rows) to Q-perp.
* ``q_apply(B)`` -- the inverse rotation.
* ``solve_r(y)`` -- upper-triangular solve with the economy R.
* ``r_row_spans()`` -- per R row, (first, last) structurally-nonzero column.
* ``storage_scalars()`` / ``q_storage_scalars()`` -- memory accounting; Q is
  kept as reflectors/WY blocks and never materialized by the structured
  factorizations.

The economy-first convention is what makes composition work: a factor can
hand rows [cols, rows) of its Q^T B to an outer solver as Q-perp^T B without
knowing anything else about the inner structure.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kernels
from .errors import DimensionError, SingularMatrixError, StructureError
from .householder import (
    WY_BLOCK,
    CompressedWYBlock,
    DenseQRFactor,
    dense_qr,
    solve_upper_triangular,
)
from .matrices import (
    BandedBlockMatrix,
    BlockDiagonalMatrix,
    HorzCatMatrix,
    Permutation,
    TripletMatrix,
    VertCatMatrix,
    to_dense,
)

_num_threads = 1


def set_num_threads(k):
    """Cap block-level parallelism (1 = fully sequential, the determinism mode).

    Results are deterministic for any thread count -- parallel paths write
    disjoint outputs -- but single-threaded mode sidesteps scheduler noise in
    timings.
    """
    global _num_threads
    _num_threads = max(1, int(k))


def get_num_threads():
    return _num_threads


def _as_f_rhs(b, rows, dtype):
    b = np.asarray(b, dtype=dtype)
    squeeze = b.ndim == 1
    if squeeze:
        b = b.reshape(-1, 1)
    if b.shape[0] != rows:
        raise DimensionError("right-hand side rows mismatch", b.shape, (rows,))
    return np.array(b, order="F", copy=True), squeeze


# ---------------------------------------------------------------------------
# Block diagonal


@dataclass
class _BlockGroup:
    """All blocks of one shape, packed for the batched kernels."""

    idx: np.ndarray  # block indices in this group
    n: int  # block rows
    m: int  # block cols
    flat: np.ndarray  # packed factors, column-major blocks back to back
    taus: np.ndarray
    src_rows: np.ndarray  # (B, n) input-row indices of each block
    dest_rows: np.ndarray  # (B, n) economy-first output row of each input row
    src_cols: np.ndarray  # (B, m) global column indices

    def packed_view(self):
        return self.flat.reshape(len(self.idx), self.m, self.n).transpose(0, 2, 1)

    def r_triangles(self):
        view = self.packed_view()[:, : self.m, :]
        return np.triu(view)

    def diagonals(self):
        return np.diagonal(self.packed_view(), axis1=1, axis2=2)


@dataclass
class BlockDiagonalQRFactor:
    rows: int
    cols: int
    dtype: np.dtype
    groups: list
    row_offsets: np.ndarray
    col_offsets: np.ndarray

    def q_transpose_apply(self, b):
        buf, squeeze = _as_f_rhs(b, self.rows, self.dtype)
        k = buf.shape[1]
        out = np.empty_like(buf)
        for g in self.groups:
            gathered = buf[g.src_rows.ravel()]
            if k:
                kernels.batched_apply_qt(
                    g.flat, g.taus, len(g.idx), g.n, g.m, gathered.reshape(-1), k
                )
            out[g.dest_rows.ravel()] = gathered
        return out[:, 0] if squeeze else out

    def q_apply(self, b):
        buf, squeeze = _as_f_rhs(b, self.rows, self.dtype)
        k = buf.shape[1]
        out = np.empty_like(buf)
        for g in self.groups:
            gathered = buf[g.dest_rows.ravel()]
            if k:
                kernels.batched_apply_q(
                    g.flat, g.taus, len(g.idx), g.n, g.m, gathered.reshape(-1), k
                )
            out[g.src_rows.ravel()] = gathered
        return out[:, 0] if squeeze else out

    def _r_max(self):
        out = 0.0
        for g in self.groups:
            if g.m:
                out = max(out, float(np.abs(g.r_triangles()).max()))
        return out

    def solve_r(self, y):
        buf, squeeze = _as_f_rhs(y, self.cols, self.dtype)
        k = buf.shape[1]
        thresh = np.finfo(self.dtype).eps * self._r_max()
        for g in self.groups:
            d = np.abs(g.diagonals())
            if d.size and d.min() <= thresh:
                b, j = np.unravel_index(int(d.argmin()), d.shape)
                raise SingularMatrixError(int(g.src_cols[b, j]))
            gathered = buf[g.src_cols.ravel()]
            if k:
                kernels.batched_solve_triu(
                    g.flat, len(g.idx), g.n, g.m, gathered.reshape(-1), k
                )
            buf[g.src_cols.ravel()] = gathered
        return buf[:, 0] if squeeze else buf

    def r_row_spans(self):
        first = np.empty(self.cols, dtype=np.int64)
        last = np.empty(self.cols, dtype=np.int64)
        for g in self.groups:
            cols = g.src_cols  # (B, m)
            first[cols.ravel()] = cols.ravel()
            last[cols.ravel()] = np.broadcast_to(cols[:, -1:], cols.shape).ravel()
        return first, last

    def r_rows_list(self):
        segs = [None] * self.cols
        for g in self.groups:
            tri = g.r_triangles()
            for b in range(len(g.idx)):
                c0 = int(g.src_cols[b, 0])
                for i in range(g.m):
                    segs[c0 + i] = tri[b, i, i:]
        return segs

    def r_dense(self):
        out = np.zeros((self.cols, self.cols), dtype=self.dtype)
        for g in self.groups:
            tri = g.r_triangles()
            for b in range(len(g.idx)):
                c0 = g.src_cols[b, 0]
                out[c0 : c0 + g.m, c0 : c0 + g.m] = tri[b]
        return out

    def r_nnz(self):
        total = 0
        for g in self.groups:
            total += len(g.idx) * (g.m * (g.m + 1)) // 2
        return total

    def storage_scalars(self):
        return sum(g.flat.size + g.taus.size for g in self.groups)

    def q_storage_scalars(self):
        # reflectors live in the strict lower parts of the packed blocks + taus
        total = 0
        for g in self.groups:
            per_block = g.n * g.m - (g.m * (g.m + 1)) // 2 + min(g.n, g.m)
            total += len(g.idx) * per_block
        return total


class BlockDiagonalQR:
    """QR of blkdiag(A_1..A_K): independent per-block Householder QR."""

    def compute(self, a):
        if not isinstance(a, BlockDiagonalMatrix):
            raise TypeError("BlockDiagonalQR expects a BlockDiagonalMatrix")
        dtype = a.dtype
        for k, blk in enumerate(a.blocks):
            if blk.shape[0] < blk.shape[1]:
                raise StructureError(
                    f"landscape block {blk.shape} not factorable "
                    "(orthogonal-complement bookkeeping needs portrait blocks)",
                    block=k,
                )
            if blk.dtype != dtype:
                raise StructureError("blocks must share one dtype", block=k)
        shapes = np.array([b.shape for b in a.blocks], dtype=np.int64).reshape(-1, 2)
        groups = []
        if len(a.blocks):
            uniq = np.unique(shapes, axis=0)
            comp_off = a.row_offsets[:-1] - a.col_offsets[:-1]
            group_order = []
            for n, m in uniq:
                idx = np.nonzero((shapes[:, 0] == n) & (shapes[:, 1] == m))[0]
                group_order.append((idx, int(n), int(m)))
            tasks = [
                (idx, n, m, a, comp_off, dtype) for idx, n, m in group_order
            ]
            if _num_threads > 1 and len(tasks) > 1:
                with ThreadPoolExecutor(max_workers=_num_threads) as ex:
                    groups = list(ex.map(lambda t: _build_group(*t), tasks))
            else:
                groups = [_build_group(*t) for t in tasks]
        return BlockDiagonalQRFactor(
            rows=a.rows,
            cols=a.cols,
            dtype=dtype,
            groups=groups,
            row_offsets=np.asarray(a.row_offsets),
            col_offsets=np.asarray(a.col_offsets),
        )


def _build_group(idx, n, m, a, comp_off, dtype):
    nb = len(idx)
    stack = np.empty((nb, n, m), dtype=dtype)
    for i, bi in enumerate(idx):
        stack[i] = a.blocks[bi]
    flat = np.ascontiguousarray(stack.transpose(0, 2, 1)).reshape(-1)
    taus = np.zeros(nb * min(n, m), dtype=dtype)
    if n and m:
        kernels.batched_qr(flat, taus, nb, n, m)
    roff = np.asarray(a.row_offsets)[idx]
    coff = np.asarray(a.col_offsets)[idx]
    src_rows = roff[:, None] + np.arange(n, dtype=np.int64)
    src_cols = coff[:, None] + np.arange(m, dtype=np.int64)
    dest_econ = coff[:, None] + np.arange(m, dtype=np.int64)
    dest_comp = (
        a.cols + comp_off[idx][:, None] + np.arange(n - m, dtype=np.int64)
    )
    dest_rows = np.hstack([dest_econ, dest_comp])
    return _BlockGroup(
        idx=idx,
        n=n,
        m=m,
        flat=flat,
        taus=taus,
        src_rows=src_rows,
        dest_rows=dest_rows,
        src_cols=src_cols,
    )


def block_diagonal_qr(a):
    return BlockDiagonalQR().compute(a)


# ---------------------------------------------------------------------------
# Block banded


@dataclass
class _BandedStep:
    """One elimination step: carry rows stacked on one block's rows."""

    rows_in: int  # carried + fresh rows entering this step
    n_fresh: int  # fresh input rows consumed (the block's own rows)
    e: int  # finished R rows emitted (exclusive columns)
    r: int  # rows carried to the next step (overlap columns)
    col_start: int
    m: int  # column extent of the workspace
    panels: list  # CompressedWYBlock list, row offsets local to the workspace
    r_block: np.ndarray  # (e + r) x m upper trapezoid; top e rows are final


@dataclass
class BlockBandedQRFactor:
    rows: int
    cols: int
    dtype: np.dtype
    steps: list
    band: int  # max m_k + r_k over steps

    @property
    def wy_blocks(self):
        """All WY blocks in application order (offsets local to their step)."""
        return [p for s in self.steps for p in s.panels]

    def q_transpose_apply(self, b):
        buf, squeeze = _as_f_rhs(b, self.rows, self.dtype)
        k = buf.shape[1]
        econ = np.empty((self.cols, k), dtype=self.dtype, order="F")
        comp_parts = []
        carry = np.zeros((0, k), dtype=self.dtype, order="F")
        pos_in = 0
        pos_econ = 0
        for s in self.steps:
            w = np.empty((s.rows_in, k), dtype=self.dtype, order="F")
            w[: carry.shape[0]] = carry
            w[carry.shape[0] :] = buf[pos_in : pos_in + s.n_fresh]
            pos_in += s.n_fresh
            for p in s.panels:
                kernels.apply_wy_qt(p.y, p.t, w[p.row_offset :])
            econ[pos_econ : pos_econ + s.e] = w[: s.e]
            pos_econ += s.e
            carry = w[s.e : s.e + s.r]
            if s.rows_in > s.e + s.r:
                comp_parts.append(w[s.e + s.r :])
        parts = [econ] + comp_parts
        out = np.concatenate(parts, axis=0) if comp_parts else econ
        out = np.asfortranarray(out)
        return out[:, 0] if squeeze else out

    def q_apply(self, b):
        buf, squeeze = _as_f_rhs(b, self.rows, self.dtype)
        k = buf.shape[1]
        out = np.empty_like(buf)
        # walk steps backward, reconstructing each workspace
        comp_bounds = []
        pos = self.cols
        for s in self.steps:
            csize = s.rows_in - s.e - s.r
            comp_bounds.append((pos, pos + csize))
            pos += csize
        econ_pos = self.cols
        in_pos = self.rows  # consumed fresh-row positions, walking backward
        carry = np.zeros((0, k), dtype=self.dtype, order="F")
        for ks in range(len(self.steps) - 1, -1, -1):
            s = self.steps[ks]
            econ_pos -= s.e
            in_pos -= s.n_fresh
            w = np.empty((s.rows_in, k), dtype=self.dtype, order="F")
            w[: s.e] = buf[econ_pos : econ_pos + s.e]
            w[s.e : s.e + s.r] = carry
            lo, hi = comp_bounds[ks]
            w[s.e + s.r :] = buf[lo:hi]
            for p in reversed(s.panels):
                kernels.apply_wy_q(p.y, p.t, w[p.row_offset :])
            carry = w[: self.steps[ks - 1].r] if ks else w[:0]
            out[in_pos : in_pos + s.n_fresh] = w[carry.shape[0] :]
        return out[:, 0] if squeeze else out

    def _r_max(self):
        return max(
            (float(np.abs(s.r_block).max()) for s in self.steps if s.r_block.size),
            default=0.0,
        )

    def solve_r(self, y):
        buf, squeeze = _as_f_rhs(y, self.cols, self.dtype)
        x = np.zeros_like(buf)
        thresh = np.finfo(self.dtype).eps * self._r_max()
        pos_econ = self.cols
        for s in reversed(self.steps):
            pos_econ -= s.e
            rb = s.r_block[: s.e]  # final rows only
            diag = np.abs(np.diagonal(rb))
            bad = np.nonzero(diag <= thresh)[0]
            if bad.size:
                raise SingularMatrixError(int(s.col_start + bad[0]))
            rhs = buf[pos_econ : pos_econ + s.e].copy()
            if s.e < s.m:  # subtract already-solved overlap columns
                rhs -= rb[:, s.e :] @ x[s.col_start + s.e : s.col_start + s.m]
            sol = solve_upper_triangular(rb[:, : s.e], rhs, ncols=s.e)
            x[s.col_start : s.col_start + s.e] = sol
        return x[:, 0] if squeeze else x

    def r_row_spans(self):
        first = np.empty(self.cols, dtype=np.int64)
        last = np.empty(self.cols, dtype=np.int64)
        for s in self.steps:
            j = np.arange(s.e, dtype=np.int64)
            first[s.col_start + j] = s.col_start + j
            last[s.col_start + j] = s.col_start + s.m - 1
        return first, last

    def r_rows_list(self):
        segs = []
        for s in self.steps:
            for i in range(s.e):
                segs.append(s.r_block[i, i:])
        return segs

    def r_dense(self):
        out = np.zeros((self.cols, self.cols), dtype=self.dtype)
        pos = 0
        for s in self.steps:
            out[pos : pos + s.e, s.col_start : s.col_start + s.m] = s.r_block[: s.e]
            pos += s.e
        return np.triu(out)

    def r_nnz(self):
        return int(sum(min(s.e, s.m) * s.m - (s.e * (s.e - 1)) // 2 for s in self.steps))

    def storage_scalars(self):
        return self.q_storage_scalars() + sum(s.r_block[: s.e].size for s in self.steps)

    def q_storage_scalars(self):
        return sum(p.storage_scalars() for s in self.steps for p in s.panels)


class BlockBandedQR:
    """Sequential elimination over a chain of column-overlapping blocks.

    Step k stacks the carried overlap rows from step k-1 on top of block k's
    rows and factors the full column extent; rows for exclusive columns are
    final, rows for overlap columns carry forward, everything else retires to
    Q-perp.  Q stays a sequence of compressed WY transforms of bounded extent.
    """

    def __init__(self, block_size=WY_BLOCK):
        self.block_size = block_size

    def compute(self, a):
        if not isinstance(a, BandedBlockMatrix):
            raise TypeError("BlockBandedQR expects a BandedBlockMatrix")
        if a.rows < a.cols:
            raise StructureError(
                f"matrix must be portrait overall, got {a.rows}x{a.cols}"
            )
        nblocks = len(a.blocks)
        for k in range(nblocks):
            end = a.row_offsets[k] + a.blocks[k].shape[0]
            nxt = a.row_offsets[k + 1] if k + 1 < nblocks else a.rows
            if a.row_offsets[0] != 0 or end != nxt:
                raise StructureError(
                    "banded factorization requires contiguous block rows", block=k
                )
        dtype = a.dtype
        steps = []
        carry = np.zeros((0, 0), dtype=dtype, order="F")
        band = 0
        for k, blk in enumerate(a.blocks):
            c0 = a.col_offsets[k]
            m = blk.shape[1]
            nxt_c0 = a.col_offsets[k + 1] if k + 1 < nblocks else a.cols
            e = min(nxt_c0, c0 + m) - c0
            r = m - e
            rows_in = carry.shape[0] + blk.shape[0]
            if rows_in < m:
                raise StructureError(
                    f"only {rows_in} active rows for {m} columns; "
                    "chain is rank-structurally deficient",
                    block=k,
                )
            band = max(band, m + (carry.shape[1] if k else 0))
            w = np.zeros((rows_in, m), dtype=dtype, order="F")
            w[: carry.shape[0], : carry.shape[1]] = carry
            w[carry.shape[0] :, :] = blk
            panels = _factor_workspace(w, m, self.block_size, dtype)
            steps.append(
                _BandedStep(
                    rows_in=rows_in,
                    n_fresh=blk.shape[0],
                    e=e,
                    r=r,
                    col_start=c0,
                    m=m,
                    panels=panels,
                    r_block=np.triu(w[: e + r]),
                )
            )
            carry = np.asfortranarray(np.triu(w[e : e + r, e:]))
        return BlockBandedQRFactor(
            rows=a.rows, cols=a.cols, dtype=dtype, steps=steps, band=band
        )


def _factor_workspace(w, ncols, block_size, dtype):
    """Blocked in-place QR of the workspace; returns WY panels (local offsets)."""
    rows = w.shape[0]
    q = min(ncols, rows)
    tau = np.zeros(q, dtype=dtype)
    panels = []
    bs = max(1, block_size)
    for j0 in range(0, q, bs):
        j1 = min(j0 + bs, q)
        panel = w[j0:, j0:j1]
        kernels.qr_inplace(panel, tau[j0:j1], -1)
        t = np.zeros((j1 - j0, j1 - j0), dtype=dtype, order="F")
        kernels.larft(panel, tau[j0:j1], t)
        if j1 < ncols:
            kernels.apply_wy_qt(panel, t, w[j0:, j1:])
        y = np.zeros((rows - j0, j1 - j0), dtype=dtype, order="F")
        for j in range(j1 - j0):
            y[j, j] = 1
            y[j + 1 :, j] = panel[j + 1 :, j]
        panels.append(CompressedWYBlock(row_offset=j0, y=y, t=t))
    return panels


def block_banded_qr(a, block_size=WY_BLOCK):
    return BlockBandedQR(block_size=block_size).compute(a)


# ---------------------------------------------------------------------------
# Horizontal concatenation


@dataclass
class HorzCatQRFactor:
    rows: int
    cols: int
    dtype: np.dtype
    left: object  # factor of A1
    top_right: np.ndarray  # Q1^T A2, first m1 rows
    right: DenseQRFactor  # factor of Qperp1^T A2

    @property
    def m1(self):
        return self.top_right.shape[0]

    @property
    def m2(self):
        return self.right.cols

    def q_transpose_apply(self, b):
        u = self.left.q_transpose_apply(b)
        squeeze = u.ndim == 1
        if squeeze:
            u = u.reshape(-1, 1)
        out = np.concatenate([u[: self.m1], self.right.q_transpose_apply(u[self.m1 :])])
        out = np.asfortranarray(out)
        return out[:, 0] if squeeze else out

    def q_apply(self, b):
        b = np.asarray(b, dtype=self.dtype)
        squeeze = b.ndim == 1
        if squeeze:
            b = b.reshape(-1, 1)
        v = np.concatenate([b[: self.m1], self.right.q_apply(b[self.m1 :])])
        out = self.left.q_apply(v)
        return out[:, 0] if squeeze else out

    def solve_r(self, y):
        y = np.asarray(y, dtype=self.dtype)
        squeeze = y.ndim == 1
        if squeeze:
            y = y.reshape(-1, 1)
        if y.shape[0] != self.cols:
            raise DimensionError("solve_r rows mismatch", y.shape, (self.cols,))
        x2 = self.right.solve_r(y[self.m1 :])
        x1 = self.left.solve_r(y[: self.m1] - self.top_right @ x2)
        out = np.concatenate([x1, x2])
        return out[:, 0] if squeeze else out

    def r_row_spans(self):
        first_l, _ = self.left.r_row_spans()
        first = np.concatenate(
            [first_l, self.m1 + np.arange(self.m2, dtype=np.int64)]
        )
        last = np.full(self.cols, self.cols - 1, dtype=np.int64)
        return first, last

    def r_rows_list(self):
        first_l, last_l = self.left.r_row_spans()
        out = []
        for i, seg in enumerate(self.left.r_rows_list()):
            pad = self.m1 - 1 - last_l[i]
            out.append(
                np.concatenate(
                    [seg, np.zeros(pad, dtype=self.dtype), self.top_right[i]]
                )
            )
        out.extend(self.right.r_rows_list())
        return out

    def r_dense(self):
        out = np.zeros((self.cols, self.cols), dtype=self.dtype)
        out[: self.m1, : self.m1] = self.left.r_dense()
        out[: self.m1, self.m1 :] = self.top_right
        out[self.m1 :, self.m1 :] = self.right.r_dense()
        return out

    def r_nnz(self):
        left_nnz = (
            self.left.r_nnz()
            if hasattr(self.left, "r_nnz")
            else np.count_nonzero(self.left.r_dense())
        )
        return int(
            left_nnz + self.top_right.size + (self.m2 * (self.m2 + 1)) // 2
        )

    def storage_scalars(self):
        return (
            self.left.storage_scalars()
            + self.top_right.size
            + self.right.storage_scalars()
        )

    def q_storage_scalars(self):
        left_q = (
            self.left.q_storage_scalars()
            if hasattr(self.left, "q_storage_scalars")
            else self.left.storage_scalars()
        )
        return left_q + self.right.storage_scalars()


class HorzCatQR:
    """QR of [A1 | A2]: factor A1 with the nested solver, then a dense QR of
    Qperp1^T A2 (generically dense, but only m2 columns wide)."""

    def __init__(self, left_solver=None, block_size=WY_BLOCK):
        self.left_solver = left_solver
        self.block_size = block_size

    def compute(self, a):
        if isinstance(a, HorzCatMatrix):
            a1, a2 = a.left, a.right
        else:
            raise TypeError("HorzCatQR expects a HorzCatMatrix")
        return self.compute_parts(a1, a2)

    def compute_parts(self, a1, a2):
        a2 = np.asarray(a2)
        left_solver = self.left_solver or solver_for(a1)
        n = a1.shape[0] if isinstance(a1, np.ndarray) else a1.rows
        if a2.shape[0] != n:
            raise DimensionError("A1/A2 row mismatch", (n,), a2.shape)
        m1 = a1.shape[1] if isinstance(a1, np.ndarray) else a1.cols
        m2 = a2.shape[1]
        if m1 + m2 > n:
            raise DimensionError(
                "horizontal concatenation needs rows >= total cols",
                (n,),
                (m1, m2),
            )
        f1 = left_solver.compute(a1)
        u = f1.q_transpose_apply(np.asfortranarray(a2, dtype=f1.dtype))
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        top_right = np.array(u[:m1], order="F", copy=True)
        f2 = dense_qr(u[m1:], block_size=self.block_size)
        return HorzCatQRFactor(
            rows=n,
            cols=m1 + m2,
            dtype=f1.dtype,
            left=f1,
            top_right=top_right,
            right=f2,
        )


def horzcat_qr(left_solver, a1, a2, block_size=WY_BLOCK):
    return HorzCatQR(left_solver, block_size=block_size).compute_parts(a1, a2)


# ---------------------------------------------------------------------------
# Vertical concatenation


@dataclass
class VertCatQRFactor:
    rows: int
    cols: int
    dtype: np.dtype
    top: object
    bottom: object
    interleave: Permutation  # over the 2m stacked R rows
    banded: BlockBandedQRFactor

    def _split(self):
        n1 = self.top.rows
        return n1, self.rows - n1

    def q_transpose_apply(self, b):
        b = np.asarray(b, dtype=self.dtype)
        squeeze = b.ndim == 1
        if squeeze:
            b = b.reshape(-1, 1)
        n1, _ = self._split()
        u1 = self.top.q_transpose_apply(b[:n1])
        u2 = self.bottom.q_transpose_apply(b[n1:])
        s = np.concatenate([u1[: self.top.cols], u2[: self.bottom.cols]])
        sp = np.empty_like(s)
        sp[self.interleave.map] = s
        w = self.banded.q_transpose_apply(sp)
        out = np.concatenate([w, u1[self.top.cols :], u2[self.bottom.cols :]])
        out = np.asfortranarray(out)
        return out[:, 0] if squeeze else out

    def q_apply(self, b):
        b = np.asarray(b, dtype=self.dtype)
        squeeze = b.ndim == 1
        if squeeze:
            b = b.reshape(-1, 1)
        n1, _ = self._split()
        m1 = self.top.cols
        nw = self.banded.rows
        w = self.banded.q_apply(b[:nw])
        s = w[self.interleave.map]
        v1 = np.concatenate([s[:m1], b[nw : nw + n1 - m1]])
        v2 = np.concatenate([s[m1:], b[nw + n1 - m1 :]])
        out = np.concatenate([self.top.q_apply(v1), self.bottom.q_apply(v2)])
        out = np.asfortranarray(out)
        return out[:, 0] if squeeze else out

    def solve_r(self, y):
        return self.banded.solve_r(y)

    def r_row_spans(self):
        return self.banded.r_row_spans()

    def r_rows_list(self):
        return self.banded.r_rows_list()

    def r_dense(self):
        return self.banded.r_dense()

    def r_nnz(self):
        return self.banded.r_nnz()

    def storage_scalars(self):
        return (
            self.top.storage_scalars()
            + self.bottom.storage_scalars()
            + len(self.interleave)
            + self.banded.storage_scalars()
        )

    def q_storage_scalars(self):
        tops = getattr(self.top, "q_storage_scalars", self.top.storage_scalars)()
        bots = getattr(self.bottom, "q_storage_scalars", self.bottom.storage_scalars)()
        return tops + bots + self.banded.q_storage_scalars()


class VertCatQR:
    """QR of [A1; A2]: factor the parts, interleave the stacked R rows into a
    banded profile, and refactorize that banded matrix."""

    def __init__(self, top_solver=None, bottom_solver=None, block_size=WY_BLOCK):
        self.top_solver = top_solver
        self.bottom_solver = bottom_solver
        self.block_size = block_size

    def compute(self, a):
        if isinstance(a, VertCatMatrix):
            return self.compute_parts(a.top, a.bottom)
        raise TypeError("VertCatQR expects a VertCatMatrix")

    def compute_parts(self, a1, a2):
        top_solver = self.top_solver or solver_for(a1)
        bottom_solver = self.bottom_solver or solver_for(a2)
        f1 = top_solver.compute(a1)
        f2 = bottom_solver.compute(a2)
        if f1.cols != f2.cols:
            raise DimensionError(
                "vertical concatenation needs equal column counts",
                (f1.rows, f1.cols),
                (f2.rows, f2.cols),
            )
        perm, banded = refactor_stacked_r(f1, f2, self.block_size)
        return VertCatQRFactor(
            rows=f1.rows + f2.rows,
            cols=f1.cols,
            dtype=f1.dtype,
            top=f1,
            bottom=f2,
            interleave=perm,
            banded=banded,
        )


def vertcat_qr(top_solver, bottom_solver, a1, a2, block_size=WY_BLOCK):
    return VertCatQR(top_solver, bottom_solver, block_size).compute_parts(a1, a2)


def refactor_stacked_r(f1, f2, block_size=WY_BLOCK):
    """Interleave the R rows of two factors into a banded matrix and factor it.

    Returns (permutation over the stacked rows, BlockBandedQRFactor).  Row
    values are extracted as band segments, so R is never densified.
    """
    m = f1.cols
    fa, la = f1.r_row_spans()
    fb, lb = f2.r_row_spans()
    firsts = np.concatenate([fa, fb])
    lasts = np.concatenate([la, lb])
    segments = f1.r_rows_list() + f2.r_rows_list()
    order = np.argsort(firsts, kind="stable")
    perm = Permutation.from_order(order)
    banded = banded_from_profile(
        firsts[order],
        lasts[order],
        [segments[i] for i in order],
        m,
        dtype=f1.dtype,
    )
    return perm, block_banded_qr(banded, block_size=block_size)


def banded_from_profile(firsts, lasts, segments, cols, dtype):
    """Build a BandedBlockMatrix from rows already ordered by first column.

    `segments[i]` holds row i's values over columns [firsts[i], lasts[i]].
    Blocks are cut greedily: a new block starts when a row's first column
    passes the base row's last column.  Column ranges are widened as needed
    so consecutive blocks stay connected (carried overlap columns covered,
    no gaps), keeping the result a valid banded chain.
    """
    n = len(firsts)
    if n == 0:
        raise StructureError("cannot build a banded matrix from zero rows")
    cuts = [0]
    base_last = lasts[0]
    for i in range(1, n):
        if firsts[i] > base_last:
            cuts.append(i)
            base_last = lasts[i]
    cuts.append(n)

    def _spans(cut_list):
        """Widened (c0, c1) column ranges of each candidate block."""
        spans = []
        col_end_prev = None
        for b in range(len(cut_list) - 1):
            i0, i1 = cut_list[b], cut_list[b + 1]
            c0 = int(firsts[i0])
            c1 = int(max(lasts[i0:i1])) + 1
            if col_end_prev is not None:
                c1 = max(c1, col_end_prev)  # carry columns must stay covered
                c0 = min(c0, col_end_prev)  # no gaps: touch the previous block
            if b == len(cut_list) - 2:
                c1 = max(c1, cols)  # last block covers the trailing columns
            spans.append((c0, c1))
            col_end_prev = c1
        return spans

    # A greedy cut can leave a block wider than its row count (one long row
    # dragging the column range); merge such blocks forward until every
    # elimination step has at least as many active rows as columns.
    while len(cuts) > 2:
        spans = _spans(cuts)
        carry = 0
        bad = None
        for b in range(len(cuts) - 1):
            c0, c1 = spans[b]
            rows_in = carry + cuts[b + 1] - cuts[b]
            if rows_in < c1 - c0:
                bad = b
                break
            nxt_c0 = spans[b + 1][0] if b + 1 < len(spans) else cols
            e = min(nxt_c0, c1) - c0
            carry = (c1 - c0) - e
        if bad is None:
            break
        # merge the offending block with its neighbor
        del cuts[bad + 1 if bad + 1 < len(cuts) - 1 else bad]

    spans = _spans(cuts)
    blocks = []
    row_off = []
    col_off = []
    pos = 0
    for b in range(len(cuts) - 1):
        i0, i1 = cuts[b], cuts[b + 1]
        c0, c1 = spans[b]
        blk = np.zeros((i1 - i0, c1 - c0), dtype=dtype, order="F")
        for i in range(i0, i1):
            blk[i - i0, firsts[i] - c0 : lasts[i] + 1 - c0] = segments[i]
        blocks.append(blk)
        row_off.append(pos)
        col_off.append(c0)
        pos += i1 - i0
    return BandedBlockMatrix(
        blocks=tuple(blocks),
        row_offsets=tuple(row_off),
        col_offsets=tuple(col_off),
        rows=n,
        cols=cols,
    )


# ---------------------------------------------------------------------------
# Dense + dispatch


class DenseQR:
    """Unstructured baseline: one blocked Householder QR of the dense matrix."""

    def __init__(self, block_size=WY_BLOCK):
        self.block_size = block_size

    def compute(self, a):
        if isinstance(a, TripletMatrix):
            a = to_dense(a)
        return dense_qr(np.asarray(a), block_size=self.block_size)


def solver_for(matrix, block_size=WY_BLOCK):
    """Runtime dispatch to the right solver for a structured matrix type."""
    if isinstance(matrix, BlockDiagonalMatrix):
        return BlockDiagonalQR()
    if isinstance(matrix, BandedBlockMatrix):
        return BlockBandedQR(block_size=block_size)
    if isinstance(matrix, HorzCatMatrix):
        return HorzCatQR(solver_for(matrix.left), block_size=block_size)
    if isinstance(matrix, VertCatMatrix):
        return VertCatQR(
            solver_for(matrix.top), solver_for(matrix.bottom), block_size
        )
    if isinstance(matrix, (np.ndarray, TripletMatrix)):
        return DenseQR(block_size=block_size)
    raise TypeError(f"no solver for {type(matrix).__name__}")


def factorize(matrix, block_size=WY_BLOCK):
    """Factor any supported matrix with the structure-matched solver."""
    return solver_for(matrix, block_size).compute(matrix)


def solve_least_squares(factor, b):
    """argmin_x ||A x - b||_2 through any factor satisfying the contract."""
    qtb = factor.q_transpose_apply(b)
    if qtb.ndim == 1:
        return factor.solve_r(qtb[: factor.cols])
    return factor.solve_r(qtb[: factor.cols, :])
