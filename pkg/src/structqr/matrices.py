"""Concrete matrix storage, permutations and multiplication primitives.

Dense matrices are plain numpy arrays; the factorization code keeps them in
column-major (Fortran) order so that Householder column updates and triangular
solves stream contiguously.  The structured containers below are thin,
immutable descriptions of where dense blocks sit inside a larger matrix.
Everything is generic over float32/float64: the dtype of the stored data is
the dtype of the computation.

All containers are treated as immutable after construction (do not write into
the wrapped arrays); this is what makes them safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParseError, StructureError

#: Dense matrices are plain 2-D numpy arrays.
DenseMatrix = np.ndarray

SUPPORTED_DTYPES = (np.float32, np.float64)


def check_dtype(dtype):
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise TypeError(f"unsupported scalar type {dt}; use float32 or float64")
    return dt


def as_dense(a, dtype=None):
    """Return `a` as a 2-D Fortran-ordered array (copying only if needed)."""
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError("expected a 1-D or 2-D array", arr.shape)
    return np.asfortranarray(arr)


@dataclass(frozen=True)
class TripletMatrix:
    """Coordinate-format sparse matrix.

    Duplicate (row, col) pairs are allowed in `entries` and are summed
    whenever the matrix is converted to another representation.  This is the
    interchange format between modules that do not share a structure
    assumption.
    """

    rows: int
    cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ri = np.asarray(self.row_idx, dtype=np.int64)
        ci = np.asarray(self.col_idx, dtype=np.int64)
        vals = np.asarray(self.values)
        if not (ri.shape == ci.shape == vals.shape) or ri.ndim != 1:
            raise DimensionError(
                "triplet arrays must be 1-D and equally long",
                ri.shape,
                (ci.shape, vals.shape),
            )
        if ri.size and (ri.min() < 0 or ri.max() >= self.rows):
            raise IndexError(f"row index out of range for {self.rows}x{self.cols}")
        if ci.size and (ci.min() < 0 or ci.max() >= self.cols):
            raise IndexError(f"col index out of range for {self.rows}x{self.cols}")
        object.__setattr__(self, "row_idx", ri)
        object.__setattr__(self, "col_idx", ci)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_entries(cls, rows, cols, entries, dtype=np.float64):
        entries = list(entries)
        ri = np.array([e[0] for e in entries], dtype=np.int64)
        ci = np.array([e[1] for e in entries], dtype=np.int64)
        vals = np.array([e[2] for e in entries], dtype=dtype)
        return cls(rows, cols, ri, ci, vals)

    @property
    def nnz(self):
        return self.values.size

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def dtype(self):
        return self.values.dtype


def _offsets(sizes):
    off = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=off[1:])
    return off


@dataclass(frozen=True)
class BlockDiagonalMatrix:
    """blkdiag(A_1, ..., A_K): block k occupies its own row and column range."""

    blocks: tuple
    row_offsets: np.ndarray = field(init=False)
    col_offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        blocks = tuple(np.asarray(b) for b in self.blocks)
        for b in blocks:
            if b.ndim != 2:
                raise DimensionError("blocks must be 2-D", b.shape)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "row_offsets", _offsets([b.shape[0] for b in blocks]))
        object.__setattr__(self, "col_offsets", _offsets([b.shape[1] for b in blocks]))

    @property
    def rows(self):
        return int(self.row_offsets[-1])

    @property
    def cols(self):
        return int(self.col_offsets[-1])

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def dtype(self):
        return self.blocks[0].dtype if self.blocks else np.dtype(np.float64)


@dataclass(frozen=True)
class BandedBlockMatrix:
    """Dense blocks on disjoint row ranges with column overlap between
    consecutive blocks.

    Block k is `blocks[k]` (n_k x m_k), placed at (row_offsets[k],
    col_offsets[k]).  The overlap with the next block is
    r_k = col_offsets[k] + m_k - col_offsets[k+1], which must lie in
    [0, min(m_k, m_{k+1})].
    """

    blocks: tuple
    row_offsets: tuple
    col_offsets: tuple
    rows: int = None
    cols: int = None

    def __post_init__(self):
        blocks = tuple(np.asarray(b) for b in self.blocks)
        row_off = tuple(int(r) for r in self.row_offsets)
        col_off = tuple(int(c) for c in self.col_offsets)
        if not (len(blocks) == len(row_off) == len(col_off)):
            raise DimensionError(
                "blocks/offsets length mismatch",
                len(blocks),
                (len(row_off), len(col_off)),
            )
        if not blocks:
            raise StructureError("BandedBlockMatrix needs at least one block")
        for k in range(len(blocks) - 1):
            nk, mk = blocks[k].shape
            mk1 = blocks[k + 1].shape[1]
            r_k = col_off[k] + mk - col_off[k + 1]
            if not (0 <= r_k <= min(mk, mk1)):
                raise StructureError(
                    f"column overlap {r_k} outside [0, min({mk}, {mk1})]", block=k
                )
            if row_off[k + 1] < row_off[k] + nk:
                raise StructureError("block row ranges overlap", block=k)
            if row_off[k + 1] <= row_off[k]:
                raise StructureError("row offsets must be strictly increasing", block=k)
        rows = self.rows
        cols = self.cols
        if rows is None:
            rows = row_off[-1] + blocks[-1].shape[0]
        if cols is None:
            cols = col_off[-1] + blocks[-1].shape[1]
        if row_off[-1] + blocks[-1].shape[0] > rows:
            raise StructureError("last block exceeds row count", block=len(blocks) - 1)
        if any(co + b.shape[1] > cols for co, b in zip(col_off, blocks)):
            raise StructureError("a block exceeds the column count")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "row_offsets", row_off)
        object.__setattr__(self, "col_offsets", col_off)
        object.__setattr__(self, "rows", int(rows))
        object.__setattr__(self, "cols", int(cols))

    @property
    def overlaps(self):
        """r_k for consecutive block pairs (length K-1)."""
        out = []
        for k in range(len(self.blocks) - 1):
            out.append(
                self.col_offsets[k] + self.blocks[k].shape[1] - self.col_offsets[k + 1]
            )
        return out

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def dtype(self):
        return self.blocks[0].dtype


@dataclass(frozen=True)
class HorzCatMatrix:
    """[A1 | A2] with a structured left part and a dense right part."""

    left: object
    right: np.ndarray

    def __post_init__(self):
        right = np.asarray(self.right)
        if right.ndim != 2:
            raise DimensionError("right part must be 2-D", right.shape)
        if rows_of(self.left) != right.shape[0]:
            raise DimensionError(
                "row count mismatch in horizontal concatenation",
                shape_of(self.left),
                right.shape,
            )
        object.__setattr__(self, "right", right)

    @property
    def rows(self):
        return rows_of(self.left)

    @property
    def cols(self):
        return cols_of(self.left) + self.right.shape[1]

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def dtype(self):
        return self.right.dtype


@dataclass(frozen=True)
class VertCatMatrix:
    """[A1; A2] stacked vertically; both parts share the column count."""

    top: object
    bottom: object

    def __post_init__(self):
        if cols_of(self.top) != cols_of(self.bottom):
            raise DimensionError(
                "column count mismatch in vertical concatenation",
                shape_of(self.top),
                shape_of(self.bottom),
            )

    @property
    def rows(self):
        return rows_of(self.top) + rows_of(self.bottom)

    @property
    def cols(self):
        return cols_of(self.top)

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def dtype(self):
        return dtype_of(self.top)


@dataclass(frozen=True)
class Permutation:
    """Row/column permutation: `map[i]` is the destination of source index i."""

    map: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.map, dtype=np.int64)
        if m.ndim != 1:
            raise DimensionError("permutation map must be 1-D", m.shape)
        seen = np.zeros(m.size, dtype=bool)
        if m.size:
            if m.min() < 0 or m.max() >= m.size:
                raise ValueError("permutation map entries out of range")
            seen[m] = True
            if not seen.all():
                raise ValueError("permutation map is not a bijection")
        object.__setattr__(self, "map", m)

    def __len__(self):
        return self.map.size

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n, dtype=np.int64))

    @classmethod
    def from_order(cls, order):
        """Build the permutation sending source `order[k]` to position k."""
        order = np.asarray(order, dtype=np.int64)
        m = np.empty_like(order)
        m[order] = np.arange(order.size, dtype=np.int64)
        return cls(m)

    def inverse(self):
        inv = np.empty_like(self.map)
        inv[self.map] = np.arange(self.map.size, dtype=np.int64)
        return Permutation(inv)

    def compose(self, first):
        """Permutation equivalent to applying `first`, then `self`."""
        if len(self) != len(first):
            raise DimensionError("permutation size mismatch", len(self), len(first))
        return Permutation(self.map[first.map])

    @property
    def order(self):
        """order[k] = source index appearing at position k."""
        return self.inverse().map


# ---------------------------------------------------------------------------
# Generic queries


def rows_of(x):
    return x.shape[0] if isinstance(x, np.ndarray) else x.rows


def cols_of(x):
    return x.shape[1] if isinstance(x, np.ndarray) else x.cols


def shape_of(x):
    return (rows_of(x), cols_of(x))


def dtype_of(x):
    return x.dtype


# ---------------------------------------------------------------------------
# Operations


def matmul(a, b):
    """Dense matrix product with an explicit dimension check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul dimension mismatch", a.shape, b.shape)
    return a @ b


def to_dense(x):
    """Materialize any supported matrix type as a dense array.

    Triplet duplicates are summed.  Mostly a debug/oracle path: the solvers
    themselves never densify structured inputs.
    """
    if isinstance(x, np.ndarray):
        return x
    if isinstance(x, TripletMatrix):
        out = np.zeros((x.rows, x.cols), dtype=x.values.dtype)
        np.add.at(out, (x.row_idx, x.col_idx), x.values)
        return out
    if isinstance(x, BlockDiagonalMatrix):
        out = np.zeros(x.shape, dtype=x.dtype)
        for k, b in enumerate(x.blocks):
            r0 = x.row_offsets[k]
            c0 = x.col_offsets[k]
            out[r0 : r0 + b.shape[0], c0 : c0 + b.shape[1]] = b
        return out
    if isinstance(x, BandedBlockMatrix):
        out = np.zeros(x.shape, dtype=x.dtype)
        for b, r0, c0 in zip(x.blocks, x.row_offsets, x.col_offsets):
            out[r0 : r0 + b.shape[0], c0 : c0 + b.shape[1]] = b
        return out
    if isinstance(x, HorzCatMatrix):
        return np.hstack([to_dense(x.left), x.right])
    if isinstance(x, VertCatMatrix):
        return np.vstack([to_dense(x.top), to_dense(x.bottom)])
    raise TypeError(f"cannot densify {type(x).__name__}")


def apply_row_permutation(p, x):
    """Move row i of `x` to row p.map[i].

    Returns the same structured type when the permutation preserves the
    structure (dense and triplet always do); otherwise the result is
    re-expressed as a TripletMatrix.
    """
    if len(p) != rows_of(x):
        raise DimensionError("permutation length != row count", len(p), shape_of(x))
    if isinstance(x, np.ndarray):
        out = np.empty_like(x)
        out[p.map] = x
        return out
    if isinstance(x, TripletMatrix):
        return TripletMatrix(x.rows, x.cols, p.map[x.row_idx], x.col_idx, x.values)
    # Structured containers: permuting rows generally destroys the block
    # structure, so fall back to triplet form.
    return dense_to_triplet(to_dense(x), permute=p)


def dense_to_triplet(a, permute=None):
    a = np.asarray(a)
    ri, ci = np.nonzero(a)
    vals = a[ri, ci]
    if permute is not None:
        ri = permute.map[ri]
    return TripletMatrix(a.shape[0], a.shape[1], ri, ci, vals)


def triplet_of(x):
    """Entry-wise triplet view of any supported matrix type."""
    if isinstance(x, TripletMatrix):
        return x
    return dense_to_triplet(to_dense(x))


def matvec(x, v):
    """x @ v for any supported matrix type (v is 1-D)."""
    v = np.asarray(v)
    if v.shape[0] != cols_of(x):
        raise DimensionError("matvec dimension mismatch", shape_of(x), v.shape)
    if isinstance(x, np.ndarray):
        return x @ v
    if isinstance(x, BlockDiagonalMatrix):
        out = np.empty(x.rows, dtype=np.result_type(x.dtype, v.dtype))
        for k, b in enumerate(x.blocks):
            r0, c0 = x.row_offsets[k], x.col_offsets[k]
            out[r0 : r0 + b.shape[0]] = b @ v[c0 : c0 + b.shape[1]]
        return out
    if isinstance(x, BandedBlockMatrix):
        out = np.zeros(x.rows, dtype=np.result_type(x.dtype, v.dtype))
        for b, r0, c0 in zip(x.blocks, x.row_offsets, x.col_offsets):
            out[r0 : r0 + b.shape[0]] = b @ v[c0 : c0 + b.shape[1]]
        return out
    if isinstance(x, HorzCatMatrix):
        nl = cols_of(x.left)
        return matvec(x.left, v[:nl]) + x.right @ v[nl:]
    if isinstance(x, VertCatMatrix):
        return np.concatenate([matvec(x.top, v), matvec(x.bottom, v)])
    if isinstance(x, TripletMatrix):
        out = np.zeros(x.rows, dtype=np.result_type(x.dtype, v.dtype))
        np.add.at(out, x.row_idx, x.values * v[x.col_idx])
        return out
    raise TypeError(f"matvec unsupported for {type(x).__name__}")


def rmatvec(x, v):
    """x.T @ v for any supported matrix type (v is 1-D)."""
    v = np.asarray(v)
    if v.shape[0] != rows_of(x):
        raise DimensionError("rmatvec dimension mismatch", shape_of(x), v.shape)
    if isinstance(x, np.ndarray):
        return x.T @ v
    if isinstance(x, BlockDiagonalMatrix):
        out = np.empty(x.cols, dtype=np.result_type(x.dtype, v.dtype))
        for k, b in enumerate(x.blocks):
            r0, c0 = x.row_offsets[k], x.col_offsets[k]
            out[c0 : c0 + b.shape[1]] = b.T @ v[r0 : r0 + b.shape[0]]
        return out
    if isinstance(x, BandedBlockMatrix):
        out = np.zeros(x.cols, dtype=np.result_type(x.dtype, v.dtype))
        for b, r0, c0 in zip(x.blocks, x.row_offsets, x.col_offsets):
            out[c0 : c0 + b.shape[1]] += b.T @ v[r0 : r0 + b.shape[0]]
        return out
    if isinstance(x, HorzCatMatrix):
        return np.concatenate([rmatvec(x.left, v), x.right.T @ v])
    if isinstance(x, VertCatMatrix):
        nt = rows_of(x.top)
        return rmatvec(x.top, v[:nt]) + rmatvec(x.bottom, v[nt:])
    if isinstance(x, TripletMatrix):
        out = np.zeros(x.cols, dtype=np.result_type(x.dtype, v.dtype))
        np.add.at(out, x.col_idx, x.values * v[x.row_idx])
        return out
    raise TypeError(f"rmatvec unsupported for {type(x).__name__}")


def col_norms_squared(x):
    """Squared Euclidean norm of each column (the diagonal of X^T X)."""
    if isinstance(x, np.ndarray):
        return np.einsum("ij,ij->j", x, x)
    if isinstance(x, BlockDiagonalMatrix):
        out = np.empty(x.cols, dtype=x.dtype)
        for k, b in enumerate(x.blocks):
            c0 = x.col_offsets[k]
            out[c0 : c0 + b.shape[1]] = np.einsum("ij,ij->j", b, b)
        return out
    if isinstance(x, BandedBlockMatrix):
        out = np.zeros(x.cols, dtype=x.dtype)
        for b, c0 in zip(x.blocks, x.col_offsets):
            out[c0 : c0 + b.shape[1]] += np.einsum("ij,ij->j", b, b)
        return out
    if isinstance(x, HorzCatMatrix):
        return np.concatenate(
            [col_norms_squared(x.left), np.einsum("ij,ij->j", x.right, x.right)]
        )
    if isinstance(x, VertCatMatrix):
        return col_norms_squared(x.top) + col_norms_squared(x.bottom)
    if isinstance(x, TripletMatrix):
        out = np.zeros(x.cols, dtype=x.dtype)
        np.add.at(out, x.col_idx, x.values * x.values)
        return out
    raise TypeError(f"col_norms_squared unsupported for {type(x).__name__}")


def frobenius(x):
    if isinstance(x, np.ndarray):
        return float(np.linalg.norm(x))
    return float(np.sqrt(col_norms_squared(x).sum()))


# ---------------------------------------------------------------------------
# Matrix Market coordinate I/O (1-based indices)

_MM_HEADER = "%%MatrixMarket matrix coordinate real general"


def write_matrix_market(path, t):
    """Write a TripletMatrix in Matrix Market coordinate format."""
    with open(path, "w") as fh:
        fh.write(_MM_HEADER + "\n")
        fh.write(f"{t.rows} {t.cols} {t.nnz}\n")
        for i, j, v in zip(t.row_idx, t.col_idx, t.values):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_matrix_market(path, dtype=np.float64):
    """Read a Matrix Market coordinate file into a TripletMatrix."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.lower().startswith("%%matrixmarket"):
            raise ParseError("missing MatrixMarket banner", line=1)
        fields = header.split()
        if [f.lower() for f in fields[1:]] != ["matrix", "coordinate", "real", "general"]:
            raise ParseError(f"unsupported MatrixMarket header: {header}", line=1)
        lineno = 1
        size_line = None
        for line in fh:
            lineno += 1
            s = line.strip()
            if not s or s.startswith("%"):
                continue
            size_line = s
            break
        if size_line is None:
            raise ParseError("missing size line", line=lineno)
        try:
            rows, cols, nnz = (int(tok) for tok in size_line.split())
        except ValueError as exc:
            raise ParseError(f"bad size line: {size_line!r}", line=lineno) from exc
        ri = np.empty(nnz, dtype=np.int64)
        ci = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=dtype)
        k = 0
        for line in fh:
            lineno += 1
            s = line.strip()
            if not s or s.startswith("%"):
                continue
            if k >= nnz:
                raise ParseError("more entries than declared", line=lineno)
            toks = s.split()
            try:
                ri[k] = int(toks[0]) - 1
                ci[k] = int(toks[1]) - 1
                vals[k] = float(toks[2])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad entry line: {s!r}", line=lineno) from exc
            k += 1
        if k != nnz:
            raise ParseError(f"expected {nnz} entries, found {k}", line=lineno)
    return TripletMatrix(rows, cols, ri, ci, vals)
