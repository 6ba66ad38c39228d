"""Pure-numpy reference kernels.

These implement the same contracts as the compiled extension in `_core.pyx`
and are used when the extension is unavailable (or explicitly selected for
benchmarking).  Conventions shared by both backends:

* 2-D matrix arguments (`a`, `v`, `t`, `r`, `b`) are Fortran-ordered, or
  row/column slices of Fortran-ordered arrays (first axis contiguous).
* Packed reflectors follow the LAPACK layout: reflector j lives in column j
  with an implicit unit at row j and its tail below; entries above the
  diagonal belong to R and are never read by the apply kernels.
* `tau` holds the reflector scalings; tau = 0 encodes a skipped reflector.
* Batched kernels operate on flat 1-D buffers: `flat` packs B same-shape
  (m x n) column-major blocks back to back; batched right-hand sides are
  (B, m, k) C-ordered.

The reflector sign convention makes every R diagonal entry nonnegative,
so factorizations are bit-deterministic for a fixed input.
"""

import numpy as np


def _safe_min(dtype):
    fi = np.finfo(dtype)
    return fi.tiny / fi.eps


def qr_inplace(a, tau, limit=-1):
    """Unblocked Householder QR of `a` (m x n), in place.

    Computes `limit` reflectors (all min(m, n) if negative) and applies each
    to every remaining column of `a`.  R ends up in the upper triangle,
    reflector tails below the diagonal, scalings in `tau`.
    """
    m, n = a.shape
    k = min(m, n) if limit < 0 else min(limit, m, n)
    smin = _safe_min(a.dtype)
    for j in range(k):
        alpha = a[j, j]
        tail = a[j + 1 :, j]
        sigma = np.dot(tail, tail)
        norm = np.sqrt(alpha * alpha + sigma)
        if norm <= smin:
            tau[j] = 0
            continue
        if alpha >= 0:
            # alpha - beta without cancellation
            v0 = -sigma / (alpha + norm)
        else:
            v0 = alpha - norm
        if v0 == 0:  # sigma == 0 and alpha >= 0: column already reduced
            tau[j] = 0
            a[j, j] = norm
            continue
        t = 2 * v0 * v0 / (sigma + v0 * v0)
        tau[j] = t
        tail /= v0
        a[j, j] = norm
        if j + 1 < n:
            # w = v^T a[:, j+1:] with v = (1, tail)
            w = a[j, j + 1 :] + tail @ a[j + 1 :, j + 1 :]
            a[j, j + 1 :] -= t * w
            a[j + 1 :, j + 1 :] -= np.multiply.outer(t * tail, w)
    return k


def larft(v, tau, t):
    """Accumulate the triangular factor T with Q = I + V T V^T.

    `v` is the packed (m x r) reflector panel, `t` the (r x r) output.  With
    this sign convention T = -tau on the diagonal (each reflector is
    I - tau v v^T, i.e. a WY block with T = [-tau]).
    """
    r = v.shape[1]
    t[:] = 0
    for i in range(r):
        ti = tau[i]
        if i > 0 and ti != 0:
            # w = V[:, :i]^T v_i ; support of v_i is rows >= i, where the
            # earlier columns are fully stored (their unit rows are above).
            w = v[i, :i] + v[i + 1 :, :i].T @ v[i + 1 :, i]
            t[:i, i] = -ti * (t[:i, :i] @ w)
        t[i, i] = -ti


def apply_wy_qt(v, t, b):
    """b <- (I + V T V^T)^T b, in place (the Q^T direction)."""
    _apply_wy(v, t, b, transpose=True)


def apply_wy_q(v, t, b):
    """b <- (I + V T V^T) b, in place."""
    _apply_wy(v, t, b, transpose=False)


def _apply_wy(v, t, b, transpose):
    m, r = v.shape
    if r == 0 or b.shape[1] == 0:
        return
    v1 = np.tril(v[:r, :], -1)
    np.fill_diagonal(v1, 1)
    v2 = v[r:, :]
    # w = V^T b
    w = v1.T @ b[:r] + v2.T @ b[r:]
    w = (t.T if transpose else t) @ w
    b[:r] += v1 @ w
    if m > r:
        b[r:] += v2 @ w


def apply_reflectors_qt(v, tau, b):
    """Apply H_{k-1}...H_0 to b in place (unblocked Q^T application)."""
    _apply_reflectors(v, tau, b, range(v.shape[1]))


def apply_reflectors_q(v, tau, b):
    """Apply H_0...H_{k-1} to b in place (unblocked Q application)."""
    _apply_reflectors(v, tau, b, range(v.shape[1] - 1, -1, -1))


def _apply_reflectors(v, tau, b, order):
    m = v.shape[0]
    for j in order:
        t = tau[j]
        if t == 0:
            continue
        tail = v[j + 1 :, j]
        w = b[j] + tail @ b[j + 1 :]
        b[j] -= t * w
        if j + 1 < m:
            b[j + 1 :] -= np.multiply.outer(t * tail, w)


def solve_triu(r, b):
    """Back-substitution: overwrite b (n x k) with R^{-1} b.

    Reads only the upper triangle of the leading n x n part of `r`; the
    caller is responsible for rejecting (near-)singular diagonals first.
    """
    n = b.shape[0]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            b[i] -= r[i, i + 1 : n] @ b[i + 1 :]
        b[i] /= r[i, i]


# ---------------------------------------------------------------------------
# Batched variants (all blocks share one shape)


def _blocks_view(flat, nb, m, n):
    # column-major (m, n) blocks stored back to back
    return flat.reshape(nb, n, m).transpose(0, 2, 1)


def batched_qr(flat, taus, nb, m, n):
    """Householder-factor nb packed (m x n) blocks stored in `flat`."""
    a = _blocks_view(flat, nb, m, n)
    tau = taus.reshape(nb, min(m, n))
    smin = _safe_min(a.dtype)
    k = min(m, n)
    for j in range(k):
        alpha = a[:, j, j].copy()
        tail = a[:, j + 1 :, j]
        sigma = np.einsum("bi,bi->b", tail, tail)
        norm = np.sqrt(alpha * alpha + sigma)
        live = norm > smin
        v0 = np.where(
            alpha >= 0,
            -sigma / np.where(alpha + norm == 0, 1, alpha + norm),
            alpha - norm,
        )
        live &= v0 != 0
        t = np.where(live, 2 * v0 * v0 / np.where(live, sigma + v0 * v0, 1), 0)
        tau[:, j] = t
        tail /= np.where(live, v0, 1)[:, None]
        a[:, j, j] = np.where(t != 0, norm, alpha)
        if j + 1 < n:
            w = a[:, j, j + 1 :] + np.einsum("bi,bik->bk", tail, a[:, j + 1 :, j + 1 :])
            tw = t[:, None] * w
            a[:, j, j + 1 :] -= tw
            a[:, j + 1 :, j + 1 :] -= tail[:, :, None] * tw[:, None, :]


def batched_apply_qt(flat, taus, nb, m, n, rhs, k):
    """Apply each block's Q^T to its (m x k) slice of rhs (C-order, in place)."""
    v = _blocks_view(flat, nb, m, n)
    tau = taus.reshape(nb, min(m, n))
    b = rhs.reshape(nb, m, k)
    for j in range(min(m, n)):
        _batched_reflect(v, tau, b, j)


def batched_apply_q(flat, taus, nb, m, n, rhs, k):
    v = _blocks_view(flat, nb, m, n)
    tau = taus.reshape(nb, min(m, n))
    b = rhs.reshape(nb, m, k)
    for j in range(min(m, n) - 1, -1, -1):
        _batched_reflect(v, tau, b, j)


def _batched_reflect(v, tau, b, j):
    t = tau[:, j]
    tail = v[:, j + 1 :, j]
    w = b[:, j, :] + np.einsum("bi,bik->bk", tail, b[:, j + 1 :, :])
    tw = t[:, None] * w
    b[:, j, :] -= tw
    b[:, j + 1 :, :] -= tail[:, :, None] * tw[:, None, :]


def batched_solve_triu(flat, nb, m, n, rhs, k):
    """Solve R x = y per block using the packed blocks' upper triangles.

    rhs is (nb, n, k) C-ordered, overwritten with the solutions.
    """
    a = _blocks_view(flat, nb, m, n)
    y = rhs.reshape(nb, n, k)
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            y[:, i, :] -= np.einsum("bj,bjk->bk", a[:, i, i + 1 : n], y[:, i + 1 :, :])
        y[:, i, :] /= a[:, i, i][:, None]
