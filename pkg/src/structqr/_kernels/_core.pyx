# cython: language_level=3
"""Compiled Householder/WY kernels (float32 + float64 via a fused type).

Same contracts as ``_fallback``: LAPACK-style packed reflectors with an
implicit unit diagonal, tau = 0 meaning "skip", nonnegative R diagonals,
batched blocks stored column-major back to back in flat 1-D buffers with
C-ordered right-hand sides.  See the fallback module docstring for the full
conventions; the two backends are interchangeable up to roundoff.
"""

import numpy as np

from libc.math cimport sqrt, sqrtf

ctypedef fused scalar:
    float
    double

cdef double SAFE_MIN_F32 = float(np.finfo(np.float32).tiny / np.finfo(np.float32).eps)
cdef double SAFE_MIN_F64 = float(np.finfo(np.float64).tiny / np.finfo(np.float64).eps)


cdef inline scalar _sqrt(scalar x) noexcept nogil:
    if scalar is float:
        return sqrtf(x)
    else:
        return sqrt(x)


def qr_inplace(scalar[:, :] a, scalar[:] tau, Py_ssize_t limit=-1):
    """Unblocked Householder QR of `a` (m x n), in place; returns the number
    of reflectors computed."""
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = a.shape[1]
    cdef Py_ssize_t k = m if m < n else n
    if 0 <= limit < k:
        k = limit
    cdef double smin = SAFE_MIN_F32 if scalar is float else SAFE_MIN_F64
    cdef Py_ssize_t i, j, c
    cdef scalar alpha, sigma, norm, v0, t, w
    with nogil:
        for j in range(k):
            alpha = a[j, j]
            sigma = 0
            for i in range(j + 1, m):
                sigma += a[i, j] * a[i, j]
            norm = _sqrt(alpha * alpha + sigma)
            if norm <= smin:
                tau[j] = 0
                continue
            if alpha >= 0:
                v0 = -sigma / (alpha + norm)
            else:
                v0 = alpha - norm
            if v0 == 0:
                tau[j] = 0
                a[j, j] = norm
                continue
            t = 2 * v0 * v0 / (sigma + v0 * v0)
            tau[j] = t
            for i in range(j + 1, m):
                a[i, j] /= v0
            a[j, j] = norm
            for c in range(j + 1, n):
                w = a[j, c]
                for i in range(j + 1, m):
                    w += a[i, j] * a[i, c]
                a[j, c] -= t * w
                for i in range(j + 1, m):
                    a[i, c] -= t * a[i, j] * w
    return k


def larft(scalar[:, :] v, scalar[:] tau, scalar[:, :] t):
    """Accumulate the upper-triangular T with Q = I + V T V^T."""
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t r = v.shape[1]
    cdef Py_ssize_t i, p, q, row
    cdef scalar ti, acc
    cdef scalar[::1] w = np.empty(r, dtype=np.float32 if scalar is float else np.float64)
    with nogil:
        for p in range(r):
            for q in range(r):
                t[p, q] = 0
        for i in range(r):
            ti = tau[i]
            if i > 0 and ti != 0:
                for q in range(i):
                    acc = v[i, q]
                    for row in range(i + 1, m):
                        acc += v[row, q] * v[row, i]
                    w[q] = acc
                for p in range(i):
                    acc = 0
                    for q in range(p, i):
                        acc += t[p, q] * w[q]
                    t[p, i] = -ti * acc
            t[i, i] = -ti


def apply_wy_qt(scalar[:, :] v, scalar[:, :] t, scalar[:, :] b):
    """b <- (I + V T V^T)^T b, in place."""
    _apply_wy(v, t, b, 1)


def apply_wy_q(scalar[:, :] v, scalar[:, :] t, scalar[:, :] b):
    """b <- (I + V T V^T) b, in place."""
    _apply_wy(v, t, b, 0)


cdef void _apply_wy(scalar[:, :] v, scalar[:, :] t, scalar[:, :] b, int transpose):
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t r = v.shape[1]
    cdef Py_ssize_t kk = b.shape[1]
    if r == 0 or kk == 0:
        return
    dtype = np.float32 if scalar is float else np.float64
    cdef scalar[:, ::1] w = np.empty((r, kk), dtype=dtype)
    cdef scalar[:, ::1] w2 = np.empty((r, kk), dtype=dtype)
    cdef Py_ssize_t i, q, c, p
    cdef scalar acc
    with nogil:
        # w = V^T b with the unit lower-triangular top block of V
        for q in range(r):
            for c in range(kk):
                acc = b[q, c]
                for i in range(q + 1, r):
                    acc += v[i, q] * b[i, c]
                for i in range(r, m):
                    acc += v[i, q] * b[i, c]
                w[q, c] = acc
        # w2 = T w (or T^T w); T is upper triangular
        for p in range(r):
            for c in range(kk):
                acc = 0
                if transpose:
                    for q in range(p + 1):
                        acc += t[q, p] * w[q, c]
                else:
                    for q in range(p, r):
                        acc += t[p, q] * w[q, c]
                w2[p, c] = acc
        # b += V w2
        for i in range(r):
            for c in range(kk):
                acc = w2[i, c]
                for q in range(i):
                    acc += v[i, q] * w2[q, c]
                b[i, c] += acc
        for i in range(r, m):
            for c in range(kk):
                acc = 0
                for q in range(r):
                    acc += v[i, q] * w2[q, c]
                b[i, c] += acc


def apply_reflectors_qt(scalar[:, :] v, scalar[:] tau, scalar[:, :] b):
    """Apply H_{k-1}...H_0 to b in place."""
    cdef Py_ssize_t j
    for j in range(v.shape[1]):
        _reflect(v, tau, b, j)


def apply_reflectors_q(scalar[:, :] v, scalar[:] tau, scalar[:, :] b):
    """Apply H_0...H_{k-1} to b in place."""
    cdef Py_ssize_t j
    for j in range(v.shape[1] - 1, -1, -1):
        _reflect(v, tau, b, j)


cdef void _reflect(scalar[:, :] v, scalar[:] tau, scalar[:, :] b, Py_ssize_t j):
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t kk = b.shape[1]
    cdef scalar t = tau[j]
    if t == 0:
        return
    cdef Py_ssize_t i, c
    cdef scalar w
    with nogil:
        for c in range(kk):
            w = b[j, c]
            for i in range(j + 1, m):
                w += v[i, j] * b[i, c]
            b[j, c] -= t * w
            for i in range(j + 1, m):
                b[i, c] -= t * v[i, j] * w


def solve_triu(scalar[:, :] r, scalar[:, :] b):
    """Back-substitution with the leading upper triangle of `r`, in place."""
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t kk = b.shape[1]
    cdef Py_ssize_t i, q, c
    cdef scalar acc
    with nogil:
        for i in range(n - 1, -1, -1):
            for c in range(kk):
                acc = b[i, c]
                for q in range(i + 1, n):
                    acc -= r[i, q] * b[q, c]
                b[i, c] = acc / r[i, i]


# ---------------------------------------------------------------------------
# Batched variants (flat column-major blocks, C-ordered right-hand sides)


def batched_qr(scalar[::1] flat, scalar[::1] taus, Py_ssize_t nb,
               Py_ssize_t m, Py_ssize_t n):
    """Householder-factor nb packed (m x n) column-major blocks in place."""
    cdef Py_ssize_t k = m if m < n else n
    cdef double smin = SAFE_MIN_F32 if scalar is float else SAFE_MIN_F64
    cdef Py_ssize_t b, base, tbase, i, j, c
    cdef scalar alpha, sigma, norm, v0, t, w
    with nogil:
        for b in range(nb):
            base = b * m * n
            tbase = b * k
            for j in range(k):
                alpha = flat[base + j * m + j]
                sigma = 0
                for i in range(j + 1, m):
                    sigma += flat[base + j * m + i] * flat[base + j * m + i]
                norm = _sqrt(alpha * alpha + sigma)
                if norm <= smin:
                    taus[tbase + j] = 0
                    continue
                if alpha >= 0:
                    v0 = -sigma / (alpha + norm)
                else:
                    v0 = alpha - norm
                if v0 == 0:
                    taus[tbase + j] = 0
                    flat[base + j * m + j] = norm
                    continue
                t = 2 * v0 * v0 / (sigma + v0 * v0)
                taus[tbase + j] = t
                for i in range(j + 1, m):
                    flat[base + j * m + i] /= v0
                flat[base + j * m + j] = norm
                for c in range(j + 1, n):
                    w = flat[base + c * m + j]
                    for i in range(j + 1, m):
                        w += flat[base + j * m + i] * flat[base + c * m + i]
                    flat[base + c * m + j] -= t * w
                    for i in range(j + 1, m):
                        flat[base + c * m + i] -= t * flat[base + j * m + i] * w


def batched_apply_qt(scalar[::1] flat, scalar[::1] taus, Py_ssize_t nb,
                     Py_ssize_t m, Py_ssize_t n, scalar[::1] rhs, Py_ssize_t k):
    """Apply each block's Q^T to its (m x k) slice of rhs, in place."""
    cdef Py_ssize_t kr = m if m < n else n
    cdef Py_ssize_t b, j
    with nogil:
        for b in range(nb):
            for j in range(kr):
                _batched_reflect(flat, taus, rhs, b, j, m, n, k, kr)


def batched_apply_q(scalar[::1] flat, scalar[::1] taus, Py_ssize_t nb,
                    Py_ssize_t m, Py_ssize_t n, scalar[::1] rhs, Py_ssize_t k):
    """Apply each block's Q to its (m x k) slice of rhs, in place."""
    cdef Py_ssize_t kr = m if m < n else n
    cdef Py_ssize_t b, j
    with nogil:
        for b in range(nb):
            for j in range(kr - 1, -1, -1):
                _batched_reflect(flat, taus, rhs, b, j, m, n, k, kr)


cdef inline void _batched_reflect(scalar[::1] flat, scalar[::1] taus,
                                  scalar[::1] rhs, Py_ssize_t b, Py_ssize_t j,
                                  Py_ssize_t m, Py_ssize_t n, Py_ssize_t k,
                                  Py_ssize_t kr) noexcept nogil:
    cdef scalar t = taus[b * kr + j]
    if t == 0:
        return
    cdef Py_ssize_t vbase = b * m * n + j * m
    cdef Py_ssize_t rbase = b * m * k
    cdef Py_ssize_t i, c
    cdef scalar w
    for c in range(k):
        w = rhs[rbase + j * k + c]
        for i in range(j + 1, m):
            w += flat[vbase + i] * rhs[rbase + i * k + c]
        rhs[rbase + j * k + c] -= t * w
        for i in range(j + 1, m):
            rhs[rbase + i * k + c] -= t * flat[vbase + i] * w


def batched_solve_triu(scalar[::1] flat, Py_ssize_t nb, Py_ssize_t m,
                       Py_ssize_t n, scalar[::1] rhs, Py_ssize_t k):
    """Per-block back-substitution; rhs is (nb, n, k) C-ordered, overwritten."""
    cdef Py_ssize_t b, abase, ybase, i, q, c
    cdef scalar acc
    with nogil:
        for b in range(nb):
            abase = b * m * n
            ybase = b * n * k
            for i in range(n - 1, -1, -1):
                for c in range(k):
                    acc = rhs[ybase + i * k + c]
                    for q in range(i + 1, n):
                        acc -= flat[abase + q * m + i] * rhs[ybase + q * k + c]
                    rhs[ybase + i * k + c] = acc / flat[abase + i * m + i]
