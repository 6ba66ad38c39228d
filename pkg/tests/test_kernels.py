"""Compiled and fallback kernel backends must agree bit-for-bit-ish.

Every kernel is run on both backends with identical inputs; outputs are
compared at a roundoff-scaled tolerance (summation order may differ, so
exact byte equality is not required -- determinism *within* one backend is
covered in test_householder).

Watch out: np.asfortranarray((m, 1)-shaped x) returns x itself, so every
test copies with .copy(order="F") before handing a buffer to a backend.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from structqr import _kernels as kernels

HAVE_COMPILED = "compiled" in kernels.available_backends()

needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled kernel extension not built"
)


def _tol(dtype, m, n):
    return 64 * np.finfo(dtype).eps * max(m, n)


def _run_both(fn_name, *arrays):
    """Call a kernel under each backend on fresh copies; return outputs."""
    results = {}
    for backend in kernels.available_backends():
        prev = kernels.set_backend(backend)
        try:
            copies = [
                a.copy(order="F") if a.ndim == 2 else a.copy() for a in arrays
            ]
            ret = getattr(kernels, fn_name)(*copies)
            results[backend] = (ret, copies)
        finally:
            kernels.set_backend(prev)
    return results


def test_backend_registry():
    assert "fallback" in kernels.available_backends()
    prev = kernels.set_backend("fallback")
    assert kernels.active_backend() == "fallback"
    kernels.set_backend(prev)
    assert kernels.active_backend() == prev
    with pytest.raises(ValueError):
        kernels.set_backend("mystery")


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@pytest.mark.parametrize("shape", [(1, 1), (5, 1), (4, 4), (12, 7), (7, 12), (30, 30)])
def test_qr_inplace_parity(dtype, shape):
    m, n = shape
    rng = np.random.default_rng(m * 100 + n)
    a0 = rng.standard_normal((m, n)).astype(dtype)
    k = min(m, n)
    out = {}
    for backend in kernels.available_backends():
        prev = kernels.set_backend(backend)
        try:
            a = a0.copy(order="F")
            tau = np.zeros(k, dtype=dtype)
            got_k = kernels.qr_inplace(a, tau, -1)
            assert got_k == k
            out[backend] = (a, tau)
        finally:
            kernels.set_backend(prev)
    a_c, tau_c = out["compiled"]
    a_f, tau_f = out["fallback"]
    tol = _tol(dtype, m, n)
    assert np.abs(a_c - a_f).max() <= tol * max(np.abs(a_f).max(), 1.0)
    assert np.abs(tau_c - tau_f).max() <= tol


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_reflector_application_parity(dtype):
    rng = np.random.default_rng(77)
    for m, n, nrhs in [(6, 3, 2), (10, 4, 5), (5, 5, 1), (9, 2, 4)]:
        a0 = rng.standard_normal((m, n)).astype(dtype)
        b0 = rng.standard_normal((m, nrhs)).astype(dtype)
        # factor once (fallback) so both backends apply identical reflectors
        prev = kernels.set_backend("fallback")
        a = a0.copy(order="F")
        tau = np.zeros(n, dtype=dtype)
        kernels.qr_inplace(a, tau, -1)
        kernels.set_backend(prev)
        v = a[:, :n]
        got = {}
        for backend in kernels.available_backends():
            prev = kernels.set_backend(backend)
            try:
                bt = b0.copy(order="F")
                kernels.apply_reflectors_qt(v, tau, bt)
                bq = bt.copy(order="F")
                kernels.apply_reflectors_q(v, tau, bq)
                got[backend] = (bt, bq)
            finally:
                kernels.set_backend(prev)
        tol = _tol(dtype, m, n) * max(np.abs(b0).max(), 1.0)
        assert np.abs(got["compiled"][0] - got["fallback"][0]).max() <= tol
        assert np.abs(got["compiled"][1] - got["fallback"][1]).max() <= tol
        # Q Q^T b round-trips back to b
        assert np.abs(got["compiled"][1] - b0).max() <= tol


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_wy_parity(dtype):
    rng = np.random.default_rng(31)
    m, r, nrhs = 11, 4, 3
    a0 = rng.standard_normal((m, r)).astype(dtype)
    b0 = rng.standard_normal((m, nrhs)).astype(dtype)
    prev = kernels.set_backend("fallback")
    a = a0.copy(order="F")
    tau = np.zeros(r, dtype=dtype)
    kernels.qr_inplace(a, tau, -1)
    kernels.set_backend(prev)
    got = {}
    for backend in kernels.available_backends():
        prev = kernels.set_backend(backend)
        try:
            t = np.zeros((r, r), dtype=dtype, order="F")
            kernels.larft(a.copy(order="F"), tau.copy(), t)
            bt = b0.copy(order="F")
            kernels.apply_wy_qt(a.copy(order="F"), t, bt)
            bq = bt.copy(order="F")
            kernels.apply_wy_q(a.copy(order="F"), t, bq)
            got[backend] = (t, bt, bq)
        finally:
            kernels.set_backend(prev)
    tol = _tol(dtype, m, r) * max(np.abs(b0).max(), 1.0)
    for i in range(3):
        assert np.abs(got["compiled"][i] - got["fallback"][i]).max() <= tol
    # T is upper triangular with -tau on the diagonal
    t = got["compiled"][0]
    assert np.abs(np.tril(t, -1)).max() == 0.0
    assert_allclose(np.diagonal(t), -tau, atol=tol)


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_solve_triu_parity(dtype):
    rng = np.random.default_rng(5)
    n, nrhs = 9, 4
    r = np.triu(rng.standard_normal((n, n))).astype(dtype)
    r[np.arange(n), np.arange(n)] += 4.0  # keep well-conditioned
    b0 = rng.standard_normal((n, nrhs)).astype(dtype)
    got = {}
    for backend in kernels.available_backends():
        prev = kernels.set_backend(backend)
        try:
            b = b0.copy(order="F")
            kernels.solve_triu(r.copy(order="F"), b)
            got[backend] = b
        finally:
            kernels.set_backend(prev)
    tol = _tol(dtype, n, n)
    assert np.abs(got["compiled"] - got["fallback"]).max() <= tol
    assert np.abs(r @ got["compiled"] - b0).max() <= 64 * tol


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_batched_parity(dtype):
    rng = np.random.default_rng(12)
    nb, m, n, k = 7, 5, 3, 2
    blocks = rng.standard_normal((nb, m, n)).astype(dtype)
    # flat layout: column-major m x n blocks back to back
    flat0 = np.concatenate([b.T.reshape(-1) for b in blocks])
    rhs0 = rng.standard_normal((nb, m, k)).astype(dtype).reshape(-1)
    got = {}
    for backend in kernels.available_backends():
        prev = kernels.set_backend(backend)
        try:
            flat = flat0.copy()
            taus = np.zeros(nb * n, dtype=dtype)
            kernels.batched_qr(flat, taus, nb, m, n)
            rhs = rhs0.copy()
            kernels.batched_apply_qt(flat, taus, nb, m, n, rhs, k)
            rhs_q = rhs.copy()
            kernels.batched_apply_q(flat, taus, nb, m, n, rhs_q, k)
            # the triangular stage sees only each block's top n rows
            sol = rhs.reshape(nb, m, k)[:, :n, :].copy().reshape(-1)
            kernels.batched_solve_triu(flat, nb, m, n, sol, k)
            got[backend] = (flat, taus, rhs, rhs_q, sol)
        finally:
            kernels.set_backend(prev)
    tol = _tol(dtype, m, n) * 4
    for i in range(5):
        assert np.abs(got["compiled"][i] - got["fallback"][i]).max() <= tol
    # Q applied after Q^T restores the original right-hand side
    assert np.abs(got["compiled"][3] - rhs0).max() <= tol


@pytest.mark.parametrize("backend_name", ["fallback", "compiled"])
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_batched_matches_per_block_single(backend_name, dtype):
    if backend_name not in kernels.available_backends():
        pytest.skip("compiled kernel extension not built")
    rng = np.random.default_rng(9)
    nb, m, n, k = 5, 6, 4, 3
    blocks = rng.standard_normal((nb, m, n)).astype(dtype)
    rhs_blocks = rng.standard_normal((nb, m, k)).astype(dtype)
    flat = np.concatenate([b.T.reshape(-1) for b in blocks])
    rhs = rhs_blocks.reshape(-1).copy()
    prev = kernels.set_backend(backend_name)
    try:
        taus = np.zeros(nb * n, dtype=dtype)
        kernels.batched_qr(flat, taus, nb, m, n)
        kernels.batched_apply_qt(flat, taus, nb, m, n, rhs, k)
        sol = rhs.reshape(nb, m, k)[:, :n, :].copy().reshape(-1)
        kernels.batched_solve_triu(flat, nb, m, n, sol, k)
        tol = _tol(dtype, m, n)
        for b in range(nb):
            a = blocks[b].copy(order="F")
            tau = np.zeros(n, dtype=dtype)
            kernels.qr_inplace(a, tau, -1)
            packed = flat[b * m * n : (b + 1) * m * n].reshape(n, m).T
            assert np.abs(packed - a).max() <= tol * max(np.abs(a).max(), 1.0)
            assert np.abs(taus[b * n : (b + 1) * n] - tau).max() <= tol
            br = rhs_blocks[b].copy(order="F")
            kernels.apply_reflectors_qt(a[:, :n], tau, br)
            got_rhs = rhs[b * m * k : (b + 1) * m * k].reshape(m, k)
            assert np.abs(got_rhs - br).max() <= tol * max(np.abs(br).max(), 1.0)
            x = br[:n].copy(order="F")
            kernels.solve_triu(a, x)
            got_x = sol.reshape(nb, n, k)[b]
            assert np.abs(got_x - x).max() <= 64 * tol * max(np.abs(x).max(), 1.0)
    finally:
        kernels.set_backend(prev)


@needs_compiled
def test_qr_inplace_limit_argument():
    rng = np.random.default_rng(3)
    a0 = rng.standard_normal((8, 5))
    for backend in kernels.available_backends():
        prev = kernels.set_backend(backend)
        try:
            a = a0.copy(order="F")
            tau = np.zeros(5)
            got = kernels.qr_inplace(a, tau, 2)
            assert got == 2
            assert tau[2] == tau[3] == tau[4] == 0.0
            # columns past the limit keep the transformed values from the
            # first two reflectors but are not themselves factored
        finally:
            kernels.set_backend(prev)
