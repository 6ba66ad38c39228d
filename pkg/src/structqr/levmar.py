"""Levenberg-Marquardt drivers over structured least-squares problems.

Three drivers share one outer loop: factor the Jacobian once per outer
iteration, then for each lambda trial rebuild only the m-row damping
augmentation of the triangular factor.

* ``backtrack_lm`` -- multiplicative lambda control (up on reject, down on
  accept) with QR steps.  ``solver_kind="qrkit-cholesky"`` switches the
  dense coupled subsystem of block-angular problems to normal equations
  while keeping QR elimination for the block-diagonal part.
* ``more_lm`` -- trust-region lambda control: a Hebden scalar iteration on
  phi(lambda) = |D p(lambda)| - Delta picks lambda, the radius Delta moves
  with the gain ratio.
* ``cholesky_lm`` -- the normal-equations baseline: (J^T J + lambda D^2) p
  = J^T b via Cholesky, with Schur-complement elimination of the
  block-diagonal part for block-angular Jacobians.

All linear algebra stays in the problem's dtype; only control scalars
(lambda, tolerances, energies used for accept tests) are tracked as Python
floats.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels as kernels
from .errors import DimensionError, ResidualError, SingularMatrixError
from .householder import WY_BLOCK, dense_qr
from .matrices import (
    BlockDiagonalMatrix,
    HorzCatMatrix,
    col_norms_squared,
    cols_of,
    matvec,
    rmatvec,
    to_dense,
)
from .ordering import lm_interleave_permutation
from .structured import (
    BlockDiagonalQRFactor,
    HorzCatQRFactor,
    banded_from_profile,
    block_banded_qr,
    factorize,
    solve_least_squares,
)

LAMBDA_CAP = 1e32

SOLVER_KINDS = ("qrkit", "qrkit-cholesky", "more-qr", "cholesky")

_F32_TOLS = (1e-4, 1e-5, 1e-6)  # grad, step, energy
_F64_TOLS = (1e-8, 1e-10, 1e-12)


# ---------------------------------------------------------------------------
# problem contract


class FunctionProblem:
    """Wrap plain callables as a least-squares problem.

    `residuals_fn(x)` returns the residual vector, `jacobian_fn(x)` any
    supported matrix type (dense ndarray included).  Mostly used for small
    test problems; the benchmark problems define their own classes.
    """

    def __init__(self, residuals_fn, jacobian_fn, x0):
        self._residuals = residuals_fn
        self._jacobian = jacobian_fn
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.dim_params = self.x0.size
        self.dim_residuals = np.asarray(residuals_fn(self.x0)).size

    def residuals(self, x):
        return np.asarray(self._residuals(x))

    def jacobian(self, x):
        return self._jacobian(x)


def initial_point(problem, x0=None):
    if x0 is None:
        x0 = getattr(problem, "x0", None)
    if x0 is None:
        raise ValueError("no initial point: pass x0 or give the problem an x0")
    return np.array(x0, copy=True)


def finite_difference_jacobian(problem, x):
    """Central-difference Jacobian at f64, h_i = eps^(1/3) * (1 + |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    h0 = np.finfo(np.float64).eps ** (1.0 / 3.0)
    cols = []
    for i in range(x.size):
        h = h0 * (1.0 + abs(float(x[i])))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = np.asarray(problem.residuals(xp), dtype=np.float64)
        fm = np.asarray(problem.residuals(xm), dtype=np.float64)
        cols.append((fp - fm) / (2.0 * h))
    return np.stack(cols, axis=1)


def jacobian_consistency(problem, x):
    """Max-norm gap between the analytic and finite-difference Jacobian,
    plus the scale 1 + |J|_max it should be compared against."""
    j = to_dense(problem.jacobian(np.asarray(x, dtype=np.float64)))
    jfd = finite_difference_jacobian(problem, x)
    scale = 1.0 + float(np.max(np.abs(j))) if j.size else 1.0
    return float(np.max(np.abs(j - jfd))) if j.size else 0.0, scale


def energy(problem, x):
    """0.5 * sum of squared residuals, accumulated in the residual dtype."""
    f = np.asarray(problem.residuals(x))
    bad = ~np.isfinite(f)
    if bad.any():
        raise ResidualError("non-finite residual", int(np.argmax(bad)))
    return 0.5 * float(np.dot(f, f))


# ---------------------------------------------------------------------------
# configuration and trace


@dataclass
class LMConfig:
    lambda0: float | None = None  # None -> 1e-3 * max diag(J^T J) at x0
    lambda_up: float = 2.0
    lambda_down: float = 1.0 / 3.0
    max_iterations: int = 200
    grad_tol: float | None = None  # None -> 1e-8 (f64) / 1e-4 (f32)
    step_tol: float | None = None  # None -> 1e-10 / 1e-5
    energy_tol: float | None = None  # None -> 1e-12 / 1e-6
    damping_mode: str = "identity"  # "identity" | "marquardt"
    solver_kind: str = "qrkit"
    block_size: int = WY_BLOCK
    timer: object = time.monotonic

    def validate(self):
        if not self.lambda_up > 1.0:
            raise ValueError("lambda_up must be > 1")
        if not 0.0 < self.lambda_down < 1.0:
            raise ValueError("lambda_down must be in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        for name in ("lambda0", "grad_tol", "step_tol", "energy_tol"):
            v = getattr(self, name)
            if v is not None and not v > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.damping_mode not in ("identity", "marquardt"):
            raise ValueError(f"unknown damping mode {self.damping_mode!r}")
        if self.solver_kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.solver_kind!r}")

    def tolerances(self, dtype):
        defaults = _F32_TOLS if np.dtype(dtype) == np.float32 else _F64_TOLS
        return (
            self.grad_tol if self.grad_tol is not None else defaults[0],
            self.step_tol if self.step_tol is not None else defaults[1],
            self.energy_tol if self.energy_tol is not None else defaults[2],
        )


@dataclass
class LMRecord:
    iteration: int
    energy: float
    lam: float
    step_norm: float
    grad_norm: float
    accepted: bool
    time_s: float


@dataclass
class LMTrace:
    records: list = field(default_factory=list)
    status: str = "max-iterations"

    def __len__(self):
        return len(self.records)

    def accepted_energies(self):
        return [r.energy for r in self.records if r.accepted]

    @property
    def accepted_steps(self):
        return sum(1 for r in self.records if r.accepted)

    @property
    def final_energy(self):
        acc = self.accepted_energies()
        return acc[-1] if acc else None

    def write_csv(self, target):
        if hasattr(target, "write"):
            self._write(target)
        else:
            with open(target, "w") as fh:
                self._write(fh)

    def _write(self, fh):
        fh.write("iter,energy,lambda,step_norm,grad_norm,accepted,time_s\n")
        for r in self.records:
            fh.write(
                f"{r.iteration},{float(r.energy)!r},{float(r.lam)!r},"
                f"{float(r.step_norm)!r},{float(r.grad_norm)!r},"
                f"{int(r.accepted)},{float(r.time_s)!r}\n"
            )


# ---------------------------------------------------------------------------
# damped QR step: solve min |[J; sqrt(lambda) D] p - [b; 0]| reusing J's factor


def _damping_vector(jac, mode, dtype):
    if mode == "identity":
        return np.ones(cols_of(jac), dtype=dtype)
    d = np.sqrt(col_norms_squared(jac)).astype(dtype, copy=False)
    d[d == 0] = 1  # structurally empty column: fall back to identity damping
    return d


def _pack_fortran_blocks(stack):
    """(B, n, m) C-ordered blocks -> flat buffer of column-major blocks."""
    return np.ascontiguousarray(stack.transpose(0, 2, 1)).reshape(-1)


class _DampedBlockDiagonal:
    """QR of [R; sqrt(lambda) D] for a block-diagonal R, batched per shape.

    Row layout per block k of width m: local rows [0, m) are R_k's rows,
    rows [m, 2m) the damping rows of its columns.  Globally the economy
    rows and the complement rows are both indexed by the R row (= column)
    index, which keeps scatter/gather trivial.
    """

    def __init__(self, factor, d, lam):
        dtype = factor.dtype
        sqrt_lam = dtype.type(math.sqrt(lam))
        self.cols = factor.cols
        self.dtype = dtype
        self._parts = []
        dmax = 0.0
        for g in factor.groups:
            nb, m = len(g.idx), g.m
            stack = np.zeros((nb, 2 * m, m), dtype=dtype)
            stack[:, :m, :] = g.r_triangles()
            ar = np.arange(m)
            stack[:, m + ar, ar] = sqrt_lam * d[g.src_cols]
            flat = _pack_fortran_blocks(stack)
            taus = np.empty(nb * m, dtype=dtype)
            kernels.batched_qr(flat, taus, nb, 2 * m, m)
            diag = np.diagonal(flat.reshape(nb, m, 2 * m), axis1=1, axis2=2)
            dmax = max(dmax, float(np.max(np.abs(diag))) if diag.size else 0.0)
            self._parts.append((g, nb, m, flat, taus, diag))
        self._dmax = dmax

    def qt_payload(self, payload):
        """Q^T [payload; 0] for payload rows aligned with R row indices.

        Returns (econ, comp), each (cols, k); comp row i is the complement
        row eliminated alongside economy row i.
        """
        payload = np.ascontiguousarray(payload, dtype=self.dtype)
        k = payload.shape[1]
        econ = np.empty((self.cols, k), dtype=self.dtype)
        comp = np.empty((self.cols, k), dtype=self.dtype)
        for g, nb, m, flat, taus, _ in self._parts:
            rhs = np.zeros((nb, 2 * m, k), dtype=self.dtype)
            rhs[:, :m] = payload[g.src_cols]
            kernels.batched_apply_qt(flat, taus, nb, 2 * m, m, rhs.reshape(-1), k)
            econ[g.src_cols] = rhs[:, :m]
            comp[g.src_cols] = rhs[:, m:]
        return econ, comp

    def solve_r(self, y):
        eps = float(np.finfo(self.dtype).eps)
        thresh = eps * self._dmax
        x = np.empty(self.cols, dtype=self.dtype)
        for g, nb, m, flat, taus, diag in self._parts:
            bad = np.abs(diag) <= thresh
            if bad.any():
                b, j = np.argwhere(bad)[0]
                raise SingularMatrixError(
                    int(g.src_cols[b, j]), "damped triangular factor is singular"
                )
            rhs = np.ascontiguousarray(y[g.src_cols][:, :, None])
            kernels.batched_solve_triu(flat, nb, 2 * m, m, rhs.reshape(-1), 1)
            x[g.src_cols] = rhs[:, :, 0]
        return x


class _DampedDense:
    """Dense fallback for [R; sqrt(lambda) D]: used when a composed factor
    has no structured fast path.  O(m^3) per trial, fine for small m."""

    def __init__(self, factor, d, lam, block_size):
        dtype = factor.dtype
        m = factor.cols
        stack = np.zeros((2 * m, m), dtype=dtype)
        stack[:m] = factor.r_dense()
        ar = np.arange(m)
        stack[m + ar, ar] = dtype.type(math.sqrt(lam)) * d
        self.cols = m
        self._factor = dense_qr(stack, block_size=block_size)

    def qt_payload(self, payload):
        m = self.cols
        buf = np.zeros((2 * m, payload.shape[1]), dtype=self._factor.packed.dtype)
        buf[:m] = payload
        out = self._factor.q_transpose_apply(buf)
        return out[:m], out[m:]

    def solve_r(self, y):
        return self._factor.solve_r(y)


def _damped_left(factor, d, lam, block_size):
    if isinstance(factor, BlockDiagonalQRFactor):
        return _DampedBlockDiagonal(factor, d, lam)
    return _DampedDense(factor, d, lam, block_size)


def _solve_damped_horzcat(factor, d, lam, y, block_size, right_cholesky):
    """Nested elimination for block-angular systems.

    Rotating [R1 C; 0 R2; sqrt(lambda) D] by the damped-left Q decouples the
    left parameters; the coupled part collapses to a small dense system
    [C_comp; R2; sqrt(lambda) D2] over the right parameters only.
    """
    m1, m2 = factor.m1, factor.m2
    dtype = factor.dtype
    dl = _damped_left(factor.left, d[:m1], lam, block_size)
    c_econ, c_comp = dl.qt_payload(factor.top_right)
    y_econ, y_comp = dl.qt_payload(y[:m1, None])
    y_econ = y_econ[:, 0]
    r2 = factor.right.r_dense()
    sqrt_lam = dtype.type(math.sqrt(lam))
    if right_cholesky:
        s = c_comp.T @ c_comp + r2.T @ r2
        ar = np.arange(m2)
        s[ar, ar] += dtype.type(lam) * d[m1:] ** 2
        g2 = c_comp.T @ y_comp[:, 0] + r2.T @ y[m1:]
        try:
            low = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise SingularMatrixError(m1, "coupled normal equations not positive definite")
        x2 = scipy.linalg.cho_solve((low, True), g2)
    else:
        rows = np.concatenate([c_comp, r2, np.zeros((m2, m2), dtype=dtype)], axis=0)
        ar = np.arange(m2)
        rows[m1 + m2 + ar, ar] = sqrt_lam * d[m1:]
        rhs = np.concatenate([y_comp[:, 0], y[m1:], np.zeros(m2, dtype=dtype)])
        fr = dense_qr(rows, block_size=block_size)
        x2 = solve_least_squares(fr, rhs)
    x1 = dl.solve_r(y_econ - c_econ @ x2)
    return np.concatenate([x1, x2])


def _solve_damped_generic(factor, d, lam, y, block_size):
    """Interleave the damping rows into R's banded profile and refactor.

    This is the vertcat-style augmentation refactorization: only the 2m-row
    [R; sqrt(lambda) D] system is rebuilt, never J itself.
    """
    m = factor.cols
    dtype = factor.dtype
    firsts, lasts = factor.r_row_spans()
    segments = factor.r_rows_list()
    if len(segments) < m:
        # Underdetermined J leaves R short of m rows; pad the missing
        # diagonals with explicit zero rows so the interleave sees a full
        # m-row triangle (the damping rows supply the actual pivots).
        pad = np.arange(len(segments), m)
        firsts = np.concatenate([firsts, pad])
        lasts = np.concatenate([lasts, pad])
        segments = list(segments) + [np.zeros(1, dtype=dtype) for _ in pad]
        y = np.concatenate([y, np.zeros(len(pad), dtype=dtype)])
    perm = lm_interleave_permutation(lasts, m)
    src = perm.inverse().map
    sqrt_lam = dtype.type(math.sqrt(lam))
    pf = np.empty(2 * m, dtype=np.int64)
    pl = np.empty(2 * m, dtype=np.int64)
    psegs = []
    rhs = np.zeros(2 * m, dtype=dtype)
    for dest in range(2 * m):
        i = int(src[dest])
        if i < m:
            pf[dest], pl[dest] = firsts[i], lasts[i]
            psegs.append(segments[i])
            rhs[dest] = y[i]
        else:
            j = i - m
            pf[dest] = pl[dest] = j
            psegs.append(np.array([sqrt_lam * d[j]], dtype=dtype))
    banded = banded_from_profile(pf, pl, psegs, m, dtype)
    fb = block_banded_qr(banded, block_size=block_size)
    return solve_least_squares(fb, rhs)


class _QRStepState:
    """One Jacobian factorization, many damped solves."""

    def __init__(self, jac, f, block_size=WY_BLOCK, right_cholesky=False):
        self.jac = jac
        self.block_size = block_size
        self.right_cholesky = right_cholesky
        self.factor = factorize(jac, block_size=block_size)
        b = np.ascontiguousarray(-f)
        self.qtb = self.factor.q_transpose_apply(b)[: self.factor.cols]

    def solve(self, d, lam):
        if lam == 0.0:
            return self.factor.solve_r(self.qtb)
        f = self.factor
        if isinstance(f, HorzCatQRFactor):
            return _solve_damped_horzcat(
                f, d, lam, self.qtb, self.block_size, self.right_cholesky
            )
        if isinstance(f, BlockDiagonalQRFactor):
            dbd = _DampedBlockDiagonal(f, d, lam)
            y, _ = dbd.qt_payload(self.qtb[:, None])
            return dbd.solve_r(y[:, 0])
        return _solve_damped_generic(f, d, lam, self.qtb, self.block_size)


# ---------------------------------------------------------------------------
# normal-equations step (the baseline)


class _CholeskyStepState:
    """Forms J^T J and J^T b once; per-lambda solves add the damping and
    factor by Cholesky.  Block-angular Jacobians go through a Schur
    complement on the small coupled block instead of the full m x m system.
    """

    def __init__(self, jac, f, block_size=WY_BLOCK):
        self.jac = jac
        b = -np.asarray(f)
        left = getattr(jac, "left", None)
        if (
            isinstance(jac, HorzCatMatrix)
            and isinstance(left, BlockDiagonalMatrix)
            and isinstance(jac.right, np.ndarray)
        ):
            self._init_block_angular(jac, b)
        else:
            jd = to_dense(jac)
            self.dtype = jd.dtype
            self.gram = jd.T @ jd
            self.rhs = jd.T @ b
            self.block_angular = False

    def _init_block_angular(self, jac, b):
        self.block_angular = True
        left, right = jac.left, jac.right
        self.dtype = right.dtype
        self.m1 = left.cols
        self.m2 = right.shape[1]
        shapes = np.array([blk.shape for blk in left.blocks])
        self._groups = []
        for n, m in np.unique(shapes, axis=0):
            idx = np.flatnonzero((shapes[:, 0] == n) & (shapes[:, 1] == m))
            blocks = np.stack([left.blocks[i] for i in idx])  # (B, n, m)
            rows = left.row_offsets[idx][:, None] + np.arange(n)
            cols = left.col_offsets[idx][:, None] + np.arange(m)
            gram = np.einsum("bni,bnj->bij", blocks, blocks)
            coupling = np.einsum("bni,bnj->bij", blocks, right[rows])
            g1 = np.einsum("bni,bn->bi", blocks, b[rows])
            self._groups.append((cols, gram, coupling, g1))
        self.s_base = right.T @ right
        self.g2 = right.T @ b

    def solve(self, d, lam):
        lam_t = self.dtype.type(lam)
        if not self.block_angular:
            a = self.gram.copy()
            ar = np.arange(a.shape[0])
            a[ar, ar] += lam_t * d.astype(self.dtype) ** 2
            try:
                low = np.linalg.cholesky(a)
            except np.linalg.LinAlgError:
                raise SingularMatrixError(0, "normal equations not positive definite")
            return scipy.linalg.cho_solve((low, True), self.rhs)

        d1, d2 = d[: self.m1], d[self.m1 :]
        schur = self.s_base.copy()
        ar = np.arange(self.m2)
        schur[ar, ar] += lam_t * d2.astype(self.dtype) ** 2
        rhs2 = self.g2.copy()
        solved = []
        for cols, gram, coupling, g1 in self._groups:
            m = gram.shape[1]
            a = gram.copy()
            arm = np.arange(m)
            a[:, arm, arm] += lam_t * d1[cols] ** 2
            try:
                inv = np.linalg.inv(a)
            except np.linalg.LinAlgError:
                raise SingularMatrixError(0, "point block singular")
            x = np.einsum("bij,bjk->bik", inv, coupling)
            schur -= np.einsum("bij,bik->jk", coupling, x)
            u = np.einsum("bij,bj->bi", inv, g1)
            rhs2 -= np.einsum("bij,bi->j", coupling, u)
            solved.append((cols, inv, coupling, g1))
        try:
            low = np.linalg.cholesky(schur)
        except np.linalg.LinAlgError:
            raise SingularMatrixError(self.m1, "coupled normal equations not positive definite")
        x2 = scipy.linalg.cho_solve((low, True), rhs2)
        x1 = np.empty(self.m1, dtype=self.dtype)
        for cols, inv, coupling, g1 in solved:
            t = g1 - np.einsum("bij,j->bi", coupling, x2)
            x1[cols] = np.einsum("bij,bj->bi", inv, t)
        return np.concatenate([x1, x2])


# ---------------------------------------------------------------------------
# drivers


def _grad_norm(jac, f):
    g = rmatvec(jac, f)
    return float(np.max(np.abs(g))) if g.size else 0.0


def _initial_lambda(config, jac):
    if config.lambda0 is not None:
        return float(config.lambda0)
    diag_max = float(np.max(col_norms_squared(jac)))
    return 1e-3 * diag_max if diag_max > 0 else 1e-3


def _multiplicative_lm(problem, config, x0, make_state):
    config.validate()
    x = initial_point(problem, x0)
    f = np.asarray(problem.residuals(x))
    dtype = f.dtype
    x = x.astype(dtype, copy=False)
    grad_tol, step_tol, energy_tol = config.tolerances(dtype)
    timer = config.timer
    t0 = timer()
    trace = LMTrace()
    e_cur = energy(problem, x)
    lam = None
    it = 0
    while it < config.max_iterations:
        jac = problem.jacobian(x)
        gn = _grad_norm(jac, f)
        if gn <= grad_tol:
            trace.status = "converged:gradient"
            return x, trace
        if lam is None:
            lam = _initial_lambda(config, jac)
        d = _damping_vector(jac, config.damping_mode, dtype)
        state = make_state(jac, f)
        accepted = False
        while it < config.max_iterations:
            fn = None
            try:
                p = state.solve(d, lam)
                xn = x + p
                fn = np.asarray(problem.residuals(xn))
                good = bool(np.isfinite(fn).all())
                e_new = 0.5 * float(np.dot(fn, fn)) if good else math.inf
                step = float(np.linalg.norm(p))
            except (SingularMatrixError, np.linalg.LinAlgError, ResidualError):
                e_new = math.inf
                step = 0.0
            ok = math.isfinite(e_new) and e_new < e_cur
            it += 1
            trace.records.append(
                LMRecord(it - 1, e_new, lam, step, gn, ok, timer() - t0)
            )
            if ok:
                x_norm = float(np.linalg.norm(x))
                decrease = e_cur - e_new
                x, f, e_cur = xn, fn, e_new
                lam *= config.lambda_down
                accepted = True
                if step <= step_tol * (x_norm + step_tol):
                    trace.status = "converged:step"
                    return x, trace
                if decrease <= energy_tol * max(e_cur + decrease, 1e-300):
                    trace.status = "converged:energy"
                    return x, trace
                break
            lam *= config.lambda_up
            if lam > LAMBDA_CAP:
                trace.status = "failed:lambda-cap"
                return x, trace
        if not accepted:
            break
    trace.status = "max-iterations"
    return x, trace


def backtrack_lm(problem, config=None, x0=None):
    """Multiplicative-lambda LM with QR steps.

    Rejected trials reuse the Jacobian factorization and refactor only the
    damping augmentation.  ``config.solver_kind`` may be "qrkit" (default)
    or "qrkit-cholesky" (normal equations on the coupled block only).
    """
    config = config if config is not None else LMConfig()
    right_chol = config.solver_kind == "qrkit-cholesky"

    def make(jac, f):
        return _QRStepState(jac, f, config.block_size, right_cholesky=right_chol)

    return _multiplicative_lm(problem, config, x0, make)


def cholesky_lm(problem, config=None, x0=None):
    """Same accept/reject loop as backtrack_lm, steps via normal equations."""
    config = config if config is not None else LMConfig(solver_kind="cholesky")

    def make(jac, f):
        return _CholeskyStepState(jac, f, config.block_size)

    return _multiplicative_lm(problem, config, x0, make)


def _hebden_lambda(state, d, delta, lam_start):
    """Find lambda >= 0 with |D p(lambda)| ~ delta (at most 10 solves)."""
    try:
        p = state.solve(d, 0.0)
        dpn = float(np.linalg.norm(d * p))
        if dpn <= 1.1 * delta:
            return 0.0, p, dpn
    except (SingularMatrixError, np.linalg.LinAlgError):
        p = None
        dpn = math.inf
    lo, hi = 0.0, math.inf
    lam = lam_start if lam_start > 0 else 1e-3
    best = (0.0, p, dpn) if p is not None else (lam, None, math.inf)
    prev = (0.0, dpn) if p is not None else None
    for _ in range(10):
        try:
            p = state.solve(d, lam)
        except (SingularMatrixError, np.linalg.LinAlgError):
            lo = max(lo, lam)
            lam *= 10.0
            continue
        dpn = float(np.linalg.norm(d * p))
        if abs(dpn - delta) < abs(best[2] - delta):
            best = (lam, p, dpn)
        phi = dpn - delta
        if abs(phi) <= 0.1 * delta:
            best = (lam, p, dpn)
            break
        if phi > 0:
            lo = lam
        else:
            hi = lam
        # secant step on 1/|Dp|, which is close to affine in lambda
        nxt = None
        if prev is not None and dpn > 0 and prev[1] > 0 and dpn != prev[1]:
            g = 1.0 / dpn - 1.0 / delta
            gp = 1.0 / prev[1] - 1.0 / delta
            if g != gp:
                nxt = lam - g * (lam - prev[0]) / (g - gp)
        prev = (lam, dpn)
        if nxt is None or not (lo < nxt < hi):
            if phi > 0 and not math.isfinite(hi):
                # unbracketed: rational update, but expand at least 4x
                nxt = max(lam * (dpn / delta) if dpn > 0 else lam, 4.0 * lam)
            elif lo > 0:
                nxt = math.sqrt(lo * hi)
            else:
                nxt = 0.5 * (lo + hi)
        lam = nxt
    return best


def more_lm(problem, config=None, x0=None):
    """Trust-region LM: J factored once per outer iteration, lambda found by
    a Hebden iteration on the damped triangular augmentation."""
    config = config if config is not None else LMConfig(solver_kind="more-qr")
    config.validate()
    x = initial_point(problem, x0)
    f = np.asarray(problem.residuals(x))
    dtype = f.dtype
    x = x.astype(dtype, copy=False)
    grad_tol, step_tol, energy_tol = config.tolerances(dtype)
    timer = config.timer
    t0 = timer()
    trace = LMTrace()
    e_cur = energy(problem, x)
    delta = None
    lam = 0.0
    for _ in range(config.max_iterations):
        jac = problem.jacobian(x)
        gn = _grad_norm(jac, f)
        if gn <= grad_tol:
            trace.status = "converged:gradient"
            return x, trace
        d = _damping_vector(jac, config.damping_mode, dtype)
        if delta is None:
            dx = float(np.linalg.norm(d * x))
            delta = dx if dx > 0 else 1.0
        # one Jacobian factorization per outer iteration; rejected trials
        # only shrink the radius and redo the cheap augmented solves
        state = _QRStepState(jac, f, config.block_size)
        while True:
            lam, p, dpn = _hebden_lambda(state, d, delta, lam)
            if p is None:
                trace.status = "failed:singular"
                return x, trace
            xn = x + p
            try:
                fn = np.asarray(problem.residuals(xn))
                e_new = (
                    0.5 * float(np.dot(fn, fn))
                    if np.isfinite(fn).all()
                    else math.inf
                )
            except ResidualError:
                fn, e_new = None, math.inf
            jp = matvec(jac, p)
            pred = 0.5 * float(np.dot(jp, jp)) + lam * dpn * dpn
            ared = e_cur - e_new if math.isfinite(e_new) else -math.inf
            rho = ared / pred if pred > 0 else -math.inf
            ok = ared > 0
            step = float(np.linalg.norm(p))
            trace.records.append(
                LMRecord(len(trace.records), e_new, lam, step, gn, ok, timer() - t0)
            )
            if rho < 0.25:
                delta *= 0.25
            elif rho > 0.75:
                delta *= 2.0
            if delta < 1e-32:
                trace.status = "failed:trust-region-collapse"
                return x, trace
            if ok:
                break
        x_norm = float(np.linalg.norm(x))
        x, f = xn, fn
        decrease = e_cur - e_new
        e_cur = e_new
        if step <= step_tol * (x_norm + step_tol):
            trace.status = "converged:step"
            return x, trace
        if decrease <= energy_tol * max(e_cur + decrease, 1e-300):
            trace.status = "converged:energy"
            return x, trace
    trace.status = "max-iterations"
    return x, trace


def run_lm(problem, config=None, x0=None):
    """Dispatch on config.solver_kind: qrkit | qrkit-cholesky -> backtrack,
    more-qr -> trust region, cholesky -> normal equations."""
    config = config if config is not None else LMConfig()
    kind = config.solver_kind
    if kind in ("qrkit", "qrkit-cholesky"):
        return backtrack_lm(problem, config, x0)
    if kind == "more-qr":
        return more_lm(problem, config, x0)
    if kind == "cholesky":
        return cholesky_lm(problem, config, x0)
    raise ValueError(f"unknown solver kind {kind!r}")
