"""Acceptance gate: the eight shipped claims, one test and one printed
PASS/FAIL line each.

Criteria
--------
1. factorization invariants on random instances of every structure class
2. the damped QR step equals the normal-equations step at f64
3. single-precision step accuracy: QR beats Cholesky once conditioning bites
4. block-diagonal factorization speed vs the in-repo dense baseline
5. bundle adjustment: solver agreement at f64, QR <= Cholesky at f32
6. accepted-step energy monotonicity and finite-difference Jacobian checks
7. structural bounds: R bandwidth, Q storage accounting, interleave bandwidth
8. CLI determinism under fixed seed / --threads 1 / --clock none

A failed assertion still emits its line, so the suite output doubles as the
acceptance report.  Criterion 5 additionally runs on the published Trafalgar
dataset when it is present under QRKIT_DATA_DIR (see the README for fetch
instructions); the synthetic stand-in always runs.
"""

import os
import time

import numpy as np
import pytest

from structqr.cli import _ellipse_jacobian_for_solver, main
from structqr.errors import SingularMatrixError
from structqr.levmar import (
    LMConfig,
    _CholeskyStepState,
    _QRStepState,
    energy,
    jacobian_consistency,
    run_lm,
)
from structqr.matrices import (
    BandedBlockMatrix,
    BlockDiagonalMatrix,
    HorzCatMatrix,
    TripletMatrix,
    VertCatMatrix,
    apply_row_permutation,
    to_dense,
)
from structqr.ordering import bandwidth, lm_interleave_permutation
from structqr.problems import (
    BAProblem,
    EllipseProblem,
    bal_parse,
    generate_ellipse_data,
    synthetic_ba_scene,
)
from structqr.problems.bundle import axis_angle_from_matrix
from structqr.structured import factorize, solve_least_squares

CRITERIA = []

_SOLVER_KINDS = ("qrkit", "qrkit-cholesky", "more-qr", "cholesky")
_NO_TOLS = dict(grad_tol=1e-30, step_tol=1e-30, energy_tol=1e-30)


def _criterion(name, ok, detail):
    line = f"criterion {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    CRITERIA.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# random structured instances (shared by criteria 1 and 7)


def _rand_dense(rng):
    m = int(rng.integers(20, 401))
    n = int(rng.integers(5, min(200, m - 5) + 1))
    return rng.standard_normal((m, n))


def _rand_blockdiag(rng, max_rows=400, max_cols=200):
    blocks, rows, cols = [], 0, 0
    for _ in range(int(rng.integers(2, 13))):
        bm = int(rng.integers(2, 35))
        bn = int(rng.integers(1, min(bm, 18)))
        if rows + bm > max_rows or cols + bn > max_cols:
            break
        blocks.append(rng.standard_normal((bm, bn)))
        rows += bm
        cols += bn
    if not blocks:
        blocks.append(rng.standard_normal((4, 2)))
    return BlockDiagonalMatrix(tuple(blocks))


def _rand_horzcat(rng):
    left = _rand_blockdiag(rng, max_rows=300, max_cols=160)
    m = sum(b.shape[0] for b in left.blocks)
    spare = m - sum(b.shape[1] for b in left.blocks)
    k = int(rng.integers(1, min(30, spare) + 1)) if spare >= 1 else 1
    return HorzCatMatrix(left, rng.standard_normal((m, k)))


def _rand_banded(rng):
    nb = int(rng.integers(3, 41))
    bn = int(rng.integers(2, 7))
    bm = int(rng.integers(bn, 9))
    overlap = int(rng.integers(0, bn))
    step = bn - overlap
    blocks = tuple(rng.standard_normal((bm, bn)) for _ in range(nb))
    return BandedBlockMatrix(
        blocks,
        tuple(bm * k for k in range(nb)),
        tuple(step * k for k in range(nb)),
    )


def _rand_vertcat(rng):
    top = _rand_blockdiag(rng, max_rows=200, max_cols=60)
    n = sum(b.shape[1] for b in top.blocks)
    m2 = int(rng.integers(n + 1, n + 80))
    return VertCatMatrix(top, rng.standard_normal((m2, n)))


_GENERATORS = (
    ("dense", _rand_dense),
    ("blockdiag", _rand_blockdiag),
    ("horzcat", _rand_horzcat),
    ("banded", _rand_banded),
    ("vertcat", _rand_vertcat),
)


def _cast(a, dt):
    if isinstance(a, np.ndarray):
        return a.astype(dt)
    if isinstance(a, BlockDiagonalMatrix):
        return BlockDiagonalMatrix(tuple(b.astype(dt) for b in a.blocks))
    if isinstance(a, HorzCatMatrix):
        return HorzCatMatrix(_cast(a.left, dt), a.right.astype(dt))
    if isinstance(a, BandedBlockMatrix):
        return BandedBlockMatrix(
            tuple(b.astype(dt) for b in a.blocks), a.row_offsets, a.col_offsets
        )
    return VertCatMatrix(_cast(a.top, dt), a.bottom.astype(dt))


def test_c1_factorization_invariants():
    t_start = time.monotonic()
    worst = {"ortho": 0.0, "recon": 0.0, "ls": 0.0}
    failures = []
    for name, gen in _GENERATORS:
        rng = np.random.default_rng(abs(hash(name)) % 2**31)
        for i in range(200):
            a = gen(rng)
            dense = np.asarray(to_dense(a), dtype=np.float64)
            m, n = dense.shape
            b = rng.standard_normal(m)
            ref = np.linalg.lstsq(dense, b, rcond=None)[0]
            for dt, ls_tol in ((np.float64, 1e-8), (np.float32, 1e-3)):
                eps = float(np.finfo(dt).eps)
                f = factorize(_cast(a, dt))
                eye = np.zeros((m, n), dtype=dt)
                eye[:n] = np.eye(n, dtype=dt)
                q_econ = f.q_apply(eye)
                ortho = float(np.abs(q_econ.T @ q_econ - np.eye(n, dtype=dt)).max())
                stacked = np.zeros((m, n), dtype=dt)
                stacked[:n] = f.r_dense()
                recon = float(np.linalg.norm(f.q_apply(stacked) - dense))
                x = solve_least_squares(f, b.astype(dt))
                rel = float(
                    np.linalg.norm(np.asarray(x, np.float64) - ref)
                    / max(np.linalg.norm(ref), 1e-30)
                )
                worst["ortho"] = max(worst["ortho"], ortho / (eps * m))
                worst["recon"] = max(
                    worst["recon"], recon / (eps * np.linalg.norm(dense))
                )
                if dt == np.float64:
                    worst["ls"] = max(worst["ls"], rel)
                if ortho > 64 * eps * m:
                    failures.append((name, i, dt, "orthogonality", ortho))
                if recon > 64 * eps * np.linalg.norm(dense):
                    failures.append((name, i, dt, "reconstruction", recon))
                if rel > ls_tol:
                    failures.append((name, i, dt, "least-squares", rel))
    elapsed = time.monotonic() - t_start
    if elapsed >= 60.0:
        failures.append(("runtime", 0, None, "exceeded 60 s", elapsed))
    _criterion(
        "1 factorization invariants",
        not failures,
        f"2000 factorizations in {elapsed:.1f}s; worst ortho {worst['ortho']:.2f}"
        f"x eps*m, recon {worst['recon']:.2f}x eps*|A|, f64 solve {worst['ls']:.1e}"
        + (f"; failures {failures[:3]}" if failures else ""),
    )


def test_c2_step_equivalence():
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(15, 80))
        n = int(rng.integers(4, min(m - 2, 40)))
        u, _ = np.linalg.qr(rng.standard_normal((m, n)))
        v, _ = np.linalg.qr(rng.standard_normal((n, n)))
        sigma = np.logspace(0.0, -rng.uniform(0.0, 3.0), n)
        j = (u * sigma) @ v.T
        b = rng.standard_normal(m)
        d = np.exp(rng.uniform(-2.0, 2.0, size=n))
        lam = 10.0 ** rng.uniform(-8.0, 3.0)
        p_qr = _QRStepState(j, -b).solve(d, lam)
        p_ne = np.linalg.solve(j.T @ j + lam * np.diag(d * d), j.T @ b)
        worst = max(
            worst, float(np.linalg.norm(p_qr - p_ne) / np.linalg.norm(p_ne))
        )
    _criterion(
        "2 QR step equals normal-equations step",
        worst <= 1e-8,
        f"100 random (J, b, lambda, D) with cond(J) <= 1e3; worst rel {worst:.2e}",
    )


def test_c3_precision_stability_ordering():
    def step_errors(kappa, seed, m=60, n=30):
        rng = np.random.default_rng(seed)
        u, _ = np.linalg.qr(rng.standard_normal((m, n)))
        v, _ = np.linalg.qr(rng.standard_normal((n, n)))
        j32 = ((u * np.logspace(0.0, -np.log10(kappa), n)) @ v.T).astype(np.float32)
        b32 = rng.standard_normal(m).astype(np.float32)
        ref = np.linalg.lstsq(
            j32.astype(np.float64), b32.astype(np.float64), rcond=None
        )[0]
        d = np.ones(n, dtype=np.float32)
        out = []
        for state_cls in (_QRStepState, _CholeskyStepState):
            try:
                p = state_cls(j32, -b32).solve(d, 0.0)
                out.append(float(np.linalg.norm(p - ref) / np.linalg.norm(ref)))
            except (SingularMatrixError, np.linalg.LinAlgError):
                out.append(float("inf"))
        return out

    wins = {}
    for kappa in (1e2, 1e4, 1e6):
        wins[kappa] = sum(
            1
            for seed in range(100)
            if (e := step_errors(kappa, seed))[0] <= e[1]
        )
    ok = wins[1e4] >= 95 and wins[1e6] >= 95
    _criterion(
        "3 single-precision accuracy ordering",
        ok,
        "QR error <= Cholesky error (f32 vs f64 reference) in "
        + ", ".join(f"{wins[k]}/100 at cond 1e{int(np.log10(k))}" for k in wins)
        + "; required >= 95 at 1e4 and 1e6",
    )


def test_c4_blockdiag_factorization_speed():
    def med_time(jac, repeat):
        times = []
        for _ in range(repeat):
            t0 = time.monotonic()
            factorize(jac)
            times.append(time.monotonic() - t0)
        return float(np.median(times))

    jac2k = _ellipse_jacobian_for_solver(2000, 0, np.float64, "blockdiag")
    dense2k = _ellipse_jacobian_for_solver(2000, 0, np.float64, "dense-baseline")
    t_block = med_time(jac2k, 5)
    t_dense = med_time(dense2k, 1)
    jac10k = _ellipse_jacobian_for_solver(10000, 0, np.float64, "blockdiag")
    t_big = med_time(jac10k, 3)
    ratio = t_dense / t_block
    ok = ratio >= 10.0 and t_big < 1.0
    _criterion(
        "4 block-diagonal speed",
        ok,
        f"N=2000: {t_block * 1e3:.1f} ms vs dense {t_dense * 1e3:.0f} ms "
        f"({ratio:.0f}x, need >= 10x); N=10000: {t_big * 1e3:.0f} ms (need < 1 s)",
    )


# ---------------------------------------------------------------------------
# bundle-adjustment scene with deliberately weak geometry: cameras bunched on
# a short arc so point depth is poorly observed, which makes the Gauss-Newton
# system ill-conditioned and leaves 60 iterations mid-descent -- the regime
# where step accuracy decides the final energy


def _clustered_scene(seed, num_cameras=10, num_points=400, views=3, arc=0.05,
                     noise=0.25, depth_jitter=0.8):
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=2.0, size=(num_points, 3))
    cams = np.empty((num_cameras, 9))
    for k in range(num_cameras):
        alpha = arc * (k / max(num_cameras - 1, 1) - 0.5)
        pos = np.array(
            [10.0 * np.sin(alpha), 0.3 * rng.uniform(-1.0, 1.0), -10.0 * np.cos(alpha)]
        )
        z = pos / np.linalg.norm(pos)
        x = np.cross(np.array([0.0, 1.0, 0.0]), z)
        x /= np.linalg.norm(x)
        rot = np.stack([x, np.cross(z, x), z])
        cams[k, 0:3] = axis_angle_from_matrix(rot)
        cams[k, 3:6] = -rot @ pos
        cams[k, 6] = 1000.0 + 20.0 * rng.standard_normal()
        cams[k, 7] = 0.01 * rng.standard_normal()
        cams[k, 8] = 0.001 * rng.standard_normal()
    cam_idx = np.empty(num_points * views, dtype=np.int64)
    pt_idx = np.empty_like(cam_idx)
    for j in range(num_points):
        cam_idx[j * views : (j + 1) * views] = rng.choice(
            num_cameras, size=views, replace=False
        )
        pt_idx[j * views : (j + 1) * views] = j
    clean = BAProblem(cams, pts, cam_idx, pt_idx, np.zeros((cam_idx.size, 2)))
    proj = clean.residuals(clean.x0).reshape(-1, 2)
    uv = np.empty_like(proj)
    uv[clean._order] = proj
    uv += noise * rng.standard_normal(uv.shape)
    start_pts = pts + np.outer(
        rng.normal(scale=depth_jitter, size=num_points), [0.0, 0.0, 1.0]
    )
    start_pts += 0.02 * rng.standard_normal(pts.shape)
    start_cams = cams.copy()
    start_cams[:, 0:3] += 0.002 * rng.standard_normal((num_cameras, 3))
    start_cams[:, 3:6] += 0.02 * rng.standard_normal((num_cameras, 3))
    start_cams[:, 6] *= 1.0 + 0.001 * rng.standard_normal(num_cameras)
    return BAProblem(start_cams, start_pts, cam_idx, pt_idx, uv)


def _ba_two_legs(problem, iters=60):
    finals = {}
    for kind in _SOLVER_KINDS:
        x, _ = run_lm(problem, LMConfig(solver_kind=kind, max_iterations=iters))
        finals[kind] = float(energy(problem, x))
    best = min(finals.values())
    spread = max(finals.values()) / best - 1.0
    p32 = problem.with_dtype(np.float32)
    f32 = {}
    for kind in ("qrkit", "cholesky"):
        cfg = LMConfig(solver_kind=kind, max_iterations=iters, **_NO_TOLS)
        x, _ = run_lm(p32, cfg)
        f32[kind] = float(energy(p32, x))
    return finals, spread, f32


def test_c5_bundle_adjustment_orderings():
    problem = _clustered_scene(seed=3)
    finals, spread, f32 = _ba_two_legs(problem)
    ok = spread <= 0.02 and f32["qrkit"] <= f32["cholesky"]
    _criterion(
        "5 bundle-adjustment solver orderings",
        ok,
        f"synthetic 10-camera scene, 60-iteration cap; f64 spread {spread:.2e} "
        f"(need <= 2e-2); f32 qrkit {f32['qrkit']:.4f} <= cholesky "
        f"{f32['cholesky']:.4f}: {f32['qrkit'] <= f32['cholesky']}",
    )


def _find_dataset(*names):
    root = os.environ.get("QRKIT_DATA_DIR")
    if not root:
        return None
    for name in names:
        path = os.path.join(root, name)
        if os.path.exists(path):
            return path
    return None


TRAFALGAR = _find_dataset(
    "problem-21-11315-pre.txt", "problem-21-11315-pre.txt.gz"
)


@pytest.mark.skipif(
    TRAFALGAR is None,
    reason="Trafalgar problem-21-11315 not found under QRKIT_DATA_DIR",
)
def test_c5_bundle_adjustment_published_dataset():
    problem = bal_parse(TRAFALGAR)
    assert (problem.num_cameras, problem.num_points) == (21, 11315)
    finals, spread, f32 = _ba_two_legs(problem)
    ok = spread <= 0.02 and f32["qrkit"] <= f32["cholesky"]
    _criterion(
        "5b Trafalgar orderings",
        ok,
        f"f64 spread {spread:.2e}; f32 qrkit {f32['qrkit']:.2f} vs cholesky "
        f"{f32['cholesky']:.2f}",
    )


def test_c6_monotonicity_and_jacobians():
    problems = {}
    pts, x0, _ = generate_ellipse_data(200, noise_sigma=0.02, seed=6)
    problems["ellipse"] = EllipseProblem(pts, x0)
    problems["ba"] = _clustered_scene(seed=0, num_points=120)
    violations = []
    for pname, problem in problems.items():
        for kind in _SOLVER_KINDS:
            _, trace = run_lm(problem, LMConfig(solver_kind=kind, max_iterations=60))
            accepted = trace.accepted_energies()
            drops = np.diff(accepted)
            if len(accepted) < 2 or not np.all(drops < 0):
                violations.append((pname, kind, "non-decreasing accepted energy"))
    gaps = {}
    small_pts, small_x0, _ = generate_ellipse_data(30, seed=1)
    gaps["ellipse"] = jacobian_consistency(EllipseProblem(small_pts, small_x0), small_x0)[0]
    small_ba, _ = synthetic_ba_scene(
        num_cameras=3, num_points=25, views_per_point=2, param_noise=0.3, seed=1
    )
    gaps["ba"] = jacobian_consistency(small_ba, small_ba.x0)[0]
    for pname, gap in gaps.items():
        if gap > 1e-5:
            violations.append((pname, "fd", gap))
    _criterion(
        "6 monotone traces and jacobian checks",
        not violations,
        f"8 traces strictly decreasing; FD gaps ellipse {gaps['ellipse']:.1e}, "
        f"ba {gaps['ba']:.1e} (need <= 1e-5)"
        + (f"; violations {violations}" if violations else ""),
    )


def test_c7_structural_bounds():
    rng = np.random.default_rng(77)
    bad = []
    worst_bw = 0.0
    for i in range(100):
        a = _rand_banded(rng)
        f = factorize(a)
        first, last = f.r_row_spans()
        widths = last - first + 1
        max_cols = max(b.shape[1] for b in a.blocks)
        max_overlap = max(a.overlaps) if len(a.blocks) > 1 else 0
        if int(widths.max()) > max_cols + max_overlap:
            bad.append((i, "bandwidth", int(widths.max()), max_cols + max_overlap))
        if f.r_nnz() > f.cols * int(widths.max()):
            bad.append((i, "nnz", f.r_nnz()))
        fresh = sum(b.shape[0] for b in a.blocks)
        bound = fresh * f.band + f.band**2 * len(f.steps)
        if f.q_storage_scalars() > bound:
            bad.append((i, "q-storage", f.q_storage_scalars(), bound))
        worst_bw = max(worst_bw, widths.max() / (max_cols + max_overlap))
    for i in range(50):
        a = _rand_horzcat(rng) if i % 2 else _rand_vertcat(rng)
        f = factorize(a)
        # composite factors keep Q as compressed per-part transforms; the
        # full orthogonal factor (rows x rows) must never be stored
        if f.q_storage_scalars() >= f.rows * f.rows:
            bad.append((i, "composite q-storage", f.q_storage_scalars()))
    for i in range(100):
        m = int(rng.integers(2, 12))
        width = int(rng.integers(1, m + 1))
        profile = np.minimum(m - 1, np.arange(m) + rng.integers(0, width, size=m))
        r_pattern = TripletMatrix.from_entries(
            m, m, [(r, c, 1.0) for r in range(m) for c in range(r, profile[r] + 1)]
        )
        entries = [
            (r, c, 1.0) for r in range(m) for c in range(r, profile[r] + 1)
        ] + [(m + r, r, 1.0) for r in range(m)]
        stacked = TripletMatrix.from_entries(2 * m, m, entries)
        p = lm_interleave_permutation(profile, m)
        permuted = apply_row_permutation(p.inverse(), stacked)
        if bandwidth(permuted) > bandwidth(r_pattern) + 1:
            bad.append((i, "interleave", bandwidth(permuted), bandwidth(r_pattern)))
    _criterion(
        "7 structural bounds",
        not bad,
        f"100 banded factorizations (worst bandwidth {worst_bw:.2f}x bound), "
        "50 composite storage checks, 100 interleave profiles"
        + (f"; violations {bad[:3]}" if bad else ""),
    )


def test_c8_cli_determinism(tmp_path):
    data = tmp_path / "pts.csv"
    assert main(["gen-ellipse", "--n", "90", "--seed", "5", "--out", str(data)]) == 0
    runs = {
        "factorize": ["factorize", "--n", "120", "--repeat", "2", "--seed", "1"],
        "optimize": ["optimize", "--problem", "ellipse", "--input", str(data)],
        "sweep": ["sweep", "--sizes", "50,100", "--precisions", "f64", "--repeat", "1"],
    }
    diffs = []
    for name, args in runs.items():
        args = args + ["--clock", "none", "--threads", "1"]
        out_a, out_b = tmp_path / f"{name}-a", tmp_path / f"{name}-b"
        assert main(args + ["--out", str(out_a)]) == 0
        assert main(args + ["--out", str(out_b)]) == 0
        for csv in sorted(out_a.glob("*.csv")):
            if csv.read_bytes() != (out_b / csv.name).read_bytes():
                diffs.append(f"{name}/{csv.name}")
    _criterion(
        "8 CLI determinism",
        not diffs,
        "factorize/optimize/sweep CSVs byte-identical across reruns"
        + (f"; differing: {diffs}" if diffs else ""),
    )
