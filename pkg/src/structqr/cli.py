"""Benchmark command line: factorization timings, LM runs, sweeps, datasets.

Subcommands
-----------
factorize    time the structured QR of an ellipse-fitting Jacobian
optimize     run a Levenberg-Marquardt driver on an ellipse CSV or BAL file
sweep        factorization timing grid (sizes x solvers x precisions)
gen-ellipse  write a synthetic ellipse dataset (CSV + JSON sidecar)
gen-ba       write a synthetic bundle-adjustment scene (BAL text, .gz ok)
kernel-bench compare the compiled and fallback kernel backends

Exit codes: 0 success (including non-converged runs, which report a status),
2 usage errors, 3 input errors (missing files, malformed datasets).

Datasets named by relative paths are also looked up under the directory in
the QRKIT_DATA_DIR environment variable.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import _kernels, svgplot
from .errors import ParseError
from .householder import WY_BLOCK
from .levmar import LMConfig, SOLVER_KINDS, energy, initial_point, run_lm
from .matrices import (
    BandedBlockMatrix,
    HorzCatMatrix,
    col_norms_squared,
    matvec,
    rows_of,
    to_dense,
)
from .problems import (
    EllipseProblem,
    bal_parse,
    bal_write,
    ellipse_initial_guess,
    ellipse_jacobian,
    generate_ellipse_data,
    load_ellipse_dataset,
    save_ellipse_dataset,
    synthetic_ba_scene,
)
from .structured import factorize, set_num_threads, solve_least_squares

_DTYPES = {"f32": np.float32, "f64": np.float64}
FACTOR_SOLVERS = ("blockdiag", "blockbanded", "dense-baseline")
_SWEEP_HEADER = "problem,n,solver,precision,median_time_s,recon_err,final_energy"
_FACTORIZE_HEADER = "problem,n,solver,precision,run,time_s,recon_err,r_nnz"


def _timer_for(clock):
    if clock == "none":
        return lambda: 0.0
    return time.monotonic


def _resolve_input(path):
    """Return `path` if it exists, else try under QRKIT_DATA_DIR."""
    if os.path.exists(path):
        return path
    data_dir = os.environ.get("QRKIT_DATA_DIR")
    if data_dir and not os.path.isabs(path):
        alt = os.path.join(data_dir, path)
        if os.path.exists(alt):
            return alt
    raise FileNotFoundError(path)


def _frobenius_norm(matrix):
    return float(np.sqrt(col_norms_squared(matrix).sum()))


def _r_matvec(factor, u):
    """R @ u using the factor's compact row segments."""
    firsts, _ = factor.r_row_spans()
    segs = factor.r_rows_list()
    out = np.zeros(factor.cols, dtype=factor.dtype)
    for i, seg in enumerate(segs):
        f = int(firsts[i])
        out[i] = seg @ u[f : f + seg.size]
    return out


def _recon_error(matrix, factor, seed, probes=8):
    """max_u |A u - Q R u| / |u| over random probes (lower bound on |A - QR|).

    Avoids materializing dense Q or R, so it scales to the large sweeps.
    """
    rng = np.random.default_rng(seed + 0x5EED)
    worst = 0.0
    for _ in range(probes):
        u = rng.standard_normal(factor.cols).astype(factor.dtype)
        au = matvec(matrix, u)
        v = np.zeros(factor.rows, dtype=factor.dtype)
        v[: factor.cols] = _r_matvec(factor, u)
        qru = factor.q_apply(v)
        err = float(np.linalg.norm(au - qru)) / float(np.linalg.norm(u))
        worst = max(worst, err)
    return worst


def _ellipse_jacobian_for_solver(n, seed, dtype, solver):
    """The ellipse Jacobian at the generated starting point, represented in
    whatever structure the requested solver consumes."""
    pts, x0, _ = generate_ellipse_data(n, seed=seed, dtype=dtype)
    jac = ellipse_jacobian(pts, x0)
    if solver == "blockdiag":
        return jac
    if solver == "blockbanded":
        left = jac.left
        banded = BandedBlockMatrix(
            left.blocks,
            tuple(int(r) for r in left.row_offsets[:-1]),
            tuple(int(c) for c in left.col_offsets[:-1]),
        )
        return HorzCatMatrix(banded, jac.right)
    if solver == "dense-baseline":
        return to_dense(jac)
    raise ValueError(f"unknown factorization solver {solver!r}")


def _time_factorizations(jac, repeat, timer, block_size=WY_BLOCK):
    times = []
    factor = None
    for _ in range(repeat):
        t0 = timer()
        factor = factorize(jac, block_size=block_size)
        times.append(timer() - t0)
    return factor, times


# ---------------------------------------------------------------------------
# subcommands


def cmd_factorize(args):
    dtype = _DTYPES[args.precision]
    timer = _timer_for(args.clock)
    jac = _ellipse_jacobian_for_solver(args.n, args.seed, dtype, args.solver)
    factor, times = _time_factorizations(jac, args.repeat, timer)
    median = float(np.median(times))
    recon = _recon_error(jac, factor, args.seed)
    rnnz = int(factor.r_nnz())
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "factorize.csv")
    with open(csv_path, "w") as fh:
        fh.write(_FACTORIZE_HEADER + "\n")
        for run, t in enumerate(times):
            fh.write(
                f"{args.problem},{args.n},{args.solver},{args.precision},"
                f"{run},{float(t)!r},{float(recon)!r},{rnnz}\n"
            )
    print(
        f"factorize problem={args.problem} n={args.n} solver={args.solver} "
        f"precision={args.precision} median_time_s={median!r} "
        f"recon_err={recon!r} r_nnz={rnnz}"
    )
    return 0


def _load_problem(args, dtype):
    path = _resolve_input(args.input)
    if args.problem == "ellipse":
        points, _ = load_ellipse_dataset(path, dtype=dtype)
        x0 = ellipse_initial_guess(points, dtype=dtype)
        return EllipseProblem(points, x0, dtype=dtype)
    return bal_parse(path, dtype=dtype)


def cmd_optimize(args):
    dtype = _DTYPES[args.precision]
    problem = _load_problem(args, dtype)
    timer = _timer_for(args.clock)
    config = LMConfig(
        solver_kind=args.solver,
        damping_mode=args.damping,
        max_iterations=args.max_iters,
        timer=timer,
    )
    x0 = initial_point(problem, None)
    e0 = energy(problem, x0)
    t0 = timer()
    x, trace = run_lm(problem, config)
    total = timer() - t0

    os.makedirs(args.out, exist_ok=True)
    trace.write_csv(os.path.join(args.out, "trace.csv"))
    final_energy = trace.final_energy
    if final_energy is None:
        final_energy = e0
    summary = {
        "problem": args.problem,
        "solver": args.solver,
        "precision": args.precision,
        "final_energy": float(final_energy),
        "iterations": len(trace.records),
        "accepted_steps": int(trace.accepted_steps),
        "total_time_s": float(total),
        "status": trace.status,
    }
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    accepted = [r for r in trace.records if r.accepted]
    iters = [0.0] + [float(r.iteration + 1) for r in accepted]
    times = [0.0] + [float(r.time_s) for r in accepted]
    energies = [float(e0)] + [float(r.energy) for r in accepted]
    label = f"{args.solver}/{args.precision}"
    by_iter = svgplot.Chart(
        "energy vs iteration", xlabel="accepted iteration", ylabel="energy", ylog=True
    ).add(label, iters, energies)
    by_time = svgplot.Chart(
        "energy vs time", xlabel="time (s)", ylabel="energy", ylog=True
    ).add(label, times, energies)
    svgplot.render([by_iter, by_time], os.path.join(args.out, "convergence.svg"))

    print(
        f"optimize problem={args.problem} solver={args.solver} "
        f"precision={args.precision} status={trace.status} "
        f"final_energy={float(final_energy)!r} iterations={len(trace.records)} "
        f"accepted={trace.accepted_steps} time_s={total!r}"
    )
    return 0


def cmd_sweep(args):
    sizes = [int(s) for s in args.sizes.split(",") if s]
    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    precisions = [p.strip() for p in args.precisions.split(",") if p.strip()]
    for s in solvers:
        if s not in FACTOR_SOLVERS:
            raise ValueError(f"unknown factorization solver {s!r}")
    for p in precisions:
        if p not in _DTYPES:
            raise ValueError(f"unknown precision {p!r}")
    timer = _timer_for(args.clock)
    rows = []
    for n in sizes:
        for solver in solvers:
            for precision in precisions:
                dtype = _DTYPES[precision]
                jac = _ellipse_jacobian_for_solver(n, args.seed, dtype, solver)
                factor, times = _time_factorizations(jac, args.repeat, timer)
                median = float(np.median(times))
                recon = _recon_error(jac, factor, args.seed)
                rhs_rng = np.random.default_rng(args.seed + 0xB5)
                b = rhs_rng.standard_normal(rows_of(jac)).astype(dtype)
                xhat = solve_least_squares(factor, b)
                resid = matvec(jac, xhat) - b
                final_energy = 0.5 * float(np.dot(resid, resid))
                rows.append((n, solver, precision, median, recon, final_energy))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.csv"), "w") as fh:
        fh.write(_SWEEP_HEADER + "\n")
        for n, solver, precision, median, recon, final_energy in rows:
            fh.write(
                f"{args.problem},{n},{solver},{precision},{median!r},"
                f"{recon!r},{final_energy!r}\n"
            )

    chart = svgplot.Chart(
        "factorization time", xlabel="N", ylabel="median time (s)", xlog=True, ylog=True
    )
    for solver in solvers:
        for precision in precisions:
            pts = [(r[0], r[3]) for r in rows if r[1] == solver and r[2] == precision]
            chart.add(f"{solver}/{precision}", [p[0] for p in pts], [p[1] for p in pts])
    svgplot.render([chart], os.path.join(args.out, "sweep.svg"), panel_size=(640, 420))
    print(f"sweep wrote {len(rows)} rows to {os.path.join(args.out, 'sweep.csv')}")
    return 0


def cmd_gen_ellipse(args):
    points, _, info = generate_ellipse_data(
        args.n, noise_sigma=args.noise, seed=args.seed
    )
    save_ellipse_dataset(args.out, points, info)
    print(f"wrote {args.n} points to {args.out}")
    return 0


def cmd_gen_ba(args):
    problem, info = synthetic_ba_scene(
        num_cameras=args.cameras,
        num_points=args.points,
        views_per_point=args.views_per_point,
        noise_sigma=args.noise,
        param_noise=args.param_noise,
        seed=args.seed,
    )
    bal_write(args.out, problem)
    print(
        f"wrote scene ({problem.num_cameras} cameras, {problem.num_points} points, "
        f"{problem.num_observations} observations) to {args.out}"
    )
    return 0


def cmd_kernel_bench(args):
    m, n = args.size
    timer = _timer_for(args.clock)
    rng = np.random.default_rng(args.seed)
    base_single = np.asfortranarray(rng.standard_normal((m, n)))
    stack = rng.standard_normal((args.batch, m, n))
    base_batched = np.ascontiguousarray(stack.transpose(0, 2, 1)).reshape(-1)

    results = []
    previous = _kernels.active_backend()
    try:
        for backend in _kernels.available_backends():
            _kernels.set_backend(backend)
            for kernel in ("dense_qr", "batched_qr"):
                times = []
                for _ in range(args.repeat):
                    if kernel == "dense_qr":
                        a = base_single.copy(order="F")
                        taus = np.zeros(min(m, n), dtype=a.dtype)
                        t0 = timer()
                        _kernels.qr_inplace(a, taus)
                        times.append(timer() - t0)
                    else:
                        flat = base_batched.copy()
                        taus = np.zeros(args.batch * min(m, n), dtype=flat.dtype)
                        t0 = timer()
                        _kernels.batched_qr(flat, taus, args.batch, m, n)
                        times.append(timer() - t0)
                results.append((backend, kernel, float(np.median(times))))
    finally:
        _kernels.set_backend(previous)

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "kernel_bench.csv"), "w") as fh:
            fh.write("backend,kernel,m,n,batch,median_time_s\n")
            for backend, kernel, med in results:
                fh.write(f"{backend},{kernel},{m},{n},{args.batch},{med!r}\n")
    width = max(len(b) for b, _, _ in results)
    for backend, kernel, med in results:
        print(f"{backend:<{width}}  {kernel:<10}  {m}x{n} batch={args.batch}  {med!r} s")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(sub):
    sub.add_argument("--threads", type=int, default=None, help="cap block-level parallelism")
    sub.add_argument(
        "--clock",
        choices=("wall", "none"),
        default="wall",
        help="'none' zeroes all reported times (for bit-identical outputs)",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="structqr", description="structured-QR benchmark harness"
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("factorize", help="time one structured QR factorization")
    p.add_argument("--problem", choices=("ellipse",), default="ellipse")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--solver", choices=FACTOR_SOLVERS, default="blockdiag")
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--out", default=".")
    _add_common(p)
    p.set_defaults(func=cmd_factorize)

    p = subs.add_parser("optimize", help="run a Levenberg-Marquardt driver")
    p.add_argument("--problem", choices=("ellipse", "ba"), required=True)
    p.add_argument("--input", required=True, help="ellipse CSV or BAL file (.gz ok)")
    p.add_argument("--solver", choices=SOLVER_KINDS, default="qrkit")
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--damping", choices=("identity", "marquardt"), default="identity")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--out", default=".")
    _add_common(p)
    p.set_defaults(func=cmd_optimize)

    p = subs.add_parser("sweep", help="factorization timing grid")
    p.add_argument("--problem", choices=("ellipse",), default="ellipse")
    p.add_argument("--sizes", default="500,1000,2000,5000,10000")
    p.add_argument("--solvers", default=",".join(FACTOR_SOLVERS))
    p.add_argument("--precisions", default="f32,f64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--out", default=".")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("gen-ellipse", help="write a synthetic ellipse dataset")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_ellipse)

    p = subs.add_parser("gen-ba", help="write a synthetic bundle-adjustment scene")
    p.add_argument("--cameras", type=int, default=10)
    p.add_argument("--points", type=int, default=1500)
    p.add_argument("--views-per-point", type=int, default=4)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--param-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_ba)

    p = subs.add_parser("kernel-bench", help="compare kernel backends")
    p.add_argument("--size", type=int, nargs=2, default=(128, 64), metavar=("M", "N"))
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_kernel_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    if getattr(args, "threads", None):
        set_num_threads(args.threads)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: input not found: {exc}", file=sys.stderr)
        return 3
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
