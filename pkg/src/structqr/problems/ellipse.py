"""Ellipse fitting with per-point latent angles.

Parameters x = (t_1, ..., t_N, c_x, c_y, a, b, phi): each observed point
gets its own angle on the ellipse, followed by five global parameters
(center, semi-axes, rotation).  Residual pair i is

    p_i - (c + Rot(phi) @ (a cos t_i, b sin t_i))

so the Jacobian is a horizontal concatenation of an N-block diagonal matrix
(2x1 blocks, d/dt_i) and a dense 2N x 5 part (the global parameters).
"""

import json
import os

import numpy as np

from ..errors import DimensionError, ResidualError
from ..matrices import BlockDiagonalMatrix, HorzCatMatrix, TripletMatrix


def _unpack(points, x):
    points = np.asarray(points)
    n = points.shape[0]
    x = np.asarray(x)
    if x.shape != (n + 5,):
        raise DimensionError("parameter vector length != N + 5", x.shape, (n + 5,))
    t = x[:n]
    cx, cy, a, b, phi = (x[n + i] for i in range(5))
    if not (a > 0 and b > 0):
        raise ResidualError(f"non-positive semi-axis (a={a!r}, b={b!r})", int(n + 2))
    return points, n, t, cx, cy, a, b, phi


def ellipse_residuals(points, x):
    """Residual vector of length 2N, point i at rows (2i, 2i+1)."""
    points, n, t, cx, cy, a, b, phi = _unpack(points, x)
    ct, st = np.cos(t), np.sin(t)
    cp, sp = np.cos(phi), np.sin(phi)
    ux = a * ct
    uy = b * st
    model_x = cx + cp * ux - sp * uy
    model_y = cy + sp * ux + cp * uy
    res = np.empty(2 * n, dtype=np.result_type(points, x))
    res[0::2] = points[:, 0] - model_x
    res[1::2] = points[:, 1] - model_y
    return res


def ellipse_jacobian(points, x):
    """HorzCat(BlockDiagonal of N 2x1 blocks, dense 2N x 5)."""
    points, n, t, cx, cy, a, b, phi = _unpack(points, x)
    dtype = np.result_type(points, x)
    ct, st = np.cos(t), np.sin(t)
    cp, sp = np.cos(phi), np.sin(phi)
    one = dtype.type(1)

    # d residual / d t_i = -Rot(phi) @ (-a sin t, b cos t)
    blocks_arr = np.empty((n, 2, 1), dtype=dtype)
    blocks_arr[:, 0, 0] = cp * a * st + sp * b * ct
    blocks_arr[:, 1, 0] = sp * a * st - cp * b * ct
    left = BlockDiagonalMatrix(tuple(blocks_arr[i] for i in range(n)))

    right = np.zeros((2 * n, 5), dtype=dtype)
    right[0::2, 0] = -one  # d/dc_x
    right[1::2, 1] = -one  # d/dc_y
    right[0::2, 2] = -cp * ct  # d/da
    right[1::2, 2] = -sp * ct
    right[0::2, 3] = sp * st  # d/db
    right[1::2, 3] = -cp * st
    ux = a * ct
    uy = b * st
    right[0::2, 4] = sp * ux + cp * uy  # d/dphi = -Rot'(phi) @ u
    right[1::2, 4] = -cp * ux + sp * uy
    return HorzCatMatrix(left, right)


def ellipse_jacobian_triplet(points, x):
    """Entry-by-entry triplet assembly of the same Jacobian (test oracle
    for the structured layout's bookkeeping)."""
    points, n, t, cx, cy, a, b, phi = _unpack(points, x)
    dtype = np.result_type(points, x)
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for i in range(n):
        ct, st = np.cos(t[i]), np.sin(t[i])
        cp, sp = np.cos(phi), np.sin(phi)
        ux, uy = a * ct, b * st
        put(2 * i, i, cp * a * st + sp * b * ct)
        put(2 * i + 1, i, sp * a * st - cp * b * ct)
        put(2 * i, n, -1.0)
        put(2 * i + 1, n + 1, -1.0)
        put(2 * i, n + 2, -cp * ct)
        put(2 * i + 1, n + 2, -sp * ct)
        put(2 * i, n + 3, sp * st)
        put(2 * i + 1, n + 3, -cp * st)
        put(2 * i, n + 4, sp * ux + cp * uy)
        put(2 * i + 1, n + 4, -cp * ux + sp * uy)
    return TripletMatrix(
        2 * n,
        n + 5,
        np.array(rows, dtype=np.int64),
        np.array(cols, dtype=np.int64),
        np.array(vals, dtype=dtype),
    )


class EllipseProblem:
    """Least-squares problem wrapper around a fixed point set."""

    def __init__(self, points, x0, dtype=None):
        points = np.asarray(points, dtype=dtype)
        if points.ndim != 2 or points.shape[1] != 2:
            raise DimensionError("points must be N x 2", points.shape, (None, 2))
        self.points = points
        self.x0 = np.asarray(x0, dtype=points.dtype)
        self.dim_params = points.shape[0] + 5
        self.dim_residuals = 2 * points.shape[0]
        if self.x0.shape != (self.dim_params,):
            raise DimensionError(
                "x0 length != N + 5", self.x0.shape, (self.dim_params,)
            )

    def residuals(self, x):
        return ellipse_residuals(self.points, np.asarray(x, dtype=self.points.dtype))

    def jacobian(self, x):
        return ellipse_jacobian(self.points, np.asarray(x, dtype=self.points.dtype))


def generate_ellipse_data(
    n, true_params=(0.5, -0.25, 2.0, 1.0, 0.3), noise_sigma=0.01, seed=0, dtype=np.float64
):
    """Sample N noisy points from an ellipse and build an initial guess.

    Angles are drawn uniformly on [0, 2pi); Gaussian noise is added per
    coordinate.  The initial guess scales the true global parameters by 1.1
    (entries that are exactly zero are offset by 0.05 instead) and seeds the
    per-point angles from the arctangent of the data around the perturbed
    center.  Deterministic for a fixed seed.

    Returns (points, x0, info) with info carrying ground truth and angles.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    cx, cy, a, b, phi = (float(v) for v in true_params)
    t = rng.uniform(0.0, 2.0 * np.pi, size=n)
    cp, sp = np.cos(phi), np.sin(phi)
    ux, uy = a * np.cos(t), b * np.sin(t)
    pts = np.empty((n, 2), dtype=np.float64)
    pts[:, 0] = cx + cp * ux - sp * uy
    pts[:, 1] = cy + sp * ux + cp * uy
    if noise_sigma:
        pts += noise_sigma * rng.standard_normal((n, 2))
    gt = np.array([cx, cy, a, b, phi])
    pert = np.where(gt != 0, 1.1 * gt, 0.05)
    t0 = np.arctan2(pts[:, 1] - pert[1], pts[:, 0] - pert[0])
    x0 = np.concatenate([t0, pert]).astype(dtype)
    info = {
        "true_params": [cx, cy, a, b, phi],
        "noise_sigma": float(noise_sigma),
        "seed": int(seed),
        "n": int(n),
        "true_angles": t,
    }
    return pts.astype(dtype), x0, info


def save_ellipse_dataset(path, points, info=None):
    """Write points as CSV `x,y` plus a JSON sidecar (same stem, .json)."""
    points = np.asarray(points)
    with open(path, "w") as fh:
        fh.write("x,y\n")
        for px, py in points:
            fh.write(f"{float(px)!r},{float(py)!r}\n")
    if info is not None:
        side = {k: v for k, v in info.items() if k != "true_angles"}
        with open(_sidecar_path(path), "w") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_ellipse_dataset(path, dtype=np.float64):
    """Read a `x,y` CSV (and its JSON sidecar, if present).

    Returns (points, info_or_None).
    """
    from ..errors import ParseError

    pts = []
    with open(path) as fh:
        header = fh.readline()
        if header.strip() != "x,y":
            raise ParseError("expected header 'x,y'", 1)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError("expected two comma-separated values", lineno)
            try:
                pts.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise ParseError(f"malformed scalar {line!r}", lineno)
    info = None
    side = _sidecar_path(path)
    if os.path.exists(side):
        with open(side) as fh:
            info = json.load(fh)
    return np.asarray(pts, dtype=dtype).reshape(-1, 2), info


def ellipse_initial_guess(points, dtype=np.float64):
    """Moment-based starting point (t_1..t_N, c, a, b, phi) from data alone.

    Center from the mean, orientation from the principal axis of the
    covariance, semi-axes from sqrt(2 * eigenvalue) (exact for angles drawn
    uniformly), angles from the arctangent in the de-rotated frame.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise DimensionError("points must be N x 2", points.shape, (None, 2))
    c = points.mean(axis=0)
    centered = points - c
    cov = centered.T @ centered / max(points.shape[0], 1)
    evals, evecs = np.linalg.eigh(cov)
    phi = float(np.arctan2(evecs[1, 1], evecs[0, 1]))
    a = float(np.sqrt(max(2.0 * evals[1], 1e-12)))
    b = float(np.sqrt(max(2.0 * evals[0], 1e-12)))
    cp, sp = np.cos(phi), np.sin(phi)
    lx = cp * centered[:, 0] + sp * centered[:, 1]
    ly = -sp * centered[:, 0] + cp * centered[:, 1]
    t = np.arctan2(ly / b, lx / a)
    return np.concatenate([t, [c[0], c[1], a, b, phi]]).astype(dtype)


def _sidecar_path(path):
    base, _ = os.path.splitext(os.fspath(path))
    return base + ".json"
