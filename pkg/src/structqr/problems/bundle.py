"""Bundle adjustment with 9-parameter cameras (BAL convention).

A camera is (omega[3], t[3], f, k1, k2): axis-angle rotation, translation,
focal length and two radial distortion coefficients.  For an observation of
point X by camera c,

    P = R(omega) X + t
    p = -(P_x, P_y) / P_z
    r = 1 + k1 |p|^2 + k2 |p|^4
    residual = f * r * p - (u, v)

Parameters pack as x = [all point coordinates (3P) | all cameras (9C)].
Residual rows follow the observations sorted stably by point index, which
makes the point part of the Jacobian block diagonal (one 2k_j x 3 block per
point seen k_j times); the camera part is stored dense.
"""

import gzip
import math

import numpy as np

from ..errors import DimensionError, ParseError, ResidualError
from ..matrices import BlockDiagonalMatrix, HorzCatMatrix, Permutation, TripletMatrix

_SMALL_ANGLE = 1e-8  # below this, Taylor branch for the rotation itself
_SERIES_ANGLE = 1e-3  # below this, series for the derivative coefficients


def _rotation_coeffs(omega):
    """f1 = sin(theta)/theta and f2 = (1-cos(theta))/theta^2, elementwise.

    f2 uses the cancellation-free 2 sin^2(theta/2) form; tiny angles take
    the Taylor branch.
    """
    theta2 = np.einsum("oi,oi->o", omega, omega)
    theta = np.sqrt(theta2)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1, theta)
    f1 = np.where(small, 1 - theta2 / 6, np.sin(theta) / safe)
    half = np.sin(theta / 2)
    f2 = np.where(small, 0.5 - theta2 / 24, 2 * half * half / np.where(small, 1, theta2))
    return theta, theta2, f1, f2


def axis_angle_rotate(omega, v):
    """Rotate rows of v by the axis-angle vectors in omega (vectorized)."""
    omega = np.atleast_2d(omega)
    v = np.atleast_2d(v)
    _, _, f1, f2 = _rotation_coeffs(omega)
    cross = np.cross(omega, v)
    dot = np.einsum("oi,oi->o", omega, v)
    cos_t = 1 - f2 * np.einsum("oi,oi->o", omega, omega)  # cos = 1 - f2*theta^2
    return cos_t[:, None] * v + f1[:, None] * cross + (f2 * dot)[:, None] * omega


def axis_angle_matrices(omega):
    """Rotation matrices R = cos*I + f1*[omega]_x + f2*omega omega^T."""
    omega = np.atleast_2d(omega)
    n = omega.shape[0]
    _, theta2, f1, f2 = _rotation_coeffs(omega)
    cos_t = 1 - f2 * theta2
    r = np.zeros((n, 3, 3), dtype=omega.dtype)
    idx = np.arange(3)
    r[:, idx, idx] = cos_t[:, None]
    wx, wy, wz = omega[:, 0], omega[:, 1], omega[:, 2]
    r[:, 0, 1] -= f1 * wz
    r[:, 0, 2] += f1 * wy
    r[:, 1, 0] += f1 * wz
    r[:, 1, 2] -= f1 * wx
    r[:, 2, 0] -= f1 * wy
    r[:, 2, 1] += f1 * wx
    r += f2[:, None, None] * omega[:, :, None] * omega[:, None, :]
    return r


def rotation_derivative(omega, v):
    """d(R(omega) v)/d omega, shape (n, 3, 3).

    With f1 = sin/theta, f2 = (1-cos)/theta^2 and their theta-derivatives
    expressed through h1 = (cos - f1)/theta^2, h2 = (f1 - 2 f2)/theta^2:

        d/d omega = -f1 v w^T + h1 (w x v) w^T - f1 [v]_x
                    + h2 (w.v) w w^T + f2 ((w.v) I + w v^T)

    h1, h2 switch to their series (-1/3 + theta^2/30, -1/12 + theta^2/180)
    below theta = 1e-3 where the direct form cancels catastrophically.
    """
    omega = np.atleast_2d(omega)
    v = np.atleast_2d(v)
    theta, theta2, f1, f2 = _rotation_coeffs(omega)
    cos_t = 1 - f2 * theta2
    series = theta < _SERIES_ANGLE
    t2safe = np.where(series, 1, theta2)
    h1 = np.where(series, -1.0 / 3 + theta2 / 30, (cos_t - f1) / t2safe)
    h2 = np.where(series, -1.0 / 12 + theta2 / 180, (f1 - 2 * f2) / t2safe)
    cross = np.cross(omega, v)
    dot = np.einsum("oi,oi->o", omega, v)
    out = (
        (-f1[:, None] * v + h1[:, None] * cross + (h2 * dot)[:, None] * omega)[
            :, :, None
        ]
        * omega[:, None, :]
    )
    out += f2[:, None, None] * omega[:, :, None] * v[:, None, :]
    idx = np.arange(3)
    out[:, idx, idx] += (f2 * dot)[:, None]
    # -f1 [v]_x
    out[:, 0, 1] += f1 * v[:, 2]
    out[:, 0, 2] -= f1 * v[:, 1]
    out[:, 1, 0] -= f1 * v[:, 2]
    out[:, 1, 2] += f1 * v[:, 0]
    out[:, 2, 0] += f1 * v[:, 1]
    out[:, 2, 1] -= f1 * v[:, 0]
    return out


def axis_angle_from_matrix(r):
    """Inverse of axis_angle_matrices for a single 3x3 rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    cos_t = max(-1.0, min(1.0, (np.trace(r) - 1.0) / 2.0))
    theta = math.acos(cos_t)
    if theta < 1e-12:
        return np.zeros(3)
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    s = 2.0 * math.sin(theta)
    if abs(s) > 1e-6:
        return theta * axis / s
    # theta near pi: axis from the symmetric part
    d = np.clip((np.diag(r) + 1.0) / 2.0, 0.0, None)
    axis = np.sqrt(d)
    # fix signs using the largest component
    k = int(np.argmax(axis))
    if axis[k] > 0:
        for i in range(3):
            if i != k and r[k, i] + r[i, k] < 0:
                axis[i] = -axis[i]
    return theta * axis / np.linalg.norm(axis)


class BAProblem:
    """Scene container + LeastSquaresProblem implementation."""

    def __init__(self, cameras, points3d, cam_idx, pt_idx, uv):
        self.cameras = np.asarray(cameras)
        self.points3d = np.asarray(points3d, dtype=self.cameras.dtype)
        self.cam_idx = np.asarray(cam_idx, dtype=np.int64)
        self.pt_idx = np.asarray(pt_idx, dtype=np.int64)
        self.uv = np.asarray(uv, dtype=self.cameras.dtype)
        if self.cameras.ndim != 2 or self.cameras.shape[1] != 9:
            raise DimensionError("cameras must be C x 9", self.cameras.shape, (None, 9))
        if self.points3d.ndim != 2 or self.points3d.shape[1] != 3:
            raise DimensionError("points must be P x 3", self.points3d.shape, (None, 3))
        nobs = self.cam_idx.size
        if self.pt_idx.size != nobs or self.uv.shape != (nobs, 2):
            raise DimensionError(
                "observation arrays disagree", (nobs,), self.uv.shape
            )
        if nobs and (self.cam_idx.min() < 0 or self.cam_idx.max() >= self.num_cameras):
            raise IndexError("camera index out of range")
        if nobs and (self.pt_idx.min() < 0 or self.pt_idx.max() >= self.num_points):
            raise IndexError("point index out of range")
        # stable sort by point index defines the residual-row order
        self._order = np.argsort(self.pt_idx, kind="stable")
        self._s_cam = self.cam_idx[self._order]
        self._s_pt = self.pt_idx[self._order]
        self._s_uv = np.ascontiguousarray(self.uv[self._order])
        self._counts = np.bincount(self._s_pt, minlength=self.num_points)
        self._starts = np.concatenate([[0], np.cumsum(self._counts)])

    @property
    def num_cameras(self):
        return self.cameras.shape[0]

    @property
    def num_points(self):
        return self.points3d.shape[0]

    @property
    def num_observations(self):
        return self.cam_idx.size

    @property
    def dtype(self):
        return self.cameras.dtype

    @property
    def dim_params(self):
        return 3 * self.num_points + 9 * self.num_cameras

    @property
    def dim_residuals(self):
        return 2 * self.num_observations

    @property
    def x0(self):
        return np.concatenate([self.points3d.ravel(), self.cameras.ravel()])

    def with_dtype(self, dtype):
        return BAProblem(
            self.cameras.astype(dtype),
            self.points3d.astype(dtype),
            self.cam_idx,
            self.pt_idx,
            self.uv.astype(dtype),
        )

    def unpack(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape != (self.dim_params,):
            raise DimensionError(
                "parameter vector length mismatch", x.shape, (self.dim_params,)
            )
        np3 = 3 * self.num_points
        return x[:np3].reshape(self.num_points, 3), x[np3:].reshape(
            self.num_cameras, 9
        )

    def _project_parts(self, x):
        pts, cams = self.unpack(x)
        xv = pts[self._s_pt]
        cv = cams[self._s_cam]
        omega, trans = cv[:, 0:3], cv[:, 3:6]
        f, k1, k2 = cv[:, 6], cv[:, 7], cv[:, 8]
        p = axis_angle_rotate(omega, xv) + trans
        pz = p[:, 2]
        bad = pz == 0
        if bad.any():
            raise ResidualError(
                "point projects onto the camera plane (P_z = 0)",
                int(self._order[np.argmax(bad)]),
            )
        proj = -p[:, :2] / pz[:, None]
        s = np.einsum("oi,oi->o", proj, proj)
        radial = 1 + s * (k1 + k2 * s)
        return pts, cams, xv, cv, omega, f, k1, k2, p, pz, proj, s, radial

    def residuals(self, x):
        parts = self._project_parts(x)
        f, proj, radial = parts[5], parts[10], parts[12]
        res = (f * radial)[:, None] * proj - self._s_uv
        return res.reshape(-1)

    def _observation_derivatives(self, x):
        """Per-observation (dres/dpoint (O,2,3), dres/dcamera (O,2,9))."""
        (pts, cams, xv, cv, omega, f, k1, k2, p, pz, proj, s, radial) = (
            self._project_parts(x)
        )
        nobs = self.num_observations
        dtype = self.dtype
        # dres/dp (2x2): f * (radial I + (2 k1 + 4 k2 s) p p^T)
        c = 2 * k1 + 4 * k2 * s
        m = np.empty((nobs, 2, 2), dtype=dtype)
        m[:, 0, 0] = f * (radial + c * proj[:, 0] ** 2)
        m[:, 1, 1] = f * (radial + c * proj[:, 1] ** 2)
        m[:, 0, 1] = m[:, 1, 0] = f * c * proj[:, 0] * proj[:, 1]
        # dp/dP (2x3): -(1/Pz) [[1, 0, p_x], [0, 1, p_y]]
        dp = np.zeros((nobs, 2, 3), dtype=dtype)
        inv_z = 1 / pz
        dp[:, 0, 0] = dp[:, 1, 1] = -inv_z
        dp[:, 0, 2] = -inv_z * proj[:, 0]
        dp[:, 1, 2] = -inv_z * proj[:, 1]
        dres_dp3 = np.einsum("oij,ojk->oik", m, dp)  # (O, 2, 3) wrt P
        rot = axis_angle_matrices(omega)
        dres_dx = np.einsum("oij,ojk->oik", dres_dp3, rot)  # wrt point coords
        drot = rotation_derivative(omega, xv)
        cam_block = np.empty((nobs, 2, 9), dtype=dtype)
        cam_block[:, :, 0:3] = np.einsum("oij,ojk->oik", dres_dp3, drot)
        cam_block[:, :, 3:6] = dres_dp3
        cam_block[:, :, 6] = radial[:, None] * proj
        cam_block[:, :, 7] = (f * s)[:, None] * proj
        cam_block[:, :, 8] = (f * s * s)[:, None] * proj
        return dres_dx, cam_block

    def jacobian(self, x):
        dres_dx, cam_block = self._observation_derivatives(x)
        nobs = self.num_observations
        dtype = self.dtype
        starts = self._starts
        blocks = tuple(
            dres_dx[starts[j] : starts[j + 1]].reshape(-1, 3)
            for j in range(self.num_points)
        )
        left = BlockDiagonalMatrix(blocks)
        right = np.zeros((2 * nobs, 9 * self.num_cameras), dtype=dtype)
        rows = (2 * np.arange(nobs))[:, None, None] + np.array([[0], [1]])
        cols = (9 * self._s_cam)[:, None, None] + np.arange(9)
        right[rows, cols] = cam_block
        return HorzCatMatrix(left, right)


def ba_residuals(problem, x):
    return problem.residuals(x)


def ba_jacobian_structure(problem):
    """Row permutation (raw observation order -> sorted residual order) and
    the block-angular Jacobian at the problem's initial parameters."""
    perm_map = np.empty(2 * problem.num_observations, dtype=np.int64)
    dest = np.empty_like(problem._order)
    dest[problem._order] = np.arange(problem.num_observations)
    perm_map[0::2] = 2 * dest
    perm_map[1::2] = 2 * dest + 1
    return Permutation(perm_map), problem.jacobian(problem.x0)


def ba_jacobian_triplet(problem, x):
    """Triplet assembly, one (row, col, value) entry at a time.

    Exercises the index bookkeeping of the block-angular layout against an
    independent scatter; the derivative values themselves are shared with
    `jacobian` (their correctness is the finite-difference test's job).
    """
    dres_dx, cam_block = problem._observation_derivatives(x)
    rows, cols, vals = [], [], []
    np3 = 3 * problem.num_points
    for i in range(problem.num_observations):
        ci = int(problem._s_cam[i])
        pj = int(problem._s_pt[i])
        for r in range(2):
            for k in range(3):
                rows.append(2 * i + r)
                cols.append(3 * pj + k)
                vals.append(dres_dx[i, r, k])
            for k in range(9):
                rows.append(2 * i + r)
                cols.append(np3 + 9 * ci + k)
                vals.append(cam_block[i, r, k])
    return TripletMatrix(
        problem.dim_residuals,
        problem.dim_params,
        np.array(rows, dtype=np.int64),
        np.array(cols, dtype=np.int64),
        np.array(vals, dtype=problem.dtype),
    )


# ---------------------------------------------------------------------------
# BAL text format


def _open_bal(source):
    if hasattr(source, "read"):
        return source, False
    path = str(source)
    with open(path, "rb") as probe:
        magic = probe.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt"), True
    return open(path), True


def bal_parse(source, dtype=np.float64):
    """Parse BAL text (or gzip): header `C P O`, one observation per line
    `cam pt u v`, then 9 lines per camera, then 3 lines per point."""
    fh, owned = _open_bal(source)
    try:
        lines = iter(enumerate(fh, start=1))

        def next_line():
            for lineno, raw in lines:
                stripped = raw.strip()
                if stripped:
                    return lineno, stripped
            raise ParseError("unexpected end of file", 0)

        lineno, first = next_line()
        parts = first.split()
        if len(parts) != 3:
            raise ParseError("header must be `num_cameras num_points num_obs`", lineno)
        try:
            ncam, npt, nobs = (int(v) for v in parts)
        except ValueError:
            raise ParseError(f"malformed header {first!r}", lineno)
        if min(ncam, npt, nobs) < 0:
            raise ParseError("negative count in header", lineno)
        cam_idx = np.empty(nobs, dtype=np.int64)
        pt_idx = np.empty(nobs, dtype=np.int64)
        uv = np.empty((nobs, 2), dtype=dtype)
        for i in range(nobs):
            lineno, line = next_line()
            parts = line.split()
            if len(parts) != 4:
                raise ParseError("observation must be `cam pt u v`", lineno)
            try:
                ci, pi = int(parts[0]), int(parts[1])
                u, v = float(parts[2]), float(parts[3])
            except ValueError:
                raise ParseError(f"malformed observation {line!r}", lineno)
            if not 0 <= ci < ncam:
                raise ParseError(f"camera index {ci} out of range", lineno)
            if not 0 <= pi < npt:
                raise ParseError(f"point index {pi} out of range", lineno)
            cam_idx[i], pt_idx[i], uv[i] = ci, pi, (u, v)

        def read_scalars(count):
            out = np.empty(count, dtype=dtype)
            for k in range(count):
                lineno, line = next_line()
                try:
                    out[k] = float(line)
                except ValueError:
                    raise ParseError(f"malformed scalar {line!r}", lineno)
            return out

        cameras = read_scalars(9 * ncam).reshape(ncam, 9)
        points3d = read_scalars(3 * npt).reshape(npt, 3)
        for lineno, raw in lines:
            if raw.strip():
                raise ParseError("trailing content after point list", lineno)
        return BAProblem(cameras, points3d, cam_idx, pt_idx, uv)
    finally:
        if owned:
            fh.close()


def bal_write(target, problem):
    """Write BAL text (gzipped when the path ends in .gz); observations keep
    their original file order."""
    if hasattr(target, "write"):
        _write_bal(target, problem)
    elif str(target).endswith(".gz"):
        with gzip.open(target, "wt") as fh:
            _write_bal(fh, problem)
    else:
        with open(target, "w") as fh:
            _write_bal(fh, problem)


def _write_bal(fh, problem):
    fh.write(
        f"{problem.num_cameras} {problem.num_points} {problem.num_observations}\n"
    )
    for ci, pi, (u, v) in zip(problem.cam_idx, problem.pt_idx, problem.uv):
        fh.write(f"{ci} {pi} {float(u)!r} {float(v)!r}\n")
    for value in problem.cameras.ravel():
        fh.write(f"{float(value)!r}\n")
    for value in problem.points3d.ravel():
        fh.write(f"{float(value)!r}\n")


# ---------------------------------------------------------------------------
# synthetic scenes


def synthetic_ba_scene(
    num_cameras=10,
    num_points=1500,
    views_per_point=4,
    noise_sigma=1.0,
    param_noise=0.0,
    seed=0,
    dtype=np.float64,
):
    """Build a deterministic BAL-like scene: a point cloud at the origin
    ringed by cameras looking inward, pixel-scale focal lengths and mild
    radial distortion, so column magnitudes span several orders like the
    published datasets.

    `noise_sigma` perturbs the observed pixels; `param_noise` additionally
    jitters the stored parameters away from the generating ones (relative
    scale), which leaves the generated problem non-trivially optimizable.

    Returns (problem, info) where info holds the generating parameters.
    """
    if views_per_point < 2:
        raise ValueError("each point needs at least two views")
    if views_per_point > num_cameras:
        raise ValueError("views_per_point exceeds camera count")
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=2.0, size=(num_points, 3))
    cameras = np.empty((num_cameras, 9))
    for k in range(num_cameras):
        alpha = 2 * np.pi * k / num_cameras
        pos = np.array(
            [10.0 * np.cos(alpha), 10.0 * np.sin(alpha), rng.uniform(1.0, 3.0)]
        )
        z = pos / np.linalg.norm(pos)
        up = np.array([0.0, 0.0, 1.0])
        xaxis = np.cross(up, z)
        xaxis /= np.linalg.norm(xaxis)
        yaxis = np.cross(z, xaxis)
        rot = np.stack([xaxis, yaxis, z])
        cameras[k, 0:3] = axis_angle_from_matrix(rot)
        cameras[k, 3:6] = -rot @ pos
        cameras[k, 6] = rng.uniform(900.0, 1100.0)
        cameras[k, 7] = rng.normal(0.0, 0.02)
        cameras[k, 8] = rng.normal(0.0, 0.002)
    cam_idx = np.empty(num_points * views_per_point, dtype=np.int64)
    pt_idx = np.empty_like(cam_idx)
    for j in range(num_points):
        sel = rng.choice(num_cameras, size=views_per_point, replace=False)
        cam_idx[j * views_per_point : (j + 1) * views_per_point] = sel
        pt_idx[j * views_per_point : (j + 1) * views_per_point] = j
    # exact projections from the generating parameters
    clean = BAProblem(
        cameras, pts, cam_idx, pt_idx, np.zeros((cam_idx.size, 2))
    )
    res = clean.residuals(clean.x0).reshape(-1, 2)
    uv_sorted = res  # uv was zero, so residual = projection
    uv = np.empty_like(uv_sorted)
    uv[clean._order] = uv_sorted
    if noise_sigma:
        uv = uv + noise_sigma * rng.standard_normal(uv.shape)
    stored_pts = pts
    stored_cams = cameras
    if param_noise:
        stored_pts = pts + param_noise * 2.0 * rng.standard_normal(pts.shape)
        stored_cams = cameras.copy()
        stored_cams[:, 0:3] += param_noise * 0.02 * rng.standard_normal((num_cameras, 3))
        stored_cams[:, 3:6] += param_noise * 0.2 * rng.standard_normal((num_cameras, 3))
        stored_cams[:, 6] *= 1 + param_noise * 0.01 * rng.standard_normal(num_cameras)
    # emit observations camera-major, like the published files
    order = np.lexsort((pt_idx, cam_idx))
    problem = BAProblem(
        stored_cams.astype(dtype),
        stored_pts.astype(dtype),
        cam_idx[order],
        pt_idx[order],
        uv[order].astype(dtype),
    )
    info = {
        "true_cameras": cameras,
        "true_points": pts,
        "noise_sigma": float(noise_sigma),
        "param_noise": float(param_noise),
        "seed": int(seed),
    }
    return problem, info
