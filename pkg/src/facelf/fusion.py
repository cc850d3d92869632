"""Back-projection, regularized surface fitting and fusion of the two depth maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lightfield import CameraRig, DepthMap


class GridFitError(RuntimeError):
    """Degenerate system or solver failure."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``points`` is (n, 3) in mm; every coordinate finite."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)

    def __add__(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(np.concatenate([self.points, other.points]))

    def transformed(self, rotation, translation) -> "PointCloud":
        return PointCloud(self.points @ np.asarray(rotation).T + np.asarray(translation))


@dataclass(frozen=True)
class GridFitSpec:
    """Grid size, smoothness and solver controls.

    ``resolution`` is ``(Gx, Gy)``; ``None`` lets :func:`fuse` pick one node
    per pixel column and row. The effective weight on the smoothness term is
    ``smoothness * n_points / n_nodes`` so the balance does not depend on
    sampling density.
    """

    resolution: tuple | None = None
    smoothness: float = 1e-3
    tolerance: float = 1e-10
    max_iter: int = 20000

    def __post_init__(self):
        if not self.smoothness >= 0:
            raise ValueError(f"smoothness must be >= 0, got {self.smoothness}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.resolution is not None:
            gx, gy = (int(r) for r in self.resolution)
            if gx < 2 or gy < 2:
                raise ValueError("grid needs at least 2 nodes per axis")
            object.__setattr__(self, "resolution", (gx, gy))


@dataclass(frozen=True, eq=False)
class SurfaceGrid:
    """Heightfield ``z = nodes[j, i]`` at ``(x_axis[i], y_axis[j])``."""

    nodes: np.ndarray
    x_axis: np.ndarray
    y_axis: np.ndarray
    objective_trace: list = field(default_factory=list)
    iterations: int = 0

    def __post_init__(self):
        x = np.asarray(self.x_axis, dtype=np.float64)
        y = np.asarray(self.y_axis, dtype=np.float64)
        z = np.asarray(self.nodes, dtype=np.float64)
        if len(x) < 2 or len(y) < 2 or np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ValueError("grid axes need >= 2 strictly increasing nodes")
        if z.shape != (len(y), len(x)):
            raise ValueError(f"nodes shape {z.shape} does not match axes ({len(y)}, {len(x)})")
        object.__setattr__(self, "x_axis", x)
        object.__setattr__(self, "y_axis", y)
        object.__setattr__(self, "nodes", z)

    def contains(self, x, y):
        x, y = np.asarray(x), np.asarray(y)
        return ((x >= self.x_axis[0]) & (x <= self.x_axis[-1])
                & (y >= self.y_axis[0]) & (y <= self.y_axis[-1]))

    def evaluate(self, x, y):
        """Bilinear interpolation; NaN outside the grid."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        inside = self.contains(x, y)
        out = np.full(np.broadcast(x, y).shape, np.nan)
        xb, yb = np.broadcast_arrays(x, y)
        xi, yi = xb[inside], yb[inside]
        i, tx = _cell(self.x_axis, xi)
        j, ty = _cell(self.y_axis, yi)
        z = self.nodes
        out[inside] = ((1 - ty) * ((1 - tx) * z[j, i] + tx * z[j, i + 1])
                       + ty * ((1 - tx) * z[j + 1, i] + tx * z[j + 1, i + 1]))
        return out

    def resample(self, rig: CameraRig, shape, iters: int = 50, tol: float = 1e-9) -> DepthMap:
        """Depth seen by each central-view pixel ray.

        Solves ``z = S((px - cx) z / f, (py - cy) z / f)`` by fixed-point
        iteration from the grid's mean depth. Rays that leave the grid or
        fail to settle are invalid.
        """
        H, W = shape
        cx, cy = rig.principal_point
        py, px = np.mgrid[0:H, 0:W].astype(np.float64)
        rx = (px - cx) / rig.focal_px
        ry = (py - cy) / rig.focal_px
        z = np.full((H, W), float(np.mean(self.nodes)))
        for _ in range(iters):
            nz = self.evaluate(rx * z, ry * z)
            step = np.abs(nz - z)
            z = nz
            if not np.any(step[np.isfinite(step)] > tol):
                break
        nz = self.evaluate(rx * z, ry * z)
        ok = np.isfinite(nz) & (np.abs(nz - z) <= 1e-6)
        return DepthMap(np.where(ok, z, np.nan), ok)

    def to_mesh(self):
        """Vertices (Gy*Gx, 3) and triangles of the regular grid."""
        X, Y = np.meshgrid(self.x_axis, self.y_axis)
        verts = np.stack([X.ravel(), Y.ravel(), self.nodes.ravel()], axis=1)
        gy, gx = self.nodes.shape
        idx = np.arange(gy * gx).reshape(gy, gx)
        a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
        c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
        faces = np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])
        return verts, faces

    def to_pointcloud(self) -> PointCloud:
        return PointCloud(self.to_mesh()[0])


def _cell(axis, v):
    """Cell index and fractional offset of ``v`` along a monotone axis."""
    i = np.clip(np.searchsorted(axis, v, side="right") - 1, 0, len(axis) - 2)
    t = (v - axis[i]) / (axis[i + 1] - axis[i])
    return i, t


# ------------------------------------------------------------ projection


def depthmap_to_pointcloud(dm: DepthMap, rig: CameraRig, mask=None) -> PointCloud:
    """Back-project valid pixels through the central pinhole camera."""
    valid = dm.valid if mask is None else dm.valid & np.asarray(mask, dtype=bool)
    py, px = np.nonzero(valid)
    z = dm.depth[py, px]
    if np.any(z <= 0):
        raise ValueError("non-positive depth at a valid pixel")
    cx, cy = rig.principal_point
    x = (px - cx) * z / rig.focal_px
    y = (py - cy) * z / rig.focal_px
    return PointCloud(np.stack([x, y, z], axis=1))


def project(points, rig: CameraRig):
    """Pixel coordinates ``(px, py)`` of camera-frame points."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cx, cy = rig.principal_point
    return p[:, 0] * rig.focal_px / p[:, 2] + cx, p[:, 1] * rig.focal_px / p[:, 2] + cy


def jitter_x(pc: PointCloud, dx: float = -1.0) -> PointCloud:
    """Translate every point by ``dx`` mm along x."""
    p = pc.points.copy()
    p[:, 0] += dx
    return PointCloud(p)


# --------------------------------------------------------------- gridfit


def _interp_matrix(points, x_axis, y_axis):
    gx = len(x_axis)
    i, tx = _cell(x_axis, points[:, 0])
    j, ty = _cell(y_axis, points[:, 1])
    n = len(points)
    rows = np.repeat(np.arange(n), 4)
    cols = np.stack([j * gx + i, j * gx + i + 1, (j + 1) * gx + i, (j + 1) * gx + i + 1], 1).ravel()
    vals = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], 1).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, gx * len(y_axis)))


def _second_diff(axis):
    """Rows approximating ``h^2 f''`` at interior nodes of a monotone axis."""
    n = len(axis)
    if n < 3:
        return sp.csr_matrix((0, n))
    h = np.diff(axis)
    h1, h2 = h[:-1], h[1:]
    scale = np.mean(h) ** 2
    a = 2 / (h1 * (h1 + h2))
    c = 2 / (h2 * (h1 + h2))
    rows = np.repeat(np.arange(n - 2), 3)
    cols = (np.arange(n - 2)[:, None] + np.arange(3)).ravel()
    vals = (np.stack([a, -(a + c), c], 1) * scale).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - 2, n))


def regularizer(x_axis, y_axis):
    """Second differences along x then along y, on the flattened ``[y, x]`` node vector."""
    gx, gy = len(x_axis), len(y_axis)
    rx = sp.kron(sp.identity(gy), _second_diff(x_axis))
    ry = sp.kron(_second_diff(y_axis), sp.identity(gx))
    return sp.vstack([rx, ry]).tocsr()


def gridfit(points: PointCloud, spec: GridFitSpec = GridFitSpec(), x_axis=None, y_axis=None) -> SurfaceGrid:
    """Least-squares heightfield through scattered points.

    Minimizes ``||B z - d||^2 + lam * ||R z||^2`` with ``B`` the bilinear
    weights of each point's cell, ``R`` second differences along both axes and
    ``lam = smoothness * n_points / n_nodes``. The normal equations are solved
    by Jacobi-preconditioned conjugate gradients on the deviation from the
    mean depth, to a residual of ``spec.tolerance`` relative to the right-hand side.

    Parameters
    ----------
    points : PointCloud
        At least 3 non-collinear points, all inside the grid.
    spec : GridFitSpec
    x_axis, y_axis : optional node coordinates. By default
        ``spec.resolution`` nodes span the points' bounding box.

    Returns
    -------
    SurfaceGrid with ``objective_trace`` holding the objective after every
    CG iteration (entry 0 is the constant start surface).
    """
    p = points.points
    if len(p) < 3:
        raise GridFitError("gridfit needs at least 3 points")
    centred = p[:, :2] - p[:, :2].mean(axis=0)
    if np.linalg.matrix_rank(centred, tol=1e-9 * max(1.0, np.abs(centred).max())) < 2:
        raise GridFitError("points are collinear in the xy plane")
    if x_axis is None or y_axis is None:
        if spec.resolution is None:
            raise ValueError("give either axes or spec.resolution")
        gx, gy = spec.resolution
        x_axis = np.linspace(p[:, 0].min(), p[:, 0].max(), gx)
        y_axis = np.linspace(p[:, 1].min(), p[:, 1].max(), gy)
    x_axis = np.asarray(x_axis, dtype=np.float64)
    y_axis = np.asarray(y_axis, dtype=np.float64)
    grid = SurfaceGrid(np.zeros((len(y_axis), len(x_axis))), x_axis, y_axis)
    if not np.all(grid.contains(p[:, 0], p[:, 1])):
        raise GridFitError("points lie outside the grid")

    B = _interp_matrix(p, x_axis, y_axis)
    R = regularizer(x_axis, y_axis)
    n_nodes = B.shape[1]
    lam = spec.smoothness * len(p) / n_nodes
    d = p[:, 2]
    A = (B.T @ B).tocsr()
    if lam > 0:
        A = (A + lam * (R.T @ R)).tocsr()
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise GridFitError(f"{int((diag <= 0).sum())} grid nodes are unconstrained "
                           "(no nearby points and zero smoothness)")
    # constants lie in the null space of R, so solving for the deviation from
    # the mean depth is exact and makes the fit translation-equivariant in z
    mean = float(d.mean())
    dc = d - mean
    z, trace, it = _pcg(A, B.T @ dc, 1.0 / diag, np.zeros(n_nodes), float(dc @ dc),
                        spec.tolerance, spec.max_iter)
    return SurfaceGrid(z.reshape(len(y_axis), len(x_axis)) + mean, x_axis, y_axis, trace, it)


def _pcg(A, b, minv, z, dd, tol, max_iter):
    """Preconditioned CG on ``A z = b``; returns the objective ``||Bz-d||^2 + lam||Rz||^2`` per step.

    That objective equals ``z'Az - 2 b'z + d'd``, and CG decreases the
    quadratic part monotonically.
    """
    r = b - A @ z
    y = minv * r
    q = y.copy()
    ry = r @ y
    bnorm = np.linalg.norm(b) or 1.0
    trace = [float(dd - z @ b - z @ r)]
    for it in range(1, max_iter + 1):
        if np.linalg.norm(r) <= tol * bnorm:
            return z, trace, it - 1
        Aq = A @ q
        qAq = q @ Aq
        if not qAq > 0:
            raise GridFitError("normal matrix is not positive definite; add smoothness")
        alpha = ry / qAq
        z = z + alpha * q
        r = r - alpha * Aq
        trace.append(float(dd - z @ b - z @ r))
        y = minv * r
        ry_new = r @ y
        q = y + (ry_new / ry) * q
        ry = ry_new
    if np.linalg.norm(r) <= tol * bnorm:
        return z, trace, max_iter
    raise GridFitError(f"CG did not reach relative residual {tol:g} in {max_iter} iterations")


# ------------------------------------------------------------------ fuse


def pixel_grid_axes(points: PointCloud, rig: CameraRig):
    """Axes over the points' xy bounding box with one node per pixel column and row it covers."""
    p = points.points
    px, py = project(p, rig)
    nx = max(int(round(px.max() - px.min())) + 1, 2)
    ny = max(int(round(py.max() - py.min())) + 1, 2)
    x_axis = np.linspace(p[:, 0].min(), p[:, 0].max(), nx)
    y_axis = np.linspace(p[:, 1].min(), p[:, 1].max(), ny)
    return x_axis, y_axis


def fuse(dm_h: DepthMap, dm_v: DepthMap, rig: CameraRig, spec: GridFitSpec = GridFitSpec(),
         mask=None, region=None, jitter: float = -1.0) -> SurfaceGrid:
    """Fit one surface to both back-projected maps.

    The horizontal-EPI cloud is shifted by ``jitter`` mm along x before the
    fit. ``mask`` restricts both maps to a pixel region; ``region``, a
    callable on point clouds such as a face crop, restricts each cloud.
    """
    if dm_h.shape != dm_v.shape:
        raise ValueError(f"depth maps differ in shape: {dm_h.shape} vs {dm_v.shape}")
    pc_h = depthmap_to_pointcloud(dm_h, rig, mask)
    pc_v = depthmap_to_pointcloud(dm_v, rig, mask)
    if region is not None:
        pc_h, pc_v = region(pc_h), region(pc_v)
    cloud = jitter_x(pc_h, jitter) + pc_v
    if spec.resolution is None:
        x_axis, y_axis = pixel_grid_axes(cloud, rig)
    else:
        gx, gy = spec.resolution
        x_axis = np.linspace(cloud.points[:, 0].min(), cloud.points[:, 0].max(), gx)
        y_axis = np.linspace(cloud.points[:, 1].min(), cloud.points[:, 1].max(), gy)
    return gridfit(cloud, spec, x_axis, y_axis)


def average_maps(dm_h: DepthMap, dm_v: DepthMap) -> DepthMap:
    """Per-pixel mean of the two maps where both are valid (baseline)."""
    ok = dm_h.valid & dm_v.valid
    return DepthMap(np.where(ok, 0.5 * (dm_h.depth + dm_v.depth), np.nan), ok)
