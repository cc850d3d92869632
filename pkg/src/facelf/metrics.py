"""Rigid alignment, reconstruction error statistics and face cropping."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .fusion import PointCloud, SurfaceGrid, depthmap_to_pointcloud, project
from .lightfield import CameraRig, DepthMap

# Published figures, kept for context only; the desk-scale setup does not reproduce them.
REFERENCE_VALUES = {
    "rmse_frontal_mm": 2.62,
    "rmse_yaw30_mm": 2.93,
    "nme_percent": 3.72,
    "abs_error_mm": {"mean": 2.78, "std": 2.04, "median": 1.73, "top90_mean": 5.30},
}


class EmptyRegionError(ValueError):
    pass


class DegenerateAlignmentError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or not np.linalg.det(R) > 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """``(self @ other).apply(p) == self.apply(other.apply(p))``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    @property
    def angle_deg(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def rotation_about(axis, angle_deg) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    a = np.radians(angle_deg)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * K @ K


def procrustes(src, dst) -> RigidTransform:
    """Least-squares rigid map of corresponding points ``src -> dst``.

    SVD of the cross-covariance with the reflection case corrected.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or len(src) < 3:
        raise DegenerateAlignmentError("need >= 3 corresponding point pairs")
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    H = (src - ms).T @ (dst - md)
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= 1e-12 * max(S[0], 1e-300):
        raise DegenerateAlignmentError("cross-covariance has rank < 2 (collinear points)")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, md - R @ ms)


def icp_align(src: PointCloud, dst: PointCloud, max_iters: int = 100, tol: float = 1e-9,
              history: list | None = None) -> RigidTransform:
    """Rigid transform taking ``src`` onto ``dst`` by iterative closest points.

    Starts by matching centroids. Each iteration pairs every source point
    with its nearest destination point (k-d tree) and solves the orthogonal
    Procrustes problem on those pairs. Stops when the RMS correspondence
    distance improves by less than ``tol`` mm. ``history``, if given,
    receives that RMS distance after the centroid match and after every
    update; it never increases.
    """
    if len(src) < 3 or len(dst) < 3:
        raise DegenerateAlignmentError("ICP needs >= 3 points in each cloud")
    tree = cKDTree(dst.points)
    T = RigidTransform(np.eye(3), dst.points.mean(axis=0) - src.points.mean(axis=0))
    moved = T.apply(src.points)
    dist, idx = tree.query(moved)
    prev = float(np.sqrt(np.mean(dist ** 2)))
    if history is not None:
        history.append(prev)
    if prev == 0.0:
        return T
    for _ in range(max_iters):
        T = procrustes(moved, dst.points[idx]) @ T
        moved = T.apply(src.points)
        dist, idx = tree.query(moved)
        cur = float(np.sqrt(np.mean(dist ** 2)))
        if history is not None:
            history.append(cur)
        if prev - cur < tol:
            break
        prev = cur
    return T


# ----------------------------------------------------------------- errors


def _as_depthmap(pred, shape, rig):
    if isinstance(pred, SurfaceGrid):
        if rig is None:
            raise ValueError("a CameraRig is needed to resample a SurfaceGrid")
        return pred.resample(rig, shape)
    if isinstance(pred, DepthMap):
        if pred.shape != tuple(shape):
            raise ValueError(f"depth maps differ in shape: {pred.shape} vs {tuple(shape)}")
        return pred
    raise TypeError(f"expected SurfaceGrid or DepthMap, got {type(pred).__name__}")


def _bilinear(img, valid, px, py):
    """Sample ``img`` at float pixel coords; valid only when all four taps are."""
    H, W = img.shape
    x0 = np.floor(px).astype(int)
    y0 = np.floor(py).astype(int)
    ok = (x0 >= 0) & (y0 >= 0) & (x0 + 1 < W) & (y0 + 1 < H)
    out = np.full(px.shape, np.nan)
    x0, y0, tx, ty = x0[ok], y0[ok], px[ok] - x0[ok], py[ok] - y0[ok]
    taps = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)]
    good = np.all([valid[t] for t in taps], axis=0)
    v = ((1 - ty) * ((1 - tx) * img[taps[0]] + tx * img[taps[1]])
         + ty * ((1 - tx) * img[taps[2]] + tx * img[taps[3]]))
    sub = np.where(good, v, np.nan)
    out[ok] = sub
    return out


def depth_errors(pred, gt: DepthMap, rig: CameraRig | None = None, mask=None,
                 icp: bool = False) -> np.ndarray:
    """Absolute per-pixel depth differences over the common valid region.

    With ``icp``, the predicted cloud is first rigidly aligned to the ground
    truth cloud, then each moved point is compared with the ground-truth
    depth interpolated at its reprojected pixel.
    """
    dm = _as_depthmap(pred, gt.shape, rig)
    region = gt.valid & dm.valid
    if mask is not None:
        region &= np.asarray(mask, dtype=bool)
    if not region.any():
        raise EmptyRegionError("no pixel is valid in both maps")
    if not icp:
        return np.abs(dm.depth[region] - gt.depth[region])
    if rig is None:
        raise ValueError("ICP alignment needs a CameraRig")
    src = depthmap_to_pointcloud(dm, rig, region)
    dst = depthmap_to_pointcloud(gt, rig, region)
    moved = icp_align(src, dst).apply(src.points)
    px, py = project(moved, rig)
    ref = _bilinear(gt.depth, region, px, py)
    keep = np.isfinite(ref)
    if not keep.any():
        raise EmptyRegionError("aligned prediction falls outside the ground-truth region")
    return np.abs(moved[keep, 2] - ref[keep])


def rmse(pred, gt: DepthMap, rig: CameraRig | None = None, mask=None, icp: bool = False) -> float:
    """Root mean square depth difference in mm (see :func:`depth_errors`)."""
    e = depth_errors(pred, gt, rig, mask, icp)
    return float(np.sqrt(np.mean(e ** 2)))


def nme(pred: PointCloud, gt: PointCloud, d: float, align: bool = True,
        correspondence: str = "nearest") -> float:
    """Mean per-vertex distance divided by the interocular distance ``d``.

    ``correspondence="nearest"`` pairs each predicted vertex with its nearest
    ground-truth vertex; ``"index"`` pairs vertices by position in the arrays.
    With ``align`` the prediction is first moved onto the ground truth by ICP.
    """
    if not d > 0:
        raise ValueError(f"interocular distance must be positive, got {d}")
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyRegionError("empty mesh")
    x = pred.points
    if align:
        x = icp_align(pred, gt).apply(x)
    if correspondence == "nearest":
        dist, _ = cKDTree(gt.points).query(x)
    elif correspondence == "index":
        if len(x) != len(gt):
            raise ValueError("index correspondence needs equal vertex counts")
        dist = np.linalg.norm(x - gt.points, axis=1)
    else:
        raise ValueError(f"unknown correspondence {correspondence!r}")
    return float(np.mean(dist) / d)


def interocular(landmarks) -> float:
    a, b = np.asarray(landmarks, dtype=np.float64)[:2]
    return float(np.linalg.norm(a - b))


def crop_face_region(pc: PointCloud, landmarks, factor: float = 1.4,
                     radius: float | None = None) -> PointCloud:
    """Points within ``radius`` (default ``factor`` x interocular) of the landmark centroid."""
    if landmarks is None:
        raise ValueError("cropping needs the scene's eye landmarks")
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.shape != (2, 3):
        raise ValueError(f"expected two 3D landmarks, got shape {lm.shape}")
    r = factor * interocular(lm) if radius is None else radius
    keep = np.linalg.norm(pc.points - lm.mean(axis=0), axis=1) <= r
    if not keep.any():
        raise EmptyRegionError("no point inside the face region")
    return PointCloud(pc.points[keep])


def face_pixel_mask(dm: DepthMap, rig: CameraRig, landmarks, factor: float = 1.4) -> np.ndarray:
    """Pixels whose back-projected point falls inside the face crop."""
    py, px = np.nonzero(dm.valid)
    pts = depthmap_to_pointcloud(dm, rig).points
    lm = np.asarray(landmarks, dtype=np.float64)
    keep = np.linalg.norm(pts - lm.mean(axis=0), axis=1) <= factor * interocular(lm)
    mask = np.zeros(dm.shape, dtype=bool)
    mask[py[keep], px[keep]] = True
    return mask


# ------------------------------------------------------------------ stats


@dataclass
class EvalReport:
    """Summary of absolute depth errors in mm.

    ``top90_mean`` is the mean of the largest 90% of errors; ``p90`` is the
    90th percentile, the alternative reading of the same table column.
    """

    mean: float
    std: float
    median: float
    top90_mean: float
    p90: float
    rmse: float
    n: int
    nme: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def top_fraction_mean(errors, fraction: float = 0.9) -> float:
    """Mean of the largest ``ceil(fraction * n)`` values."""
    e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    n = len(e)
    k = max(1, -(-int(round(fraction * 1000)) * n // 1000))
    return float(e[n - k:].mean())


def summarize_errors(errors, nme_value: float | None = None) -> EvalReport:
    e = np.abs(np.asarray(errors, dtype=np.float64).ravel())
    if e.size == 0:
        raise EmptyRegionError("no errors to summarize")
    return EvalReport(mean=float(e.mean()), std=float(e.std()), median=float(np.median(e)),
                      top90_mean=top_fraction_mean(e), p90=float(np.percentile(e, 90)),
                      rmse=float(np.sqrt(np.mean(e ** 2))), n=int(e.size), nme=nme_value)


def error_stats(pred, gt: DepthMap, rig: CameraRig | None = None, mask=None,
                icp: bool = False, landmarks=None) -> EvalReport:
    """Table of absolute depth error statistics, plus NME when landmarks are given."""
    e = depth_errors(pred, gt, rig, mask, icp)
    value = None
    if landmarks is not None:
        dm = _as_depthmap(pred, gt.shape, rig)
        region = gt.valid & dm.valid if mask is None else gt.valid & dm.valid & np.asarray(mask, bool)
        p = crop_face_region(depthmap_to_pointcloud(dm, rig, region), landmarks)
        g = crop_face_region(depthmap_to_pointcloud(gt, rig, region), landmarks)
        value = nme(p, g, interocular(landmarks), align=icp)
    return summarize_errors(e, value)


def write_error_heatmap(path, err_map, vmax: float | None = None) -> None:
    """PNG of an error map: black where invalid, blue (0) to red (``vmax``)."""
    from PIL import Image

    e = np.asarray(err_map, dtype=np.float64)
    ok = np.isfinite(e)
    top = vmax if vmax is not None else (float(np.nanmax(e)) if ok.any() else 1.0)
    t = np.clip(np.where(ok, e, 0.0) / (top or 1.0), 0.0, 1.0)
    rgb = np.stack([t, 1.0 - np.abs(2.0 * t - 1.0), 1.0 - t], axis=-1)
    rgb[~ok] = 0.0
    Image.fromarray(np.round(rgb * 255).astype(np.uint8), mode="RGB").save(path)
