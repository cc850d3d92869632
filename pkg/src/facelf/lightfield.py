"""Light field container, camera rig and EPI slicing.

Axis order is fixed as ``samples[v, u, y, x, c]``. Horizontal EPIs are taken
from the central ``v`` row of views, vertical EPIs from the central ``u``
column, so both stay aligned with the central sub-aperture image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
ORIENTATIONS = (HORIZONTAL, VERTICAL)


@dataclass(frozen=True)
class CameraRig:
    """Regular grid of sheared pinhole cameras.

    Sub-aperture ``(u, v)`` sits at ``((u - uc) * baseline, (v - vc) * baseline, 0)``
    and its frustum is sheared so the plane ``z = focus_depth`` images with
    zero disparity.
    """

    focal_px: float = 307.2
    baseline: float = 20.0
    focus_depth: float = 600.0
    principal_point: tuple[float, float] = (63.5, 63.5)
    epi_scale_f: float = 1.0

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValueError(f"focal_px must be positive, got {self.focal_px}")
        if not self.baseline > 0:
            raise ValueError(f"baseline must be positive, got {self.baseline}")
        if not self.focus_depth > 0:
            raise ValueError(f"focus_depth must be positive, got {self.focus_depth}")
        if not self.epi_scale_f != 0:
            raise ValueError("epi_scale_f must be non-zero")
        object.__setattr__(self, "principal_point",
                           tuple(float(c) for c in self.principal_point))

    @classmethod
    def for_resolution(cls, spatial_res=(128, 128), **overrides) -> "CameraRig":
        """Rig with a field of view and disparity range independent of resolution.

        The base design is 128 px wide: 307.2 px focal length and a 20 mm
        baseline. Other widths scale focal length with width and baseline
        inversely, so disparities in px/view stay the same.
        """
        X, Y = spatial_res
        scale = X / 128.0
        kw = dict(
            focal_px=307.2 * scale,
            baseline=20.0 / scale,
            focus_depth=600.0,
            principal_point=((X - 1) / 2.0, (Y - 1) / 2.0),
            epi_scale_f=1.0,
        )
        kw.update(overrides)
        return cls(**kw)

    @property
    def fb(self) -> float:
        return self.focal_px * self.baseline

    def to_dict(self) -> dict:
        return {
            "focal_px": self.focal_px,
            "baseline": self.baseline,
            "focus_depth": self.focus_depth,
            "principal_point": list(self.principal_point),
            "epi_scale_f": self.epi_scale_f,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRig":
        return cls(
            focal_px=float(d["focal_px"]),
            baseline=float(d["baseline"]),
            focus_depth=float(d["focus_depth"]),
            principal_point=tuple(d["principal_point"]),
            epi_scale_f=float(d.get("epi_scale_f", 1.0)),
        )


@dataclass(frozen=True, eq=False)
class LightField:
    """4D radiance samples ``[V, U, Y, X, 3]`` in [0, 1], float32."""

    samples: np.ndarray
    rig: CameraRig | None = None

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 5 or s.shape[-1] != 3:
            raise ValueError(f"expected samples of shape (V, U, Y, X, 3), got {s.shape}")
        V, U = s.shape[:2]
        if U < 3 or V < 3 or U % 2 == 0 or V % 2 == 0:
            raise ValueError(f"angular resolution must be odd and >= 3, got U={U}, V={V}")
        s = np.ascontiguousarray(s, dtype=np.float32)
        if not np.all(np.isfinite(s)):
            raise ValueError("radiance contains non-finite values")
        if s.min() < 0.0 or s.max() > 1.0:
            raise ValueError("radiance outside [0, 1]")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def angular_res(self) -> tuple[int, int]:
        return self.samples.shape[1], self.samples.shape[0]

    @property
    def spatial_res(self) -> tuple[int, int]:
        return self.samples.shape[3], self.samples.shape[2]

    @property
    def center(self) -> tuple[int, int]:
        """Central view index as ``(u, v)``."""
        U, V = self.angular_res
        return (U - 1) // 2, (V - 1) // 2

    def quantized(self) -> "LightField":
        """Copy rounded to 8-bit levels, exactly as a PNG round trip yields."""
        q = np.round(self.samples * 255.0).astype(np.uint8)
        return LightField(q.astype(np.float32) / np.float32(255.0), self.rig)


@dataclass(frozen=True, eq=False)
class Epi:
    """Epipolar plane image ``[A, S, 3]``: angular rows by spatial columns."""

    samples: np.ndarray
    orientation: str
    fixed_index: int

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.samples.ndim != 3 or self.samples.shape[-1] != 3:
            raise ValueError(f"expected EPI of shape (A, S, 3), got {self.samples.shape}")

    @property
    def shape(self):
        return self.samples.shape


@dataclass(frozen=True, eq=False)
class DepthCurve:
    """Per-column depth (mm) for one EPI, with a validity flag per position."""

    values: np.ndarray
    orientation: str
    fixed_index: int
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        valid = np.isfinite(v) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if valid.shape != v.shape:
            raise ValueError("validity mask shape differs from values")
        if not np.all(np.isfinite(v[valid])):
            raise ValueError("valid curve positions must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", valid)


def central_view(lf: LightField) -> np.ndarray:
    u, v = lf.center
    return lf.samples[v, u]


def extract_horizontal_epi(lf: LightField, y_star: int) -> Epi:
    """Slice ``L(u, v*, x, y*)`` with ``v*`` the central row of views."""
    X, Y = lf.spatial_res
    if not 0 <= y_star < Y:
        raise IndexError(f"y_star={y_star} outside [0, {Y})")
    _, vc = lf.center
    return Epi(lf.samples[vc, :, y_star, :, :], HORIZONTAL, int(y_star))


def extract_vertical_epi(lf: LightField, x_star: int) -> Epi:
    """Slice ``L(u*, v, x*, y)`` with ``u*`` the central column of views."""
    X, Y = lf.spatial_res
    if not 0 <= x_star < X:
        raise IndexError(f"x_star={x_star} outside [0, {X})")
    uc, _ = lf.center
    return Epi(lf.samples[:, uc, :, x_star, :], VERTICAL, int(x_star))


def extract_epi(lf: LightField, orientation: str, index: int) -> Epi:
    if orientation == HORIZONTAL:
        return extract_horizontal_epi(lf, index)
    if orientation == VERTICAL:
        return extract_vertical_epi(lf, index)
    raise ValueError(f"unknown orientation {orientation!r}")


def all_epis(lf: LightField, orientation: str) -> np.ndarray:
    """Every EPI of one orientation stacked as ``[n, A, S, 3]``."""
    uc, vc = lf.center
    if orientation == HORIZONTAL:
        return np.ascontiguousarray(lf.samples[vc].transpose(1, 0, 2, 3))
    if orientation == VERTICAL:
        return np.ascontiguousarray(lf.samples[:, uc].transpose(2, 0, 1, 3))
    raise ValueError(f"unknown orientation {orientation!r}")


def slope_to_depth_proxy(k, rig: CameraRig):
    """Depth proxy ``Z = -f * k`` for an EPI slope ``k`` in px/view."""
    z = -rig.epi_scale_f * np.asarray(k, dtype=np.float64)
    return float(z) if z.ndim == 0 else z


def proxy_to_disparity(z, rig: CameraRig):
    return z / rig.epi_scale_f


def disparity_to_proxy(d, rig: CameraRig):
    return d * rig.epi_scale_f


def disparity_of_depth(z, rig: CameraRig):
    """Disparity in px/view of a point at depth ``z`` mm; zero at the focus plane."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(~(z > 0)):
        raise ValueError("depth must be positive")
    d = rig.fb * (1.0 / z - 1.0 / rig.focus_depth)
    return float(d) if d.ndim == 0 else d


def depth_of_disparity(d, rig: CameraRig):
    d = np.asarray(d, dtype=np.float64)
    inv = d / rig.fb + 1.0 / rig.focus_depth
    if np.any(~(inv > 0)):
        raise ValueError("disparity at or beyond infinity for this rig")
    z = 1.0 / inv
    return float(z) if z.ndim == 0 else z


def depth_of_disparity_masked(d, rig: CameraRig, valid=None):
    """Like :func:`depth_of_disparity` but maps unusable entries to NaN."""
    d = np.asarray(d, dtype=np.float64)
    inv = d / rig.fb + 1.0 / rig.focus_depth
    ok = np.isfinite(inv) & (inv > 0)
    if valid is not None:
        ok &= valid
    z = np.full(d.shape, np.nan)
    z[ok] = 1.0 / inv[ok]
    return z


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Depth (mm) on the central-view pixel grid; invalid pixels hold NaN."""

    depth: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        valid = np.isfinite(d) if self.valid is None else np.asarray(self.valid, dtype=bool) & np.isfinite(d)
        if valid.shape != d.shape or d.ndim != 2:
            raise ValueError("depth map and mask must be equal 2D shapes")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.depth.shape

    @property
    def n_invalid(self) -> int:
        return int((~self.valid).sum())

    @classmethod
    def from_curves(cls, curves: list[DepthCurve]) -> "DepthMap":
        """Stack horizontal curves as rows or vertical curves as columns."""
        curves = sorted(curves, key=lambda c: c.fixed_index)
        vals = np.stack([c.values for c in curves])
        valid = np.stack([c.valid for c in curves])
        if curves[0].orientation == VERTICAL:
            vals, valid = vals.T, valid.T
        return cls(np.where(valid, vals, np.nan), valid)
