"""Procedural ground-truthed light field synthesis.

Scenes are heightfields ``z = h(x, y)`` in a local frame (mm) that is rotated
about a pivot on the optical axis to realize head pose. A face-like scene is a
paraboloid cap with anisotropic Gaussian features and a steep flange outside
its rim. A textured plane at a fixed far depth closes every scene.

Every sub-aperture ray is marched against the heightfield with
Lipschitz-safe steps (never smaller than a quarter pixel footprint), then the
bracketed crossing is refined by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .lightfield import CameraRig, LightField

DIFFICULTIES = ("flat-plane", "tilted-plane", "face-like")
STANDARD_PITCH = (-15.0, 0.0, 15.0)
STANDARD_YAW = (-30.0, -15.0, 0.0, 15.0, 30.0)

KIND_PLANE = 0.0
KIND_FACE = 1.0

BISECTION_ITERS = 30
AMBIENT = 0.1
# Gaussian features vanish beyond 6 sigma (jump < 2e-8 of the amplitude)
FEATURE_CUTOFF2 = 36.0


@dataclass(frozen=True)
class Pose:
    pitch: float = 0.0
    yaw: float = 0.0

    @property
    def on_standard_grid(self) -> bool:
        return self.pitch in STANDARD_PITCH and self.yaw in STANDARD_YAW

    def rotation(self) -> np.ndarray:
        """Camera-from-local rotation, yaw about y applied after pitch about x."""
        p, y = math.radians(self.pitch), math.radians(self.yaw)
        rx = np.array([[1, 0, 0], [0, math.cos(p), -math.sin(p)], [0, math.sin(p), math.cos(p)]])
        ry = np.array([[math.cos(y), 0, math.sin(y)], [0, 1, 0], [-math.sin(y), 0, math.cos(y)]])
        return ry @ rx


def standard_poses() -> list[Pose]:
    """Frontal pose, two pitch rotations and four yaw rotations."""
    return [Pose(0, 0), Pose(-15, 0), Pose(15, 0),
            Pose(0, -30), Pose(0, -15), Pose(0, 15), Pose(0, 30)]


def frontal_poses() -> list[Pose]:
    return [Pose(0, 0)]


@dataclass(frozen=True, eq=False)
class Scene:
    """Heightfield scene with albedo, two point lights and a background plane.

    ``height_params`` packs the base surface: for planes
    ``[kind, z0, gx, gy]``, for faces
    ``[kind, z_rim, protrusion, rx, ry, flange_rate, flange_max, cap]``.
    ``features`` rows are ``(x0, y0, sx, sy, amplitude)`` Gaussians added to
    the base (negative amplitude moves toward the camera).
    """

    seed: int
    difficulty: str
    height_params: np.ndarray
    features: np.ndarray
    pivot_depth: float
    background_depth: float
    lights: np.ndarray  # (2, 4): x, y, z (camera frame, mm), intensity
    skin_color: np.ndarray
    background_colors: np.ndarray  # (2, 3)
    texture_seed: int
    texture_spacing: float = 2.0
    background_spacing: float = 4.0
    landmark_points: np.ndarray = field(default=None)  # (2, 3) local frame

    @property
    def lipschitz(self) -> float:
        """Upper bound on ``|grad h|`` over the whole plane."""
        hp = self.height_params
        if hp[0] == KIND_PLANE:
            base = math.hypot(hp[2], hp[3])
        else:
            rmin = min(hp[3], hp[4])
            base = max(2.0 * hp[2], hp[6]) / rmin
        g = 0.0
        for x0, y0, sx, sy, a in self.features:
            g += abs(a) * math.exp(-0.5) * math.sqrt(1.0 / sx**2 + 1.0 / sy**2)
        return base + g

    def with_light_intensities(self, intensities) -> "Scene":
        lights = self.lights.copy()
        lights[:, 3] = intensities
        return replace(self, lights=lights)

    def height(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = np.empty(np.broadcast(x, y).shape)
        xb, yb = np.broadcast_arrays(x, y)
        for i, (xi, yi) in enumerate(zip(xb.ravel(), yb.ravel())):
            out.flat[i] = _height(xi, yi, self.height_params, self.features)
        return out

    def posed_landmarks(self, pose: Pose) -> np.ndarray:
        """Landmarks in the camera frame for a given pose."""
        return _to_camera(self.landmark_points, pose.rotation(), self.pivot_depth)

    def interocular(self) -> float:
        a, b = self.landmark_points
        return float(np.linalg.norm(a - b))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Central-view depth (mm) and foreground mask; background has finite depth."""

    depth_map: np.ndarray
    mask: np.ndarray
    landmarks: np.ndarray = field(default=None)  # (2, 3) camera frame

    def __post_init__(self):
        d = self.depth_map[self.mask]
        if not (np.all(np.isfinite(d)) and np.all(d > 0)):
            raise ValueError("ground truth depth must be positive and finite on the mask")


def _to_camera(q, rot, pivot_depth):
    c = np.array([0.0, 0.0, pivot_depth])
    return (np.asarray(q) - c) @ rot.T + c


def make_scene(seed: int, difficulty: str = "face-like", focus_depth: float = 600.0) -> Scene:
    """Deterministic procedural scene for ``(seed, difficulty)``."""
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}, got {difficulty!r}")
    rng = np.random.default_rng([int(seed), DIFFICULTIES.index(difficulty)])
    F = float(focus_depth)
    bg = 1.5 * F
    lights = np.array([
        [-0.5 * F + rng.uniform(-40, 40), -0.35 * F + rng.uniform(-40, 40), 0.1 * F, rng.uniform(0.5, 0.8)],
        [0.5 * F + rng.uniform(-40, 40), -0.2 * F + rng.uniform(-40, 40), 0.2 * F, rng.uniform(0.35, 0.6)],
    ])
    skin = np.array([rng.uniform(0.65, 0.9), rng.uniform(0.45, 0.65), rng.uniform(0.35, 0.55)])
    bgc = rng.uniform(0.15, 0.9, size=(2, 3))
    tex_seed = int(rng.integers(0, 2**31 - 1))
    common = dict(seed=int(seed), difficulty=difficulty, background_depth=bg, lights=lights,
                  skin_color=skin, background_colors=bgc, texture_seed=tex_seed)

    if difficulty == "flat-plane":
        hp = np.array([KIND_PLANE, F, 0.0, 0.0])
        lm = np.array([[-30.0, 0.0, F], [30.0, 0.0, F]])
        return Scene(height_params=hp, features=np.zeros((0, 5)), pivot_depth=F,
                     landmark_points=lm, **common)

    if difficulty == "tilted-plane":
        gx = rng.uniform(0.2, 0.35) * rng.choice([-1, 1])
        gy = rng.uniform(0.1, 0.25) * rng.choice([-1, 1])
        hp = np.array([KIND_PLANE, F, gx, gy])
        lm = np.array([[-30.0, 0.0, F - 30 * gx], [30.0, 0.0, F + 30 * gx]])
        return Scene(height_params=hp, features=np.zeros((0, 5)), pivot_depth=F,
                     landmark_points=lm, **common)

    rx = rng.uniform(68, 80)
    ry = rng.uniform(90, 105)
    protrusion = rng.uniform(40, 55)
    z_rim = F + rng.uniform(20, 45)
    cap = z_rim + 4.0 * (bg - z_rim) + 1000.0
    hp = np.array([KIND_FACE, z_rim, protrusion, rx, ry, 4.0 * 2 * protrusion, 6.0 * min(rx, ry), cap])

    def j(scale):
        return rng.uniform(-scale, scale)

    eye_x = rng.uniform(28, 34)
    eye_y = -rng.uniform(15, 25)
    feats = [
        # nose ridge and tip
        (j(2), eye_y + 25 + j(3), rng.uniform(7, 10), rng.uniform(22, 30), -rng.uniform(14, 22)),
        (j(2), eye_y + 45 + j(3), rng.uniform(7, 10), rng.uniform(6, 9), -rng.uniform(6, 10)),
        # eye sockets
        (-eye_x, eye_y, rng.uniform(12, 16), rng.uniform(8, 11), rng.uniform(7, 12)),
        (eye_x, eye_y, rng.uniform(12, 16), rng.uniform(8, 11), rng.uniform(7, 12)),
        # brow
        (j(2), eye_y - 18 + j(3), rng.uniform(30, 40), rng.uniform(7, 10), -rng.uniform(4, 8)),
        # cheeks
        (-rng.uniform(36, 46), eye_y + 40, rng.uniform(16, 22), rng.uniform(14, 20), -rng.uniform(5, 9)),
        (rng.uniform(36, 46), eye_y + 40, rng.uniform(16, 22), rng.uniform(14, 20), -rng.uniform(5, 9)),
        # lips and chin
        (j(2), eye_y + 68 + j(3), rng.uniform(14, 20), rng.uniform(5, 8), -rng.uniform(4, 7)),
        (j(2), eye_y + 95 + j(4), rng.uniform(18, 26), rng.uniform(12, 16), -rng.uniform(5, 9)),
    ]
    feats = np.array(feats, dtype=np.float64)
    outer = eye_x + rng.uniform(13, 17)
    lm_xy = np.array([[-outer, eye_y], [outer, eye_y]])
    lm = np.array([[x, y, _height(x, y, hp, feats)] for x, y in lm_xy])
    return Scene(height_params=hp, features=feats, pivot_depth=z_rim, landmark_points=lm, **common)


# ----------------------------------------------------------------- kernels


@numba.njit(cache=True)
def _height(x, y, hp, feats):
    if hp[0] == 0.0:
        h = hp[1] + hp[2] * x + hp[3] * y
    else:
        z_rim, prot, rx, ry, rate, gmax, cap = hp[1], hp[2], hp[3], hp[4], hp[5], hp[6], hp[7]
        rho2 = (x / rx) ** 2 + (y / ry) ** 2
        if rho2 <= 1.0:
            h = z_rim - prot * (1.0 - rho2)
        else:
            # dh/drho starts at 2*prot and grows linearly to gmax
            s = math.sqrt(rho2) - 1.0
            g0 = 2.0 * prot
            s1 = (gmax - g0) / rate
            if s < s1:
                h = z_rim + g0 * s + 0.5 * rate * s * s
            else:
                h = z_rim + g0 * s1 + 0.5 * rate * s1 * s1 + gmax * (s - s1)
            if h > cap:
                h = cap
    for i in range(feats.shape[0]):
        dx = (x - feats[i, 0]) / feats[i, 2]
        dy = (y - feats[i, 1]) / feats[i, 3]
        r2 = dx * dx + dy * dy
        if r2 < FEATURE_CUTOFF2:
            h += feats[i, 4] * math.exp(-0.5 * r2)
    return h


@numba.njit(cache=True)
def _height_grad(x, y, hp, feats):
    gx = 0.0
    gy = 0.0
    if hp[0] == 0.0:
        gx = hp[2]
        gy = hp[3]
    else:
        z_rim, prot, rx, ry, rate, gmax, cap = hp[1], hp[2], hp[3], hp[4], hp[5], hp[6], hp[7]
        rho2 = (x / rx) ** 2 + (y / ry) ** 2
        if rho2 <= 1.0:
            gx = 2.0 * prot * x / (rx * rx)
            gy = 2.0 * prot * y / (ry * ry)
        else:
            rho = math.sqrt(rho2)
            s = rho - 1.0
            g0 = 2.0 * prot
            s1 = (gmax - g0) / rate
            if s < s1:
                h = z_rim + g0 * s + 0.5 * rate * s * s
                dh = g0 + rate * s
            else:
                h = z_rim + g0 * s1 + 0.5 * rate * s1 * s1 + gmax * (s - s1)
                dh = gmax
            if h < cap:
                gx = dh * x / (rx * rx * rho)
                gy = dh * y / (ry * ry * rho)
    for i in range(feats.shape[0]):
        dx = (x - feats[i, 0]) / feats[i, 2]
        dy = (y - feats[i, 1]) / feats[i, 3]
        r2 = dx * dx + dy * dy
        if r2 >= FEATURE_CUTOFF2:
            continue
        g = feats[i, 4] * math.exp(-0.5 * r2)
        gx -= g * dx / feats[i, 2]
        gy -= g * dy / feats[i, 3]
    return gx, gy


@numba.njit(cache=True)
def _lattice(i, j, seed):
    h = np.uint64(i & 0xFFFFFFFF) * np.uint64(0x9E3779B97F4A7C15)
    h ^= np.uint64(j & 0xFFFFFFFF) * np.uint64(0xC2B2AE3D27D4EB4F)
    h ^= np.uint64(seed) * np.uint64(0x165667B19E3779F9)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xC4CEB9FE1A85EC53)
    h ^= h >> np.uint64(33)
    return float(h >> np.uint64(11)) / 9007199254740992.0


@numba.njit(cache=True)
def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


@numba.njit(cache=True)
def _value_noise(x, y, seed):
    fx = math.floor(x)
    fy = math.floor(y)
    i = int(fx)
    j = int(fy)
    tx = _fade(x - fx)
    ty = _fade(y - fy)
    a = _lattice(i, j, seed)
    b = _lattice(i + 1, j, seed)
    c = _lattice(i, j + 1, seed)
    d = _lattice(i + 1, j + 1, seed)
    return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty


@numba.njit(cache=True)
def _texture(x, y, footprint, spacing, seed):
    """Band-limited multi-octave noise in [0, 1].

    Octaves finer than ~2 px at the current footprint are faded out, so point
    sampling does not alias.
    """
    acc = 0.0
    wsum = 0.0
    s = spacing
    for o in range(6):
        px = s / footprint
        w = px - 1.5
        if w > 1.0:
            w = 1.0
        if w > 0.0:
            acc += w * _value_noise(x / s, y / s, seed + 7919 * o)
            wsum += w
        s *= 2.0
    if wsum == 0.0:
        return 0.5
    return acc / wsum


@numba.njit(cache=True)
def _stretch(v):
    # octave averaging concentrates noise near 0.5
    v = 0.5 + 2.5 * (v - 0.5)
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


@numba.njit(cache=True)
def _albedo(x, y, footprint, base, spacing, seed, out):
    n = _texture(x, y, footprint, spacing, seed)
    m = _texture(x, y, footprint, spacing * 2.0, seed + 101)
    for c in range(3):
        v = 0.7 * n + 0.3 * _texture(x, y, footprint, spacing, seed + 31 * (c + 1))
        v = _stretch(v)
        out[c] = base[c] * (0.15 + 0.85 * v) * (0.8 + 0.4 * m)


@numba.njit(cache=True)
def _background_albedo(x, y, footprint, colors, spacing, seed, out):
    n = _stretch(_texture(x, y, footprint, spacing, seed + 5003))
    for c in range(3):
        out[c] = colors[0, c] + (colors[1, c] - colors[0, c]) * n


@numba.njit(cache=True)
def _shade(p, n, albedo, lights, ambient, out):
    diff = ambient
    for k in range(lights.shape[0]):
        lx = lights[k, 0] - p[0]
        ly = lights[k, 1] - p[1]
        lz = lights[k, 2] - p[2]
        ln = math.sqrt(lx * lx + ly * ly + lz * lz)
        cosv = (n[0] * lx + n[1] * ly + n[2] * lz) / ln
        if cosv > 0.0:
            diff += lights[k, 3] * cosv
    for c in range(3):
        v = albedo[c] * diff
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        out[c] = v


@numba.njit(cache=True)
def _surface_footprint(p, n, footprint):
    """Pixel footprint stretched by foreshortening as seen from the central camera.

    Depends on the surface point only, so every view samples the same albedo.
    """
    pn = math.sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
    c = -(n[0] * p[0] + n[1] * p[1] + n[2] * p[2]) / pn
    if c < 0.05:
        c = 0.05
    return footprint / c


@numba.njit(cache=True)
def _trace(ox, oy, dx, dy, rot, pivot, hp, feats, lip, bg_depth, focal_px):
    """March one ray ``o + t * d`` (``d_z = 1``) and return (t, hit).

    ``t`` equals camera-frame depth. ``hit`` is False when the ray reaches the
    background plane first.
    """
    # local-frame ray q(t) = q0 + t * a with q = R^T (p - c) + c
    px0 = ox
    py0 = oy
    pz0 = -pivot
    q0x = rot[0, 0] * px0 + rot[1, 0] * py0 + rot[2, 0] * pz0
    q0y = rot[0, 1] * px0 + rot[1, 1] * py0 + rot[2, 1] * pz0
    q0z = rot[0, 2] * px0 + rot[1, 2] * py0 + rot[2, 2] * pz0 + pivot
    ax = rot[0, 0] * dx + rot[1, 0] * dy + rot[2, 0]
    ay = rot[0, 1] * dx + rot[1, 1] * dy + rot[2, 1]
    az = rot[0, 2] * dx + rot[1, 2] * dy + rot[2, 2]
    L = abs(az) + lip * math.sqrt(ax * ax + ay * ay)

    t = 1.0
    f = q0z + t * az - _height(q0x + t * ax, q0y + t * ay, hp, feats)
    if f >= 0.0:
        return t, True
    while t < bg_depth:
        step = -f / L
        min_step = 0.25 * t / focal_px
        if step < min_step:
            step = min_step
        t_new = t + step
        if t_new > bg_depth:
            t_new = bg_depth
        f_new = q0z + t_new * az - _height(q0x + t_new * ax, q0y + t_new * ay, hp, feats)
        if f_new >= 0.0:
            lo = t
            hi = t_new
            for _ in range(BISECTION_ITERS):
                mid = 0.5 * (lo + hi)
                fm = q0z + mid * az - _height(q0x + mid * ax, q0y + mid * ay, hp, feats)
                if fm >= 0.0:
                    hi = mid
                else:
                    lo = mid
            return 0.5 * (lo + hi), True
        t = t_new
        f = f_new
    return bg_depth, False


@numba.njit(cache=True)
def _render_views(centers, width, height, focal_px, cx, cy, focus, rot, pivot, hp, feats, lip,
                  bg_depth, lights, ambient, skin, tex_spacing, bg_colors, bg_spacing, tex_seed,
                  out_rgb, out_depth, out_hit):
    alb = np.empty(3)
    col = np.empty(3)
    p = np.empty(3)
    nrm = np.empty(3)
    for k in range(centers.shape[0]):
        ox = centers[k, 0]
        oy = centers[k, 1]
        for iy in range(height):
            for ix in range(width):
                # ray through the focus-plane point seen by this pixel in every view
                fx = (ix - cx) * focus / focal_px
                fy = (iy - cy) * focus / focal_px
                dx = (fx - ox) / focus
                dy = (fy - oy) / focus
                t, hit = _trace(ox, oy, dx, dy, rot, pivot, hp, feats, lip, bg_depth, focal_px)
                p[0] = ox + t * dx
                p[1] = oy + t * dy
                p[2] = t
                footprint = t / focal_px
                inside = hit
                if hit:
                    # local coordinates of the hit point
                    qx = rot[0, 0] * p[0] + rot[1, 0] * p[1] + rot[2, 0] * (p[2] - pivot)
                    qy = rot[0, 1] * p[0] + rot[1, 1] * p[1] + rot[2, 1] * (p[2] - pivot)
                    gx, gy = _height_grad(qx, qy, hp, feats)
                    nl = math.sqrt(gx * gx + gy * gy + 1.0)
                    lx = gx / nl
                    ly = gy / nl
                    lz = -1.0 / nl
                    nrm[0] = rot[0, 0] * lx + rot[0, 1] * ly + rot[0, 2] * lz
                    nrm[1] = rot[1, 0] * lx + rot[1, 1] * ly + rot[1, 2] * lz
                    nrm[2] = rot[2, 0] * lx + rot[2, 1] * ly + rot[2, 2] * lz
                    footprint = _surface_footprint(p, nrm, footprint)
                    _albedo(qx, qy, footprint, skin, tex_spacing, tex_seed, alb)
                    if hp[0] != 0.0:
                        inside = (qx / hp[3]) ** 2 + (qy / hp[4]) ** 2 <= 1.0
                else:
                    nrm[0] = 0.0
                    nrm[1] = 0.0
                    nrm[2] = -1.0
                    _background_albedo(p[0], p[1], footprint, bg_colors, bg_spacing, tex_seed, alb)
                _shade(p, nrm, alb, lights, ambient, col)
                for c in range(3):
                    out_rgb[k, iy, ix, c] = col[c]
                out_depth[k, iy, ix] = t
                out_hit[k, iy, ix] = inside


# ----------------------------------------------------------------- public


def _view_centers(U, V, baseline):
    uc, vc = (U - 1) // 2, (V - 1) // 2
    centers = np.empty((V * U, 2))
    for v in range(V):
        for u in range(U):
            centers[v * U + u] = ((u - uc) * baseline, (v - vc) * baseline)
    return centers


def render_lightfield(scene: Scene, rig: CameraRig, pose: Pose = Pose(),
                      spatial_res=(400, 400), angular_res=(15, 15)):
    """Render a light field and the central-view ground truth.

    Parameters
    ----------
    scene : Scene
    rig : CameraRig
        Its principal point should match ``spatial_res``.
    pose : Pose
        Rigid rotation of the scene about its pivot.
    spatial_res : (X, Y)
    angular_res : (U, V), both odd.

    Returns
    -------
    (LightField, GroundTruth)
    """
    X, Y = spatial_res
    U, V = angular_res
    if X < 32 or Y < 32:
        raise ValueError(f"spatial_res must be at least 32x32, got {spatial_res}")
    if U < 3 or V < 3 or U % 2 == 0 or V % 2 == 0:
        raise ValueError(f"angular_res must be odd and >= 3, got {angular_res}")
    rot = np.ascontiguousarray(pose.rotation())
    centers = _view_centers(U, V, rig.baseline)
    rgb = np.empty((V * U, Y, X, 3), dtype=np.float32)
    depth = np.empty((V * U, Y, X))
    hit = np.empty((V * U, Y, X), dtype=np.bool_)
    cx, cy = rig.principal_point
    _render_views(centers, X, Y, rig.focal_px, cx, cy, rig.focus_depth, rot, scene.pivot_depth,
                  scene.height_params, scene.features, scene.lipschitz * 1.05 + 1e-9,
                  scene.background_depth, scene.lights, AMBIENT, scene.skin_color,
                  scene.texture_spacing, scene.background_colors, scene.background_spacing,
                  scene.texture_seed, rgb, depth, hit)
    uc, vc = (U - 1) // 2, (V - 1) // 2
    k = vc * U + uc
    lf = LightField(rgb.reshape(V, U, Y, X, 3), rig)
    gt = GroundTruth(depth[k].copy(), hit[k].copy(), scene.posed_landmarks(pose))
    F = rig.focus_depth
    if gt.depth_map.min() <= 0.2 * F or gt.depth_map.max() >= 3.0 * F:
        raise ValueError("scene depth leaves (0.2, 3) x focus_depth")
    return lf, gt


def trace_central_ray(scene: Scene, rig: CameraRig, pose: Pose, px: float, py: float):
    """Depth and hit flag of one central-view pixel ray."""
    cx, cy = rig.principal_point
    dx = (px - cx) / rig.focal_px
    dy = (py - cy) / rig.focal_px
    return _trace(0.0, 0.0, dx, dy, np.ascontiguousarray(pose.rotation()), scene.pivot_depth,
                  scene.height_params, scene.features, scene.lipschitz * 1.05 + 1e-9,
                  scene.background_depth, rig.focal_px)


def shade_point(scene: Scene, rig: CameraRig, pose: Pose, p, hit: bool = True) -> np.ndarray:
    """Radiance of camera-frame point ``p`` as the renderer shades it."""
    p = np.asarray(p, dtype=np.float64)
    rot = pose.rotation()
    footprint = p[2] / rig.focal_px
    alb = np.empty(3)
    col = np.empty(3)
    if hit:
        q = rot.T @ (p - np.array([0, 0, scene.pivot_depth]))
        gx, gy = _height_grad(q[0], q[1], scene.height_params, scene.features)
        n = rot @ (np.array([gx, gy, -1.0]) / math.sqrt(gx * gx + gy * gy + 1.0))
        footprint = _surface_footprint(p, n, footprint)
        _albedo(q[0], q[1], footprint, scene.skin_color, scene.texture_spacing, scene.texture_seed, alb)
    else:
        n = np.array([0.0, 0.0, -1.0])
        _background_albedo(p[0], p[1], footprint, scene.background_colors,
                           scene.background_spacing, scene.texture_seed, alb)
    _shade(p, n, alb, scene.lights, AMBIENT, col)
    return col


def sample_surface(scene: Scene, n: int, rng, pose: Pose = Pose(), extent: float = 60.0) -> np.ndarray:
    """``n`` camera-frame points scattered uniformly over the heightfield.

    Samples cover the local square ``[-extent, extent]^2`` about the pivot, so
    for face scenes they stay on the cap. Scattered samples avoid the lattice
    regularity of pixel back-projections.
    """
    xy = rng.uniform(-extent, extent, size=(int(n), 2))
    q = np.column_stack([xy, scene.height(xy[:, 0], xy[:, 1])])
    return _to_camera(q, pose.rotation(), scene.pivot_depth)


def generate_dataset(n_scenes: int, rig: CameraRig, poses, out_dir, spatial_res=(64, 64),
                     angular_res=(15, 15), seed: int = 0, difficulty: str = "face-like",
                     vary_lighting: bool = True, log=None) -> list[dict]:
    """Render ``n_scenes x len(poses)`` light fields with ground truth.

    Writes one container and one ground-truth directory per item, plus
    ``manifest.json`` (a JSON array). Items that fail carry ``"ok": false``
    and an ``"error"`` message; the rest of the set is still produced.
    Container contents are 8-bit, so entries reload bit-exactly.
    """
    from . import io
    from .seeding import derive_seed

    out = io.ensure_dir(out_dir)
    entries = []
    for i in range(n_scenes):
        scene_seed = derive_seed(seed, "scene", i)
        scene = make_scene(scene_seed, difficulty, rig.focus_depth)
        for j, pose in enumerate(poses):
            name = f"s{i:03d}_p{j:02d}"
            entry = {"name": name, "scene_seed": scene_seed, "difficulty": difficulty,
                     "pose": {"pitch": pose.pitch, "yaw": pose.yaw},
                     "lf": f"{name}/lf", "gt": f"{name}/gt",
                     "interocular": scene.interocular()}
            try:
                sc = scene
                if vary_lighting:
                    rng = np.random.default_rng(derive_seed(seed, "light", i, j))
                    sc = scene.with_light_intensities(scene.lights[:, 3] * rng.uniform(0.8, 1.2, 2))
                lf, gt = render_lightfield(sc, rig, pose, spatial_res, angular_res)
                io.write_lightfield(lf.quantized(), out / entry["lf"], rig)
                io.write_ground_truth(gt, out / entry["gt"])
                entry["ok"] = True
            except (OSError, ValueError) as exc:
                entry["ok"] = False
                entry["error"] = f"{type(exc).__name__}: {exc}"
            entries.append(entry)
            if log:
                log(f"{name} pitch={pose.pitch:+.0f} yaw={pose.yaw:+.0f} ok={entry['ok']}")
    io.write_manifest(out / "manifest.json", entries)
    return entries
