"""Brute-force EPI slope search.

For every spatial position the oracle shears a line through the EPI at each
candidate disparity, samples the angular rows with linear interpolation and
keeps the disparity whose samples agree best (least colour variance).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .lightfield import (HORIZONTAL, VERTICAL, CameraRig, DepthCurve, DepthMap, Epi, LightField,
                         all_epis, depth_of_disparity_masked, proxy_to_disparity, slope_to_depth_proxy)

MIN_SAMPLES = 3
TIE_EPS = 1e-12


@dataclass(frozen=True)
class SlopeSearchSpec:
    disparity_min: float = -4.0
    disparity_max: float = 2.5
    coarse_steps: int = 131
    refine: bool = True

    def __post_init__(self):
        if not self.disparity_min < self.disparity_max:
            raise ValueError("disparity_min must be below disparity_max")
        if self.coarse_steps < 16:
            raise ValueError("coarse_steps must be at least 16")

    def candidates(self) -> np.ndarray:
        return np.linspace(self.disparity_min, self.disparity_max, self.coarse_steps)


@numba.njit(cache=True)
def _line_score(epi, s, disp):
    """Summed per-channel sample variance along the line of disparity ``disp``.

    Returns ``inf`` when fewer than ``MIN_SAMPLES`` rows land inside the EPI.
    """
    A, S = epi.shape[0], epi.shape[1]
    ac = (A - 1) // 2
    n = 0
    m0 = m1 = m2 = 0.0
    q0 = q1 = q2 = 0.0
    for a in range(A):
        # a point at disparity d moves by -d px per view step
        x = s - disp * (a - ac)
        if x < 0.0 or x > S - 1:
            continue
        i = int(np.floor(x))
        t = x - i
        if i >= S - 1:
            i = S - 2
            t = 1.0
        v0 = epi[a, i, 0] * (1.0 - t) + epi[a, i + 1, 0] * t
        v1 = epi[a, i, 1] * (1.0 - t) + epi[a, i + 1, 1] * t
        v2 = epi[a, i, 2] * (1.0 - t) + epi[a, i + 1, 2] * t
        n += 1
        m0 += v0
        m1 += v1
        m2 += v2
        q0 += v0 * v0
        q1 += v1 * v1
        q2 += v2 * v2
    if n < MIN_SAMPLES:
        return np.inf
    var = (q0 - m0 * m0 / n) + (q1 - m1 * m1 / n) + (q2 - m2 * m2 / n)
    if var < 0.0:
        var = 0.0
    return var / (n - 1)


@numba.njit(cache=True)
def _search(epi, cands, order, refine, out_disp, out_valid, out_score):
    S = epi.shape[1]
    C = cands.shape[0]
    scores = np.empty(C)
    step = cands[1] - cands[0]
    for s in range(S):
        lo = np.inf
        hi = -np.inf
        for c in range(C):
            sc = _line_score(epi, s, cands[c])
            scores[c] = sc
            if sc < lo:
                lo = sc
            if sc > hi and sc < np.inf:
                hi = sc
        if lo == np.inf or hi - lo <= TIE_EPS * (1.0 + lo):
            out_disp[s] = np.nan
            out_valid[s] = False
            out_score[s] = lo
            continue
        # candidates visited by increasing |d| so ties resolve toward zero
        best = order[0]
        for j in range(1, C):
            c = order[j]
            if scores[c] < scores[best] - TIE_EPS * (1.0 + scores[best]):
                best = c
        d = cands[best]
        if refine and 0 < best < C - 1:
            sm = scores[best - 1]
            sp = scores[best + 1]
            if sm < np.inf and sp < np.inf:
                den = sm - 2.0 * scores[best] + sp
                if den > 0.0:
                    off = 0.5 * (sm - sp) / den
                    if off > 0.5:
                        off = 0.5
                    elif off < -0.5:
                        off = -0.5
                    d += off * step
        out_disp[s] = d
        out_valid[s] = True
        out_score[s] = scores[best]


def line_score(epi: Epi, s: int, disparity: float) -> float:
    return float(_line_score(np.asarray(epi.samples, dtype=np.float64), s, disparity))


def estimate_disparity(epi: Epi, spec: SlopeSearchSpec = SlopeSearchSpec(), candidates=None):
    """Per-position disparity (px/view), validity and winning score.

    ``candidates`` overrides the uniform grid of ``spec``; refinement then
    assumes a uniform spacing and is skipped otherwise.
    """
    samples = np.asarray(epi.samples, dtype=np.float64)
    if samples.shape[0] < 3:
        raise ValueError("EPI angular extent must be at least 3")
    cands = spec.candidates() if candidates is None else np.sort(np.asarray(candidates, dtype=np.float64))
    uniform = candidates is None
    order = np.argsort(np.abs(cands), kind="stable")
    S = samples.shape[1]
    disp = np.empty(S)
    valid = np.empty(S, dtype=np.bool_)
    score = np.empty(S)
    _search(samples, cands, order, bool(spec.refine and uniform), disp, valid, score)
    return disp, valid, score


def estimate_curve(epi: Epi, spec: SlopeSearchSpec, rig: CameraRig) -> DepthCurve:
    """Depth curve (mm) of one EPI by exhaustive slope search."""
    disp, valid, _ = estimate_disparity(epi, spec)
    # search runs over disparities; the EPI slope is their negation
    proxy = slope_to_depth_proxy(-disp, rig)
    depth = depth_of_disparity_masked(proxy_to_disparity(proxy, rig), rig, valid)
    valid = valid & np.isfinite(depth)
    return DepthCurve(depth, epi.orientation, epi.fixed_index, valid)


def estimate_depthmap(lf: LightField, spec: SlopeSearchSpec, rig: CameraRig | None = None):
    """Horizontal and vertical oracle depth maps aligned to the central view."""
    rig = rig or lf.rig
    if rig is None:
        raise ValueError("a CameraRig is required")
    maps = []
    for orientation in (HORIZONTAL, VERTICAL):
        stack = all_epis(lf, orientation)
        curves = [estimate_curve(Epi(e, orientation, i), spec, rig) for i, e in enumerate(stack)]
        maps.append(DepthMap.from_curves(curves))
    return maps[0], maps[1]
