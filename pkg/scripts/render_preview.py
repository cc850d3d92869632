"""Write the central view, ground-truth depth and oracle depth of one scene as PNGs.

    python scripts/render_preview.py --seed 3 --yaw 15 --out preview/
"""

import argparse
from pathlib import Path

import numpy as np
from PIL import Image

from facelf.lightfield import CameraRig, central_view
from facelf.oracle import SlopeSearchSpec, estimate_depthmap
from facelf.synth import DIFFICULTIES, Pose, make_scene, render_lightfield


def depth_png(path, depth, lo, hi):
    v = np.clip((hi - np.nan_to_num(depth, nan=hi)) / (hi - lo), 0, 1)
    Image.fromarray(np.round(v * 255).astype(np.uint8)).save(path)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--difficulty", choices=DIFFICULTIES, default="face-like")
    ap.add_argument("--res", type=int, default=128)
    ap.add_argument("--yaw", type=float, default=0.0)
    ap.add_argument("--pitch", type=float, default=0.0)
    ap.add_argument("--out", required=True)
    a = ap.parse_args()

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    rig = CameraRig.for_resolution((a.res, a.res))
    lf, gt = render_lightfield(make_scene(a.seed, a.difficulty), rig, Pose(pitch=a.pitch, yaw=a.yaw), (a.res, a.res))
    Image.fromarray(np.round(central_view(lf) * 255).astype(np.uint8)).save(out / "central.png")
    face = gt.depth_map[gt.mask] if gt.mask.any() else gt.depth_map.ravel()
    lo, hi = float(face.min()), float(face.max())
    depth_png(out / "gt_depth.png", np.where(gt.mask, gt.depth_map, np.nan), lo, hi)
    dm_h, dm_v = estimate_depthmap(lf, SlopeSearchSpec(), rig)
    depth_png(out / "oracle_h.png", np.where(gt.mask, dm_h.depth, np.nan), lo, hi)
    depth_png(out / "oracle_v.png", np.where(gt.mask, dm_v.depth, np.nan), lo, hi)
    print(f"wrote {out}: face depth {lo:.1f}..{hi:.1f} mm")


if __name__ == "__main__":
    main()
