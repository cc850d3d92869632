"""Oracle disparity consistency against head pose.

For each yaw/pitch, renders a few face scenes and prints the fraction of
face pixels whose oracle disparity is within 0.1 px/view of the truth.

    python scripts/pose_sweep.py --scenes 3 --res 64
"""

import argparse

import numpy as np

from facelf.lightfield import CameraRig, disparity_of_depth
from facelf.oracle import SlopeSearchSpec, estimate_depthmap
from facelf.synth import Pose, make_scene, render_lightfield


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=3)
    ap.add_argument("--res", type=int, default=64)
    ap.add_argument("--angles", type=float, nargs="+", default=[0, 15, 30])
    a = ap.parse_args()

    rig = CameraRig.for_resolution((a.res, a.res))
    print(f"{'pose':>14} {'h':>6} {'v':>6}")
    for kind in ("yaw", "pitch"):
        for ang in a.angles:
            pose = Pose(yaw=ang) if kind == "yaw" else Pose(pitch=ang)
            frac = np.zeros(2)
            for seed in range(a.scenes):
                lf, gt = render_lightfield(make_scene(seed), rig, pose, (a.res, a.res))
                truth = disparity_of_depth(gt.depth_map, rig)
                for i, dm in enumerate(estimate_depthmap(lf, SlopeSearchSpec(), rig)):
                    ok = dm.valid & gt.mask
                    err = np.abs(disparity_of_depth(dm.depth[ok], rig) - truth[ok])
                    frac[i] += np.mean(err < 0.1) * ok.sum() / gt.mask.sum() / a.scenes
            print(f"{kind:>5} {ang:6.1f} deg {frac[0]:6.3f} {frac[1]:6.3f}")


if __name__ == "__main__":
    main()
