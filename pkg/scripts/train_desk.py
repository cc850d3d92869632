"""Desk-scale training run with held-out evaluation every few hundred iterations.

Renders ``--scenes`` frontal face scenes, trains one orientation on all but the
last ``--held-out`` and prints held-out single-map RMSE (inside the face mask)
next to the analytic oracle on the same scenes.

    python scripts/train_desk.py --orientation horizontal --iters 2000 --out runs/desk
"""

import argparse
from pathlib import Path

import numpy as np

from facelf import io
from facelf.data import load_manifest_pairs
from facelf.lightfield import CameraRig, DepthMap, all_epis, depth_of_disparity_masked, proxy_to_disparity
from facelf.metrics import rmse
from facelf.net.model import FaceLFNet, NetConfig
from facelf.net.train import TrainConfig, label_statistics, to_batch, train
from facelf.oracle import SlopeSearchSpec, estimate_depthmap
from facelf.synth import frontal_poses, generate_dataset


def held_out_rmse(model, items, orientation, rig):
    out = []
    for lf, gt in items:
        p = model.predict_proxy(to_batch(all_epis(lf, orientation)))
        depth = depth_of_disparity_masked(proxy_to_disparity(p, rig), rig)
        if orientation == "vertical":
            depth = depth.T
        out.append(rmse(DepthMap(depth), DepthMap(gt.depth_map), mask=gt.mask))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--orientation", choices=["horizontal", "vertical"], default="horizontal")
    ap.add_argument("--scenes", type=int, default=40)
    ap.add_argument("--held-out", type=int, default=5)
    ap.add_argument("--res", type=int, default=64)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--lr", type=float, default=3e-4)
    ap.add_argument("--eval-every", type=int, default=250)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", required=True)
    a = ap.parse_args()

    out = Path(a.out)
    rig = CameraRig.for_resolution((a.res, a.res))
    man = out / "data" / "manifest.json"
    if not man.exists():
        generate_dataset(a.scenes, rig, frontal_poses(), out / "data", (a.res, a.res), seed=a.seed)
    entries = [e for e in io.read_manifest(man) if e["ok"]]
    train_names = [e["name"] for e in entries[:-a.held_out]]
    x, y, rig = load_manifest_pairs(man, a.orientation, names=train_names)
    items = [(io.read_lightfield(io.resolve(out / "data", e["lf"])),
              io.read_ground_truth(io.resolve(out / "data", e["gt"]))) for e in entries[-a.held_out:]]

    oracle = []
    for lf, gt in items:
        dm_h, dm_v = estimate_depthmap(lf, SlopeSearchSpec(), rig)
        dm = dm_h if a.orientation == "horizontal" else dm_v
        oracle.append(rmse(dm, DepthMap(gt.depth_map), mask=gt.mask))
    print(f"{len(x)} training EPIs; oracle RMSE {np.round(oracle, 3).tolist()} mean {np.mean(oracle):.3f}")

    mean, std = label_statistics(y)
    model = FaceLFNet(NetConfig(width=x.shape[2]), seed=a.seed, label_mean=mean, label_std=std)
    done = 0
    while done < a.iters:
        n = min(a.eval_every, a.iters - done)
        res = train(model, x, y, TrainConfig(base_lr=a.lr, batch_size=a.batch, iterations=n, seed=done))
        done += n
        errs = held_out_rmse(model, items, a.orientation, rig)
        print(f"{done:6d} loss {np.mean(res.losses[-50:]):.4f} held-out {np.round(errs, 3).tolist()} "
              f"mean {np.mean(errs):.3f} ({res.seconds:.0f} s)", flush=True)
    model.save(out / f"{a.orientation[0]}.flfw")


if __name__ == "__main__":
    main()
