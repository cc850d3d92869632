"""Stage runner: synth -> (epi | train -> infer) -> fuse -> eval.

Each stage reads only the artifacts the previous stage declares and writes
its own under the run directory::

    synth/manifest.json         rendered light fields and ground truth
    models/{h,v}.flfw           trained regressors (network estimator)
    depth/<item>/pair.json      depth-map pairs from the oracle or the networks
    surface/<item>.ply          fused surfaces (+ .pfm, .json sidecars)
    eval/<item>.json, eval/report.json
    run_manifest.json           versions, config hash, seeds, artifacts
"""

from __future__ import annotations

import json
import logging
import platform
from pathlib import Path

import numpy as np

from . import __version__, io
from .config import PipelineConfig
from .data import load_manifest_pairs
from .fusion import fuse
from .lightfield import DepthMap
from .metrics import crop_face_region, error_stats, summarize_errors, write_error_heatmap
from .net.model import FaceLFNet, NetConfig
from .net.train import TrainConfig, infer_depthmaps, label_statistics, train
from .oracle import estimate_depthmap
from .seeding import derive_seed
from .synth import frontal_poses, generate_dataset, standard_poses

log = logging.getLogger("facelf")

STAGES = ("synth", "epi", "train", "infer", "fuse", "eval")
ORIENT = {"h": "horizontal", "v": "vertical"}


class MissingArtifactError(FileNotFoundError):
    pass


def chain(estimator: str) -> tuple:
    return (("synth", "epi", "fuse", "eval") if estimator == "oracle"
            else ("synth", "train", "infer", "fuse", "eval"))


def seeds(cfg: PipelineConfig) -> dict:
    return {"root": cfg.seed,
            "synth": derive_seed(cfg.seed, "synth"),
            "init_h": derive_seed(cfg.seed, "init", "h"),
            "init_v": derive_seed(cfg.seed, "init", "v"),
            "train_h": derive_seed(cfg.seed, "train", "h"),
            "train_v": derive_seed(cfg.seed, "train", "v"),
            "rows": derive_seed(cfg.seed, "rows")}


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {what}: {path} (run the upstream stage first)")
    return path


def _entries(run: Path, split: str | None = None) -> list:
    man = io.read_manifest(_require(run / "synth" / "manifest.json", "synth manifest"))
    return [e for e in man if e.get("ok") and (split is None or e.get("split") == split)]


# ---------------------------------------------------------------- stages


def synthesize(cfg: PipelineConfig, out: Path) -> Path:
    """Render the configured scenes into ``out`` and tag each item's split."""
    s = cfg.synth
    poses = standard_poses() if s.poses == "standard" else frontal_poses()
    entries = generate_dataset(s.n_train + s.n_test, cfg.rig.build(), poses, out,
                               tuple(cfg.rig.spatial_res), tuple(cfg.rig.angular_res),
                               seeds(cfg)["synth"], s.difficulty, s.vary_lighting, log=log.debug)
    for e in entries:
        e["split"] = "train" if int(e["name"][1:4]) < s.n_train else "test"
    io.write_manifest(Path(out) / "manifest.json", entries)
    return Path(out) / "manifest.json"


def stage_synth(cfg: PipelineConfig, run: Path) -> list:
    return [synthesize(cfg, run / "synth")]


def train_config(cfg: PipelineConfig, orientation: str) -> TrainConfig:
    t = cfg.train
    return TrainConfig(base_lr=t.base_lr, lr_drop_factor=t.lr_drop_factor,
                       drop_milestones=t.drop_milestones, momentum=t.momentum,
                       batch_size=t.batch_size, epochs=t.epochs, iterations=t.iterations,
                       seed=seeds(cfg)[f"train_{orientation}"], log_every=t.log_every)


def train_orientation(cfg: PipelineConfig, manifest: Path, orientation: str, names=None) -> FaceLFNet:
    """Train one regressor on the manifest's training split."""
    x, y, rig = load_manifest_pairs(manifest, ORIENT[orientation], names=names,
                                    rows=cfg.model.rows_per_lf, seed=seeds(cfg)["rows"])
    width = x.shape[2]
    mean, std = label_statistics(y)
    net = NetConfig(width=width, fc_hidden=cfg.model.fc_hidden, dtype=cfg.model.dtype)
    model = FaceLFNet(net, seed=seeds(cfg)[f"init_{orientation}"], label_mean=mean, label_std=std)
    res = train(model, x, y, train_config(cfg, orientation), log=log.info)
    log.info("trained %s on %d EPIs in %.0f s, final loss %.4g", orientation, len(x),
             res.seconds, float(np.mean(res.losses[-20:])))
    return model


def stage_train(cfg: PipelineConfig, run: Path) -> list:
    names = [e["name"] for e in _entries(run, "train")]
    if not names:
        raise MissingArtifactError("synth manifest has no training items")
    out = io.ensure_dir(run / "models")
    paths = []
    for o in ("h", "v"):
        model = train_orientation(cfg, run / "synth" / "manifest.json", o, names)
        model.save(out / f"{o}.flfw")
        paths.append(out / f"{o}.flfw")
    return paths


def _estimate(cfg: PipelineConfig, run: Path, estimator: str) -> list:
    base = run / "synth"
    if estimator == "network":
        h = FaceLFNet.load(_require(run / "models" / "h.flfw", "horizontal model"))
        v = FaceLFNet.load(_require(run / "models" / "v.flfw", "vertical model"))
    paths = []
    for e in _entries(run, "test"):
        lf = io.read_lightfield(io.resolve(base, e["lf"]))
        if estimator == "oracle":
            dm_h, dm_v = estimate_depthmap(lf, cfg.search, lf.rig)
        else:
            dm_h, dm_v = infer_depthmaps(h, v, lf, lf.rig)
        gt_info = json.loads((io.resolve(base, e["gt"]) / "gt.json").read_text())
        extra = {"item": e["name"], "estimator": estimator, "landmarks": gt_info.get("landmarks"),
                 "gt": str(Path("..") / ".." / "synth" / e["gt"])}
        paths.append(io.write_depth_pair(run / "depth" / e["name"], dm_h, dm_v, lf.rig, extra))
    return paths


def stage_epi(cfg, run):
    return _estimate(cfg, run, "oracle")


def stage_infer(cfg, run):
    return _estimate(cfg, run, "network")


def _pairs(run: Path) -> list:
    root = _require(run / "depth", "depth maps")
    pairs = sorted(p for p in root.iterdir() if (p / io.DEPTH_PAIR_META).exists())
    if not pairs:
        raise MissingArtifactError(f"no depth pairs under {root}")
    return pairs


def stage_fuse(cfg: PipelineConfig, run: Path) -> list:
    paths = []
    for d in _pairs(run):
        dm_h, dm_v, rig, meta = io.read_depth_pair(d)
        region = None
        if meta.get("landmarks") is not None:
            lm = np.asarray(meta["landmarks"])
            region = lambda pc, lm=lm: crop_face_region(pc, lm, cfg.metrics.crop_factor)
        surf = fuse(dm_h, dm_v, rig, cfg.gridfit, region=region)
        extra = {"item": meta.get("item", d.name), "pair": str(Path("..") / "depth" / d.name)}
        paths.append(io.write_surface(run / "surface" / f"{d.name}.ply", surf, extra))
    return paths


def stage_eval(cfg: PipelineConfig, run: Path) -> list:
    out = io.ensure_dir(run / "eval")
    base = run / "synth"
    surfaces = sorted(_require(run / "surface", "fused surfaces").glob("*.ply"))
    if not surfaces:
        raise MissingArtifactError(f"no surfaces under {run / 'surface'}")
    by_name = {e["name"]: e for e in _entries(run)}
    items, errors, paths = {}, [], []
    for ply in surfaces:
        name = ply.stem
        if name not in by_name:
            raise MissingArtifactError(f"surface {ply.name} has no synth entry")
        gt = io.read_ground_truth(io.resolve(base, by_name[name]["gt"]))
        rig = io.rig_from_meta(io.read_meta(io.resolve(base, by_name[name]["lf"]) / "meta.json"))
        surf = io.read_surface(ply)
        gdm = DepthMap(gt.depth_map)
        rep = error_stats(surf, gdm, rig, mask=gt.mask, icp=cfg.metrics.icp, landmarks=gt.landmarks)
        pred = surf.resample(rig, gdm.shape)
        ok = pred.valid & gt.mask
        errors.append(np.abs(pred.depth[ok] - gdm.depth[ok]))
        items[name] = rep.to_dict()
        items[name]["depth_range_mm"] = float(np.ptp(gt.depth_map[gt.mask]))
        (out / f"{name}.json").write_text(json.dumps(items[name], indent=2))
        paths.append(out / f"{name}.json")
        if cfg.metrics.heatmaps:
            emap = np.where(ok, np.abs(pred.depth - gdm.depth), np.nan)
            write_error_heatmap(out / f"{name}.png", emap)
    pooled = summarize_errors(np.concatenate(errors)).to_dict()
    report = {"items": items, "pooled": pooled,
              "mean_rmse_mm": float(np.mean([r["rmse"] for r in items.values()]))}
    (out / "report.json").write_text(json.dumps(report, indent=2))
    return paths + [out / "report.json"]


RUNNERS = {"synth": stage_synth, "epi": stage_epi, "train": stage_train,
           "infer": stage_infer, "fuse": stage_fuse, "eval": stage_eval}


# ----------------------------------------------------------------- driver


def versions() -> dict:
    import numba
    import PIL
    import scipy

    return {"facelf": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "Pillow": PIL.__version__}


def run_pipeline(cfg: PipelineConfig, run_dir, stages=None) -> dict:
    """Run ``stages`` (default: the full chain for the configured estimator).

    Stages must appear in chain order. A stage whose inputs are absent raises
    :class:`MissingArtifactError`. Returns the run manifest.
    """
    cfg.validate()
    full = chain(cfg.model.estimator)
    stages = tuple(full if stages is None else stages)
    for s in stages:
        if s not in full:
            raise ValueError(f"stage {s!r} is not part of the {cfg.model.estimator} chain {full}")
    order = [full.index(s) for s in stages]
    if order != sorted(order) or len(set(order)) != len(order):
        raise ValueError(f"stages must follow chain order {full}")
    run = io.ensure_dir(run_dir)
    (run / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    man_path = run / "run_manifest.json"
    manifest = json.loads(man_path.read_text()) if man_path.exists() else {}
    if manifest.get("config_hash") not in (None, cfg.config_hash()):
        log.warning("run directory was produced with config %s; now %s",
                    manifest["config_hash"], cfg.config_hash())
        manifest = {}
    manifest.update({"config_hash": cfg.config_hash(), "versions": versions(), "seeds": seeds(cfg)})
    artifacts = manifest.setdefault("artifacts", {})
    for s in stages:
        log.info("stage %s", s)
        artifacts[s] = [str(Path(p).relative_to(run)) for p in RUNNERS[s](cfg, run)]
    manifest["stages"] = [s for s in full if s in artifacts]
    man_path.write_text(json.dumps(manifest, indent=2))
    return manifest
