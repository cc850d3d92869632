"""Command-line entry point.

Exit codes: 0 success, 1 input error (bad flags, config, files), 2 internal
error. ``FACELF_THREADS`` caps BLAS and numba threads.
"""

from __future__ import annotations

import os

_THREADS = os.environ.get("FACELF_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _pair(text, kind=int):
    try:
        a, b = (kind(t) for t in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}") from exc
    return [a, b]


def _read_rig(path):
    from .lightfield import CameraRig

    try:
        return CameraRig.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: no usable camera rig ({type(exc).__name__}: {exc})") from exc


def _load_config(args, overrides):
    from .config import PipelineConfig

    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    return cfg.with_overrides(overrides)


# ------------------------------------------------------------- commands


def cmd_synth(args):
    from .pipeline import synthesize

    cfg = _load_config(args, {"synth.n_test": args.scenes, "synth.n_train": args.train_scenes,
                              "synth.poses": args.poses, "rig.spatial_res": args.res,
                              "synth.difficulty": args.difficulty, "seed": args.seed})
    print(synthesize(cfg, Path(args.out)))


def cmd_epi(args):
    from . import io
    from .oracle import SlopeSearchSpec, estimate_depthmap

    if not args.oracle:
        raise InputError("only the analytic estimator is available here; pass --oracle "
                         "(use 'infer' for trained networks)")
    spec = SlopeSearchSpec(args.dmin, args.dmax, args.steps, not args.no_refine)
    lf = io.read_lightfield(args.inp)
    dm_h, dm_v = estimate_depthmap(lf, spec, lf.rig)
    extra = {"estimator": "oracle", "source": str(Path(args.inp).resolve())}
    io.write_depth_pair(args.out, dm_h, dm_v, lf.rig, extra)
    print(f"{args.out}: invalid h={dm_h.n_invalid} v={dm_v.n_invalid}")


def cmd_train(args):
    from .pipeline import train_orientation

    o = {"h": "h", "v": "v", "horizontal": "h", "vertical": "v"}[args.orientation]
    cfg = _load_config(args, {"seed": args.seed, "train.iterations": args.iters,
                              "train.batch_size": args.batch, "train.base_lr": args.lr})
    names = None
    if args.split:
        from . import io
        names = [e["name"] for e in io.read_manifest(args.manifest) if e.get("split") == args.split]
    model = train_orientation(cfg, Path(args.manifest), o, names)
    if args.width is not None and model.config.width != args.width:
        raise InputError(f"manifest EPIs are {model.config.width} wide, not {args.width}")
    model.save(args.out)
    print(args.out)


def cmd_infer(args):
    from . import io
    from .net.model import FaceLFNet
    from .net.train import infer_depthmaps

    lf = io.read_lightfield(args.lf)
    h, v = FaceLFNet.load(args.hmodel), FaceLFNet.load(args.vmodel)
    dm_h, dm_v = infer_depthmaps(h, v, lf, lf.rig)
    io.write_depth_pair(args.out, dm_h, dm_v, lf.rig, {"estimator": "network"})
    print(args.out)


def cmd_fuse(args):
    from . import io
    from .fusion import GridFitSpec, fuse
    from .lightfield import DepthMap
    from .metrics import crop_face_region

    rig = _read_rig(args.meta)
    dm_h = DepthMap(io.read_pfm(args.h).astype(float))
    dm_v = DepthMap(io.read_pfm(args.v).astype(float))
    spec = GridFitSpec(smoothness=args.lam, tolerance=args.tol, max_iter=args.max_iter)
    region = None
    if args.landmarks:
        lm = json.loads(Path(args.landmarks).read_text())["landmarks"]
        region = lambda pc: crop_face_region(pc, lm, args.crop_factor)  # noqa: E731
    surf = fuse(dm_h, dm_v, rig, spec, region=region)
    io.write_surface(args.out, surf)
    print(f"{args.out}: {surf.nodes.shape[1]}x{surf.nodes.shape[0]} nodes, {surf.iterations} CG iterations")


def cmd_eval(args):
    from . import io
    from .lightfield import DepthMap
    from .metrics import error_stats, write_error_heatmap

    rig = _read_rig(args.meta)
    gt = DepthMap(io.read_pfm(args.gt).astype(float))
    mask = io.read_mask(args.mask) if args.mask else None
    lm = json.loads(Path(args.landmarks).read_text())["landmarks"] if args.landmarks else None
    surf = io.read_surface(args.pred)
    rep = error_stats(surf, gt, rig, mask=mask, icp=args.icp, landmarks=lm)
    text = json.dumps(rep.to_dict(), indent=2)
    if args.report:
        Path(args.report).write_text(text)
    if args.heatmap:
        import numpy as np

        pred = surf.resample(rig, gt.shape)
        ok = pred.valid & gt.valid & (mask if mask is not None else True)
        write_error_heatmap(args.heatmap, np.where(ok, np.abs(pred.depth - gt.depth), np.nan))
    print(text)


def cmd_pipeline(args):
    from .pipeline import run_pipeline

    over = {"seed": args.seed, "model.estimator": args.estimator, "synth.n_test": args.scenes,
            "synth.n_train": args.train_scenes, "rig.spatial_res": args.res,
            "train.iterations": args.iters}
    cfg = _load_config(args, over)
    stages = args.stages.split(",") if args.stages else None
    man = run_pipeline(cfg, args.out, stages)
    report = Path(args.out) / "eval" / "report.json"
    if report.exists() and "eval" in (stages or man["stages"]):
        print(json.dumps(json.loads(report.read_text())["pooled"], indent=2))
    print(f"config {man['config_hash']} stages {','.join(man['stages'])}")


# --------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="facelf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="JSON PipelineConfig; flags override its fields")
        return sp

    s = with_config(sub.add_parser("synth", help="render light fields with ground truth"))
    s.add_argument("--scenes", type=int, help="number of (test-split) scenes")
    s.add_argument("--train-scenes", type=int, help="extra scenes tagged as training split")
    s.add_argument("--poses", choices=["standard", "frontal"])
    s.add_argument("--res", type=_pair, help="spatial resolution X,Y")
    s.add_argument("--difficulty", choices=["flat-plane", "tilted-plane", "face-like"])
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("epi", help="analytic depth maps from one light field")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--oracle", action="store_true")
    e.add_argument("--dmin", type=float, default=-4.0)
    e.add_argument("--dmax", type=float, default=2.5)
    e.add_argument("--steps", type=int, default=131)
    e.add_argument("--no-refine", action="store_true")
    e.add_argument("--out", required=True, help="output directory for the depth pair")
    e.set_defaults(func=cmd_epi)

    t = with_config(sub.add_parser("train", help="train one EPI regressor"))
    t.add_argument("--manifest", required=True)
    t.add_argument("--orientation", choices=["h", "v", "horizontal", "vertical"], required=True)
    t.add_argument("--width", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--split", help="use only manifest items of this split")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="depth maps from trained regressors")
    i.add_argument("--lf", required=True)
    i.add_argument("--hmodel", required=True)
    i.add_argument("--vmodel", required=True)
    i.add_argument("--out", required=True, help="output directory for the depth pair")
    i.set_defaults(func=cmd_infer)

    f = sub.add_parser("fuse", help="fit one surface to a depth pair")
    f.add_argument("--h", required=True)
    f.add_argument("--v", required=True)
    f.add_argument("--meta", required=True, help="JSON holding the camera rig")
    f.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    f.add_argument("--tol", type=float, default=1e-10)
    f.add_argument("--max-iter", type=int, default=20000)
    f.add_argument("--landmarks", help="JSON with 'landmarks' for the face crop")
    f.add_argument("--crop-factor", type=float, default=1.4)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    v = sub.add_parser("eval", help="score a fused surface against ground truth")
    v.add_argument("--pred", required=True)
    v.add_argument("--gt", required=True)
    v.add_argument("--meta", required=True)
    v.add_argument("--mask")
    v.add_argument("--landmarks")
    v.add_argument("--icp", action="store_true")
    v.add_argument("--report")
    v.add_argument("--heatmap")
    v.set_defaults(func=cmd_eval)

    q = with_config(sub.add_parser("pipeline", help="run the stage chain"))
    q.add_argument("--estimator", choices=["oracle", "network"])
    q.add_argument("--scenes", type=int)
    q.add_argument("--train-scenes", type=int)
    q.add_argument("--res", type=_pair)
    q.add_argument("--iters", type=int)
    q.add_argument("--seed", type=int)
    q.add_argument("--stages", help="comma-separated subset, in chain order")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    from .config import ConfigError
    from .io import FormatError
    from .pipeline import MissingArtifactError

    try:
        args = build_parser().parse_args(argv)
    except InputError as exc:
        print(f"facelf: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    if _THREADS:
        import numba

        numba.set_num_threads(min(int(_THREADS), numba.config.NUMBA_NUM_THREADS))
    try:
        args.func(args)
    except (InputError, ConfigError, FormatError, MissingArtifactError, FileNotFoundError) as exc:
        print(f"facelf: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        logging.getLogger("facelf").debug("internal error", exc_info=True)
        print(f"facelf: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
