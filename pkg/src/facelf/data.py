"""Training pairs (EPI, depth-proxy curve) from rendered scenes."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import io
from .lightfield import (HORIZONTAL, VERTICAL, CameraRig, LightField, all_epis,
                         disparity_of_depth, disparity_to_proxy)


def proxy_curves(depth, rig: CameraRig, orientation: str) -> np.ndarray:
    """Ground-truth depth proxies laid out like :func:`all_epis` curves.

    Row ``i`` of the result labels EPI ``i``: image row ``i`` for horizontal
    EPIs, image column ``i`` for vertical ones.
    """
    depth = np.asarray(depth, dtype=np.float64)
    proxy = disparity_to_proxy(disparity_of_depth(depth, rig), rig)
    if orientation == HORIZONTAL:
        return proxy
    if orientation == VERTICAL:
        return np.ascontiguousarray(proxy.T)
    raise ValueError(f"unknown orientation {orientation!r}")


def epi_pairs(lf: LightField, depth, rig: CameraRig, orientation: str):
    """``(epis [n, A, S, 3], targets [n, S])`` for one light field."""
    return all_epis(lf, orientation), proxy_curves(depth, rig, orientation)


def load_manifest_pairs(manifest, orientation: str, names=None, rows=None, seed: int = 0):
    """Collect training pairs from every ``ok`` manifest entry.

    Parameters
    ----------
    manifest : path to ``manifest.json``
    orientation : "horizontal" or "vertical"
    names : optional iterable of entry names to keep
    rows : optional number of EPIs sampled per light field (all if None)

    Returns
    -------
    (epis, targets, rig)
    """
    manifest = Path(manifest)
    entries = io.read_manifest(manifest)
    keep = None if names is None else set(names)
    rng = np.random.default_rng(seed)
    xs, ys, rig = [], [], None
    for e in entries:
        if not e.get("ok") or (keep is not None and e["name"] not in keep):
            continue
        lf = io.read_lightfield(io.resolve(manifest.parent, e["lf"]))
        gt = io.read_ground_truth(io.resolve(manifest.parent, e["gt"]))
        if rig is not None and lf.rig != rig:
            raise io.FormatError(f"{e['name']}: rig differs from earlier entries")
        rig = lf.rig
        x, y = epi_pairs(lf, gt.depth_map, rig, orientation)
        if rows is not None and rows < len(x):
            pick = np.sort(rng.choice(len(x), size=rows, replace=False))
            x, y = x[pick], y[pick]
        xs.append(x)
        ys.append(y)
    if not xs:
        raise io.FormatError(f"{manifest}: no usable entries")
    return np.concatenate(xs), np.concatenate(ys), rig
