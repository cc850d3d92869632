"""SGD training loop and depth-map inference for the EPI regressor."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..lightfield import (HORIZONTAL, VERTICAL, CameraRig, DepthMap, LightField, all_epis,
                          depth_of_disparity_masked, proxy_to_disparity)
from .model import FaceLFNet, euclidean_loss


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Step schedule: ``lr = base_lr / lr_drop_factor ** (milestones passed)``.

    The default schedule drops at 30000 and 50000 iterations; desk-scale
    runs pass scaled milestones.
    """

    base_lr: float = 3e-4
    lr_drop_factor: float = 10.0
    drop_milestones: tuple = (30000, 50000)
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 1
    iterations: int | None = None
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        ms = tuple(int(m) for m in self.drop_milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("drop_milestones must be strictly increasing")
        object.__setattr__(self, "drop_milestones", ms)
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def lr_at(self, iteration: int) -> float:
        passed = sum(1 for m in self.drop_milestones if iteration >= m)
        return self.base_lr / self.lr_drop_factor ** passed

    def n_iterations(self, n_samples: int) -> int:
        if self.iterations is not None:
            return int(self.iterations)
        return self.epochs * -(-n_samples // self.batch_size)


@dataclass
class TrainResult:
    model: FaceLFNet
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    seconds: float = 0.0


def to_batch(epis) -> np.ndarray:
    """``[n, A, S, 3]`` EPI stack to network layout ``(n, 3, A, S)``."""
    return np.ascontiguousarray(np.asarray(epis).transpose(0, 3, 1, 2))


def train(model: FaceLFNet, epis, targets, cfg: TrainConfig, log=None) -> TrainResult:
    """Minimize the Euclidean loss on normalized depth proxies.

    Parameters
    ----------
    model : FaceLFNet
        Updated in place; its label statistics normalize ``targets``.
    epis : array (n, A, S, 3)
    targets : array (n, S)
        Depth proxies (disparity units), every entry finite.
    cfg : TrainConfig

    Returns
    -------
    TrainResult with the per-iteration loss trace.
    """
    x_all = to_batch(epis).astype(model.dtype)
    y_all = model.normalize(np.asarray(targets, dtype=np.float64)).astype(model.dtype)
    if not np.all(np.isfinite(y_all)):
        raise ValueError("training targets contain non-finite values")
    n = len(x_all)
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    res = TrainResult(model)
    t0 = time.perf_counter()
    order = rng.permutation(n)
    pos = 0
    for it in range(cfg.n_iterations(n)):
        if pos + cfg.batch_size > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        pred, caches = model.forward(x_all[idx], train=True, update_running=True, return_cache=True)
        loss, dpred = euclidean_loss(pred, y_all[idx])
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at iteration {it}")
        grads = model.backward(dpred, caches)
        lr = cfg.lr_at(it)
        for k, g in grads.items():
            v = velocity[k]
            v *= cfg.momentum
            v -= lr * g
            model.params[k] += v
        res.losses.append(loss)
        res.lrs.append(lr)
        if log and cfg.log_every and it % cfg.log_every == 0:
            log(f"iter {it:6d} lr {lr:.2e} loss {loss:.5f}")
    res.seconds = time.perf_counter() - t0
    return res


def label_statistics(targets) -> tuple[float, float]:
    t = np.asarray(targets, dtype=np.float64)
    return float(t.mean()), float(t.std() or 1.0)


def infer_depthmaps(h_model: FaceLFNet, v_model: FaceLFNet, lf: LightField,
                    rig: CameraRig | None = None, batch_size: int = 64):
    """Run every horizontal EPI through ``h_model`` and vertical EPI through ``v_model``."""
    rig = rig or lf.rig
    if rig is None:
        raise ValueError("a CameraRig is required")
    X, Y = lf.spatial_res
    if h_model.config.width != X or v_model.config.width != Y:
        raise ValueError(f"model widths ({h_model.config.width}, {v_model.config.width}) "
                         f"do not match light field ({X}, {Y})")
    maps = []
    for model, orientation in ((h_model, HORIZONTAL), (v_model, VERTICAL)):
        proxy = model.predict_proxy(to_batch(all_epis(lf, orientation)), batch_size)
        depth = depth_of_disparity_masked(proxy_to_disparity(proxy, rig), rig)
        if orientation == VERTICAL:
            depth = depth.T
        maps.append(DepthMap(depth))
    return maps[0], maps[1]
