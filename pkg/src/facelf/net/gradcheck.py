"""Central finite-difference check of the analytic backward pass.

The network is piecewise smooth: ReLUs switch on and off. Any perturbation
of an early weight, even 1e-4, moves so many downstream pre-activations that
some unit almost always crosses zero, and a central difference across that
kink is not a derivative. Differences are therefore taken on the network
with every ReLU activity pattern frozen at the unperturbed point. That
network coincides with the real one on the current linear piece, so its
derivative at the point is the true gradient. It is still evaluated only
through independent forward passes. How often the real network would have
crossed a kink is reported alongside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FaceLFNet, euclidean_loss


@dataclass
class GroupCheck:
    rel_error: float
    entry_error: float
    direction_error: float
    n_entries: int
    kink_crossings: int


def _loss(model, x, y, frozen=None, masks=None):
    pred = model.forward(x, train=True, update_running=False, frozen_masks=frozen, relu_masks=masks)
    return euclidean_loss(pred, y)[0]


def _rel(a, n):
    a, n = np.atleast_1d(a), np.atleast_1d(n)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / denom) if denom > 0 else 0.0


def gradient_check(model: FaceLFNet, x, y, eps=1e-4, entries_per_group=6, seed=0):
    """Compare analytic gradients with central differences, per parameter group.

    For each group, ``entries_per_group`` random entries are perturbed
    singly, and one random unit-norm direction covering the whole group is
    perturbed. ``rel_error`` is the worse of the two relative errors
    ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
    """
    if model.dtype != np.float64:
        raise ValueError("gradient checks need a float64 model")
    rng = np.random.default_rng(seed)
    base = []
    _loss(model, x, y, masks=base)
    _, grads = model.loss_and_grads(x, y, train=True, update_running=False)

    def crossed(mp, mm):
        return not all(np.array_equal(a, b) and np.array_equal(a, c) for a, b, c in zip(base, mp, mm))

    report = {}
    for name, p in model.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        kinks = 0
        idx = rng.choice(flat.size, size=min(entries_per_group, flat.size), replace=False)
        an, nu = [], []
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            mp = []
            lp = _loss(model, x, y, base, mp)
            flat[i] = old - eps
            mm = []
            lm = _loss(model, x, y, base, mm)
            flat[i] = old
            kinks += crossed(mp, mm)
            an.append(g[i])
            nu.append((lp - lm) / (2 * eps))
        e_entries = _rel(an, nu)

        v = rng.standard_normal(flat.size)
        v /= np.linalg.norm(v)
        old = flat.copy()
        flat += eps * v
        mp = []
        lp = _loss(model, x, y, base, mp)
        flat[:] = old - eps * v
        mm = []
        lm = _loss(model, x, y, base, mm)
        flat[:] = old
        kinks += crossed(mp, mm)
        e_dir = _rel(float(g @ v), (lp - lm) / (2 * eps))
        report[name] = GroupCheck(max(e_entries, e_dir), e_entries, e_dir, len(idx), kinks)
    return report
