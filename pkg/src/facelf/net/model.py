"""Dense-block EPI regressor.

Layout for an input EPI of ``A`` angular rows and ``W`` spatial columns::

    stem      3x3 conv, 16 channels                      (A, W)
    block 1   3 x [BN-ReLU-3x3 conv, +12 channels]       (A, W)
    trans 1   3x3 conv (channels kept) + 2x2 avg pool    -> (ceil A/2, ceil W/2)
    block 2 ... trans 3, block 4                         (2, ceil W/8) at A=15
    head      BN-ReLU -> flatten -> FC 4096 -> ReLU -> FC W

With the default widths, blocks see 16, 52, 88 and 124 input channels and
160 leave block 4.

The BN-ReLU ahead of the head is DenseNet's classifier prelude, kept when
the softmax becomes a regressor. It bounds the scale of the flattened
features; without it SGD at the reference learning rate diverges because
the head's curvature grows with the squared feature norm.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import layers as L


@dataclass(frozen=True)
class NetConfig:
    angular: int = 15
    width: int = 128
    stem_channels: int = 16
    growth: int = 12
    n_blocks: int = 4
    layers_per_block: int = 3
    fc_hidden: int = 4096
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    head_bn: bool = True
    dtype: str = "float32"

    def block_channels(self) -> list[int]:
        """Channels entering each dense block."""
        c = self.stem_channels
        out = []
        for _ in range(self.n_blocks):
            out.append(c)
            c += self.layers_per_block * self.growth
        return out

    @property
    def out_channels(self) -> int:
        return self.stem_channels + self.n_blocks * self.layers_per_block * self.growth

    def extents(self) -> list[tuple[int, int]]:
        """Feature-map extents (H, W) inside each dense block."""
        h, w = self.angular, self.width
        out = [(h, w)]
        for _ in range(self.n_blocks - 1):
            h, w = L.pooled_extent(h), L.pooled_extent(w)
            out.append((h, w))
        return out

    @property
    def flat_features(self) -> int:
        h, w = self.extents()[-1]
        return self.out_channels * h * w


def euclidean_loss(pred, target):
    """``(1 / 2N) * sum ||pred - target||^2`` and its gradient ``(pred - target) / N``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if not np.all(np.isfinite(target)):
        raise ValueError("non-finite regression target")
    n = pred.shape[0]
    diff = pred - target
    return float(0.5 * np.sum(diff.astype(np.float64) ** 2) / n), diff / n


def trans_has_bias(cfg: NetConfig, b: int) -> bool:
    """The last transition feeds only BN layers when ``head_bn``; a bias there is inert."""
    return not (cfg.head_bn and b == cfg.n_blocks - 2)


def layout(cfg: NetConfig):
    """``(name, shape, init, fan_in)`` for every array in declaration order."""
    out = [("stem.w", (9 * 3, cfg.stem_channels), "he", 27),
           ("stem.b", (cfg.stem_channels,), "zeros", 0)]
    for b, c in enumerate(cfg.block_channels()):
        for l in range(cfg.layers_per_block):
            cin = c + l * cfg.growth
            pre = f"block{b}.layer{l}"
            out += [(f"{pre}.bn.gamma", (cin,), "ones", 0),
                    (f"{pre}.bn.beta", (cin,), "zeros", 0),
                    (f"{pre}.bn.mean", (cin,), "buffer0", 0),
                    (f"{pre}.bn.var", (cin,), "buffer1", 0),
                    (f"{pre}.conv.w", (9 * cin, cfg.growth), "he", 9 * cin)]
        if b < cfg.n_blocks - 1:
            cout = c + cfg.layers_per_block * cfg.growth
            out.append((f"trans{b}.w", (9 * cout, cout), "he", 9 * cout))
            if trans_has_bias(cfg, b):
                out.append((f"trans{b}.b", (cout,), "zeros", 0))
    if cfg.head_bn:
        c = cfg.out_channels
        out += [("head.bn.gamma", (c,), "ones", 0), ("head.bn.beta", (c,), "zeros", 0),
                ("head.bn.mean", (c,), "buffer0", 0), ("head.bn.var", (c,), "buffer1", 0)]
    out += [("fc1.w", (cfg.flat_features, cfg.fc_hidden), "he", cfg.flat_features),
            ("fc1.b", (cfg.fc_hidden,), "zeros", 0),
            ("fc2.w", (cfg.fc_hidden, cfg.width), "he", cfg.fc_hidden),
            ("fc2.b", (cfg.width,), "zeros", 0)]
    return out


class FaceLFNet:
    """Parameters, BN buffers and label statistics of one regressor.

    ``params`` is an ordered dict of learnable arrays; ``buffers`` holds the BN
    running statistics. Both are serialized in declaration order.
    """

    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0,
                 label_mean: float = 0.0, label_std: float = 1.0):
        self.config = config
        self.label_mean = float(label_mean)
        self.label_std = float(label_std)
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._init(np.random.default_rng(seed))

    # ------------------------------------------------------------ setup

    def _init(self, rng):
        dt = self.dtype
        for name, shape, kind, fan_in in layout(self.config):
            if kind == "he":
                arr = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dt)
            elif kind in ("zeros", "buffer0"):
                arr = np.zeros(shape, dt)
            else:
                arr = np.ones(shape, dt)
            (self.buffers if kind.startswith("buffer") else self.params)[name] = arr

    def copy(self) -> "FaceLFNet":
        other = object.__new__(FaceLFNet)
        other.config = self.config
        other.label_mean = self.label_mean
        other.label_std = self.label_std
        other.dtype = self.dtype
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return other

    # ---------------------------------------------------------- forward

    def _check_input(self, x):
        N, C, A, W = x.shape
        if (C, A, W) != (3, self.config.angular, self.config.width):
            raise ValueError(f"input {x.shape} does not match model "
                             f"(N, 3, {self.config.angular}, {self.config.width})")

    def forward(self, x, train=False, update_running=True, return_cache=False, trace=None,
                relu_masks=None, frozen_masks=None):
        """Predict normalized labels for a batch ``x`` of shape (N, 3, A, W).

        ``train`` selects batch statistics in BN. ``trace``, if a list, receives
        ``(stage, (N, H, W, C))`` for every stage output; ``relu_masks``, if a
        list, receives every ReLU activity pattern. ``frozen_masks`` replaces
        the ReLU activity patterns with given ones (gradient checking only).
        """
        frozen = iter(frozen_masks) if frozen_masks is not None else None
        cfg = self.config
        p = self.params
        x = np.asarray(x)
        self._check_input(x)
        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=self.dtype)
        caches = []
        h, c = L.conv3x3_forward(h, p["stem.w"], p["stem.b"])
        caches.append(("stem", c))
        if trace is not None:
            trace.append(("stem", h.shape))
        for b in range(cfg.n_blocks):
            for l in range(cfg.layers_per_block):
                pre = f"block{b}.layer{l}"
                y, cb = L.batchnorm_forward(h, p[f"{pre}.bn.gamma"], p[f"{pre}.bn.beta"],
                                            self.buffers[f"{pre}.bn.mean"],
                                            self.buffers[f"{pre}.bn.var"], train=train,
                                            momentum=cfg.bn_momentum, eps=cfg.bn_eps,
                                            update_running=update_running)
                y, cr = L.relu_forward(y) if frozen is None else (y * next(frozen), None)
                if relu_masks is not None:
                    relu_masks.append(cr)
                y, cc = L.conv3x3_forward(y, p[f"{pre}.conv.w"])
                caches.append((pre, (cb, cr, cc, h.shape[-1])))
                h = np.concatenate([h, y], axis=-1)
            if trace is not None:
                trace.append((f"block{b}", h.shape))
            if b < cfg.n_blocks - 1:
                h, cc = L.conv3x3_forward(h, p[f"trans{b}.w"], p.get(f"trans{b}.b"))
                h, cp = L.avgpool2x2_forward(h)
                caches.append((f"trans{b}", (cc, cp)))
                if trace is not None:
                    trace.append((f"trans{b}", h.shape))
        hb = None
        if cfg.head_bn:
            h, cb = L.batchnorm_forward(h, p["head.bn.gamma"], p["head.bn.beta"],
                                        self.buffers["head.bn.mean"], self.buffers["head.bn.var"],
                                        train=train, momentum=cfg.bn_momentum, eps=cfg.bn_eps,
                                        update_running=update_running)
            h, crb = L.relu_forward(h) if frozen is None else (h * next(frozen), None)
            if relu_masks is not None:
                relu_masks.append(crb)
            hb = (cb, crb)
        flat_shape = h.shape
        h = h.reshape(h.shape[0], -1)
        h, c1 = L.fc_forward(h, p["fc1.w"], p["fc1.b"])
        h, cr = L.relu_forward(h) if frozen is None else (h * next(frozen), None)
        if relu_masks is not None:
            relu_masks.append(cr)
        out, c2 = L.fc_forward(h, p["fc2.w"], p["fc2.b"])
        caches.append(("head", (flat_shape, hb, c1, cr, c2)))
        if return_cache:
            return out, caches
        return out

    def backward(self, dout, caches):
        """Gradients of every parameter given d(loss)/d(output)."""
        cfg = self.config
        p = self.params
        grads = {}
        dout = np.asarray(dout, dtype=self.dtype)
        name, (flat_shape, hb, c1, cr, c2) = caches.pop()
        dh, grads["fc2.w"], grads["fc2.b"] = L.fc_backward(dout, c2)
        dh = L.relu_backward(dh, cr)
        dh, grads["fc1.w"], grads["fc1.b"] = L.fc_backward(dh, c1)
        dh = dh.reshape(flat_shape)
        if hb is not None:
            cb, crb = hb
            dh = L.relu_backward(dh, crb)
            dh, grads["head.bn.gamma"], grads["head.bn.beta"] = L.batchnorm_backward(dh, cb)
        for b in reversed(range(cfg.n_blocks)):
            if b < cfg.n_blocks - 1:
                name, (cc, cp) = caches.pop()
                dh = L.avgpool2x2_backward(dh, cp)
                dh, grads[f"trans{b}.w"], db = L.conv3x3_backward(dh, cc)
                if db is not None:
                    grads[f"trans{b}.b"] = db
            for l in reversed(range(cfg.layers_per_block)):
                pre, (cb, crl, cc, cin) = caches.pop()
                dprev = dh[..., :cin]
                dy = dh[..., cin:]
                dy, grads[f"{pre}.conv.w"], _ = L.conv3x3_backward(dy, cc)
                dy = L.relu_backward(dy, crl)
                dy, grads[f"{pre}.bn.gamma"], grads[f"{pre}.bn.beta"] = L.batchnorm_backward(dy, cb)
                dh = dprev + dy
        name, c = caches.pop()
        _, grads["stem.w"], grads["stem.b"] = L.conv3x3_backward(dh, c)
        return {k: grads[k] for k in p}

    def loss_and_grads(self, x, target, train=True, update_running=False):
        pred, caches = self.forward(x, train=train, update_running=update_running, return_cache=True)
        loss, dpred = euclidean_loss(pred, target)
        return loss, self.backward(dpred, caches)

    # -------------------------------------------------------- labels

    def normalize(self, proxy):
        return (np.asarray(proxy) - self.label_mean) / self.label_std

    def denormalize(self, y):
        return np.asarray(y, dtype=np.float64) * self.label_std + self.label_mean

    def predict_proxy(self, x, batch_size=64):
        """Depth proxies for a batch of EPIs, BN in inference mode."""
        x = np.asarray(x)
        outs = [self.forward(x[i:i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        return self.denormalize(np.concatenate(outs, axis=0))

    # ----------------------------------------------------------- I/O

    def named_arrays(self):
        """Learnable parameters then BN buffers, in declaration order."""
        return list(self.params.items()) + list(self.buffers.items())

    def save(self, path) -> None:
        from .. import io

        header = {"architecture": asdict(self.config),
                  "label_mean": self.label_mean, "label_std": self.label_std,
                  "precision": self.dtype.name,
                  "n_learnable": len(self.params)}
        io.write_weights(path, header, self.named_arrays())

    @classmethod
    def load(cls, path) -> "FaceLFNet":
        from .. import io

        header, arrays = io.read_weights(path)
        try:
            cfg = NetConfig(**header["architecture"])
            n = int(header["n_learnable"])
            mean, std = float(header["label_mean"]), float(header["label_std"])
        except (KeyError, TypeError) as exc:
            raise io.MalformedHeaderError(f"weights header incomplete: {exc}") from exc
        model = object.__new__(cls)
        model.config = cfg
        model.dtype = np.dtype(cfg.dtype)
        model.label_mean, model.label_std = mean, std
        model.params = dict(arrays[:n])
        model.buffers = dict(arrays[n:])
        for k, shape, kind, _ in layout(cfg):
            have = (model.buffers if kind.startswith("buffer") else model.params).get(k)
            if have is None or have.shape != tuple(shape):
                raise io.MalformedHeaderError(f"weights file lacks or misshapes {k!r}")
        return model
