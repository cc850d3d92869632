"""Forward/backward primitives on NHWC arrays.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and that cache.
"""

import numpy as np


def conv3x3_forward(x, w, b=None):
    """3x3 convolution, stride 1, zero padding 1.

    x : (N, H, W, C); w : (9 * C, Co) with rows ordered (ky, kx, c); b : (Co,)
    """
    N, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((N, H, W, 9, C), dtype=x.dtype)
    k = 0
    for i in range(3):
        for j in range(3):
            cols[:, :, :, k, :] = xp[:, i:i + H, j:j + W, :]
            k += 1
    cols = cols.reshape(N * H * W, 9 * C)
    out = cols @ w
    if b is not None:
        out += b
    return out.reshape(N, H, W, -1), (cols, x.shape, w, b is not None)


def conv3x3_backward(dout, cache):
    cols, xshape, w, has_bias = cache
    N, H, W, C = xshape
    d2 = dout.reshape(N * H * W, -1)
    dw = cols.T @ d2
    db = d2.sum(axis=0) if has_bias else None
    dcols = (d2 @ w.T).reshape(N, H, W, 9, C)
    dxp = np.zeros((N, H + 2, W + 2, C), dtype=dout.dtype)
    k = 0
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + H, j:j + W, :] += dcols[:, :, :, k, :]
            k += 1
    return dxp[:, 1:-1, 1:-1, :], dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train=True,
                      momentum=0.9, eps=1e-5, update_running=True):
    """Per-channel normalization over (N, H, W).

    In training mode batch statistics are used and, when ``update_running``,
    the running buffers are updated in place.
    """
    if train:
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        if update_running:
            running_mean *= momentum
            running_mean += (1 - momentum) * mean
            running_var *= momentum
            running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    out = xhat * gamma + beta
    return out.astype(x.dtype, copy=False), (xhat, inv, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    m = dout.shape[0] * dout.shape[1] * dout.shape[2]
    dx = (inv / m) * (m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def pooled_extent(n: int) -> int:
    return (n + 1) // 2


def _pool_counts(H, W, dtype):
    ch = np.full(pooled_extent(H), 2.0)
    cw = np.full(pooled_extent(W), 2.0)
    if H % 2:
        ch[-1] = 1.0
    if W % 2:
        cw[-1] = 1.0
    return np.outer(ch, cw).astype(dtype)[None, :, :, None]


def avgpool2x2_forward(x):
    """2x2 average pool, stride 2, ceil mode; padded cells do not count."""
    N, H, W, C = x.shape
    Ho, Wo = pooled_extent(H), pooled_extent(W)
    xp = np.zeros((N, 2 * Ho, 2 * Wo, C), dtype=x.dtype)
    xp[:, :H, :W] = x
    s = xp.reshape(N, Ho, 2, Wo, 2, C).sum(axis=(2, 4))
    counts = _pool_counts(H, W, x.dtype)
    return s / counts, (x.shape, counts)


def avgpool2x2_backward(dout, cache):
    (N, H, W, C), counts = cache
    g = dout / counts
    g = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)
    return g[:, :H, :W, :]


def fc_forward(x, w, b):
    out = x @ w + b
    return out, (x, w)


def fc_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)
