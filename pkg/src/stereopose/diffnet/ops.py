"""Differentiable operations on ``(N, C, H, W)`` tensors.

Every op returns a new :class:`Tensor` whose backward closure produces the
exact analytic gradient for each parent.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch
from .tensor import Tensor, make_node, record


def _const(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _require(cond: bool, message: str):
    if not cond:
        raise ShapeMismatch(message)


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           pad: int | None = None) -> Tensor:
    """2-D cross-correlation, zero padding ``pad`` (default ``k // 2``)."""
    _require(x.data.ndim == 4 and w.data.ndim == 4,
             f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    _require(ci == c and k == k2, f"conv2d input {x.shape} incompatible with kernel {w.shape}")
    if b is not None:
        _require(b.shape == (o,), f"conv2d bias {b.shape} does not match {o} outputs")
    if pad is None:
        pad = k // 2
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(wd, k, stride, pad)
    _require(ho > 0 and wo > 0, f"conv2d output empty for input {x.shape}")
    record("conv2d", n * o * c * k * k * ho * wo)

    wmat = w.data.reshape(o, c * k * k)
    if k == 1 and stride == 1 and pad == 0:
        cols = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            dcols = g2 @ wmat
            if k == 1 and stride == 1 and pad == 0:
                gx = dcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
            else:
                dcols = dcols.reshape(n, ho, wo, c, k, k)
                gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += \
                            dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                gx = gxp[:, :, pad : pad + h, pad : pad + wd]
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_node(np.ascontiguousarray(out), parents, backward, "conv2d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    record("relu")
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"add shapes differ: {a.shape} vs {b.shape}")
    record("add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route the gradient to the first maximum."""
    n, c, h, w = x.shape
    _require(h % 2 == 0 and w % 2 == 0, f"maxpool2 needs even spatial size, got {x.shape}")
    record("maxpool2")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return make_node(out, (x,), backward, "maxpool2")


def upsample2_nearest(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    record("upsample2")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_node(out, (x,), backward, "upsample2")


def concat_channels(tensors: list[Tensor]) -> Tensor:
    first = tensors[0].shape
    for t in tensors[1:]:
        _require(t.data.ndim == 4 and t.shape[0] == first[0] and t.shape[2:] == first[2:],
                 f"concat shapes incompatible: {[tt.shape for tt in tensors]}")
    record("concat")
    sizes = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=1))

    return make_node(np.concatenate([t.data for t in tensors], axis=1),
                     tuple(tensors), backward, "concat")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def scale(x: Tensor, factor: float) -> Tensor:
    return make_node(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared residuals over every element; ``target`` is constant."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    _require(pred.shape == target.shape, f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    count = diff.size

    def backward(g):
        return (g * (2.0 / count) * diff,)

    return make_node(np.asarray((diff * diff).sum() / count, dtype=pred.dtype),
                     (pred,), backward, "mse")


def expectation(dmap: Tensor, weights) -> Tensor:
    """Per-joint expectation ``sum_{m,n} W[j,m,n] * D[m,n]``.

    ``dmap`` is ``(N, Hd, Wd)``; ``weights`` is a constant ``(N, J, Hd, Wd)``.
    Returns ``(N, J)``.
    """
    wts = np.asarray(weights, dtype=dmap.dtype)
    _require(dmap.data.ndim == 3 and wts.ndim == 4 and wts.shape[0] == dmap.shape[0]
             and wts.shape[2:] == dmap.shape[1:],
             f"expectation shapes incompatible: {dmap.shape} vs {wts.shape}")
    out = np.einsum("njhw,nhw->nj", wts, dmap.data)

    def backward(g):
        return (np.einsum("njhw,nj->nhw", wts, g),)

    return make_node(out, (dmap,), backward, "expectation")


def huber(residual: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(residual)
    return np.where(a <= delta, 0.5 * residual * residual, delta * (a - 0.5 * delta))


def huber_mean(pred: Tensor, target, delta: float) -> Tensor:
    """Mean Huber loss of ``target - pred`` over every element."""
    target = np.asarray(target, dtype=pred.dtype)
    _require(pred.shape == target.shape, f"huber shapes differ: {pred.shape} vs {target.shape}")
    r = target - pred.data
    count = r.size
    # d/dpred of huber(target - pred)
    slope = np.where(np.abs(r) <= delta, r, delta * np.sign(r))

    def backward(g):
        return (-g * slope / count,)

    return make_node(np.asarray(huber(r, delta).sum() / count, dtype=pred.dtype),
                     (pred,), backward, "huber")


def bilinear_sample(grid: Tensor, qx: Tensor, qy: Tensor) -> Tensor:
    """Sample ``grid`` ``(N, Hd, Wd)`` at per-joint cell coordinates ``(N, J)``.

    Column coordinate ``qx`` pairs with the last axis, ``qy`` with rows.
    Queries are clamped to ``[0, size - 1]``; the clamped part has zero slope.
    """
    n, hd, wd = grid.shape
    _require(qx.shape == qy.shape and qx.shape[0] == n,
             f"query shape {qx.shape}/{qy.shape} incompatible with grid {grid.shape}")
    x = np.clip(qx.data, 0, wd - 1)
    y = np.clip(qy.data, 0, hd - 1)
    x0 = np.minimum(np.floor(x), max(wd - 2, 0)).astype(np.intp)
    y0 = np.minimum(np.floor(y), max(hd - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, wd - 1)
    y1 = np.minimum(y0 + 1, hd - 1)
    fx = x - x0
    fy = y - y0
    b = np.arange(n)[:, None]
    d00 = grid.data[b, y0, x0]
    d01 = grid.data[b, y0, x1]
    d10 = grid.data[b, y1, x0]
    d11 = grid.data[b, y1, x1]
    out = (1 - fy) * ((1 - fx) * d00 + fx * d01) + fy * ((1 - fx) * d10 + fx * d11)
    inside_x = (qx.data > 0) & (qx.data < wd - 1)
    inside_y = (qy.data > 0) & (qy.data < hd - 1)

    def backward(g):
        gg = None
        if grid.requires_grad:
            gg = np.zeros(grid.shape, dtype=g.dtype)
            np.add.at(gg, (b, y0, x0), g * (1 - fy) * (1 - fx))
            np.add.at(gg, (b, y0, x1), g * (1 - fy) * fx)
            np.add.at(gg, (b, y1, x0), g * fy * (1 - fx))
            np.add.at(gg, (b, y1, x1), g * fy * fx)
        gx = g * ((1 - fy) * (d01 - d00) + fy * (d11 - d10)) * inside_x
        gy = g * ((1 - fx) * (d10 - d00) + fx * (d11 - d01)) * inside_y
        return gg, gx, gy

    return make_node(out, (grid, qx, qy), backward, "bilinear_sample")


def total(terms: list[Tensor]) -> Tensor:
    """Sum of scalar tensors."""
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out
