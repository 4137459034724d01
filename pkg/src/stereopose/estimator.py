"""Heatmap targets, 2-D decoding, sparse disparity sampling, the two losses,
and the full network forward pass.

Grid convention everywhere: row index ``m`` pairs with ``v``, column index
``n`` pairs with ``u``; cell ``(m, n)`` of a stride-``s`` grid sits at network
pixel ``(s*m, s*n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffnet import ops
from .diffnet.network import NetConfig, Network
from .diffnet.params import ParamStore
from .diffnet.tensor import Tensor
from .errors import EmptyHeatmap, ShapeMismatch, UnnormalizedTarget

MODES = ("stereo", "mono", "direct2d")
EMPTY_RADIUS = 6.0


@dataclass
class HeatmapTarget:
    maps: np.ndarray          # (..., J, gh, gw)
    normalized: bool
    sigma: float
    scale: np.ndarray         # per-joint A_j, shape (..., J)


def _grid_offsets(u, v, grid_shape, stride):
    gh, gw = grid_shape
    cu = np.asarray(u, dtype=np.float64)[..., None] / stride
    cv = np.asarray(v, dtype=np.float64)[..., None] / stride
    dn = np.arange(gw, dtype=np.float64) - cu      # (..., J, gw)
    dm = np.arange(gh, dtype=np.float64) - cv      # (..., J, gh)
    return dm, dn, cu[..., 0], cv[..., 0]


def make_heatmap_target(labels, grid_shape, stride: int, sigma: float,
                        normalized: bool) -> HeatmapTarget:
    """Gaussian heatmap per joint from ``(u', v', ...)`` labels.

    ``labels`` is ``(J, >=2)`` or ``(N, J, >=2)``. Normalised maps sum to one;
    unnormalised maps peak at exactly 1 on the cell nearest an in-grid joint.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    lab = np.asarray(labels, dtype=np.float64)
    gh, gw = grid_shape
    dm, dn, cu, cv = _grid_offsets(lab[..., 0], lab[..., 1], grid_shape, stride)
    # distance from the joint to the grid rectangle, in cells
    ou = np.maximum(np.maximum(-cu, cu - (gw - 1)), 0.0)
    ov = np.maximum(np.maximum(-cv, cv - (gh - 1)), 0.0)
    outside = np.hypot(ou, ov)
    if np.any(outside > EMPTY_RADIUS * sigma):
        j = np.unravel_index(int(np.argmax(outside)), outside.shape)
        raise EmptyHeatmap(f"joint {j} lies {outside[j]:.2f} cells outside the grid")
    gy = np.exp(-(dm * dm) / (2 * sigma * sigma))
    gx = np.exp(-(dn * dn) / (2 * sigma * sigma))
    maps = gy[..., :, None] * gx[..., None, :]
    if normalized:
        total = maps.sum(axis=(-2, -1))
        if np.any(total <= 0):
            raise EmptyHeatmap("heatmap mass underflowed")
        scale = 1.0 / total
    else:
        peak = maps.max(axis=(-2, -1))
        inside = outside == 0
        scale = np.where(inside, 1.0 / np.where(peak > 0, peak, 1.0), 1.0)
    maps = maps * scale[..., None, None]
    return HeatmapTarget(maps=maps, normalized=normalized, sigma=sigma, scale=scale)


def decode_2d(heatmaps, stride: int, method: str = "argmax", beta: float = 50.0) -> np.ndarray:
    """Per-joint ``(u', v', confidence)`` from ``(..., J, gh, gw)`` heatmaps.

    ``argmax`` takes the first maximal cell in row-major order and refines each
    axis with a parabola through the two axial neighbours; ``soft`` is a
    softmax-weighted mean of cell positions.
    """
    hm = np.asarray(heatmaps, dtype=np.float64)
    gh, gw = hm.shape[-2:]
    flat = hm.reshape(hm.shape[:-2] + (gh * gw,))
    if method == "soft":
        z = beta * (flat - flat.max(axis=-1, keepdims=True))
        w = np.exp(z)
        w /= w.sum(axis=-1, keepdims=True)
        mm, nn = np.divmod(np.arange(gh * gw), gw)
        u = stride * (w * nn).sum(axis=-1)
        v = stride * (w * mm).sum(axis=-1)
        return np.stack([u, v, flat.max(axis=-1)], axis=-1)
    if method != "argmax":
        raise ValueError(f"unknown decoder {method!r}")
    idx = flat.argmax(axis=-1)
    m, n = np.divmod(idx, gw)
    peak = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def refine(pos, size, offset_idx):
        ok = (pos > 0) & (pos < size - 1)
        lo = np.take_along_axis(flat, np.where(ok, idx - offset_idx, idx)[..., None], axis=-1)[..., 0]
        hi = np.take_along_axis(flat, np.where(ok, idx + offset_idx, idx)[..., None], axis=-1)[..., 0]
        curv = lo - 2 * peak + hi
        safe = ok & (curv < 0)
        off = np.where(safe, 0.5 * (lo - hi) / np.where(safe, curv, -1.0), 0.0)
        return np.clip(off, -0.5, 0.5)

    u = stride * (n + refine(n, gw, 1))
    v = stride * (m + refine(m, gh, gw))
    return np.stack([u, v, peak], axis=-1)


def sample_disparity(dmap, u, v, stride: int):
    """Bilinear lookup of the disparity map at network-pixel queries.

    Accepts numpy arrays (``(Hd, Wd)`` with ``(J,)`` queries, or batched) or
    :class:`Tensor` inputs, in which case the result is differentiable with
    respect to the map and both query coordinates.
    """
    if isinstance(dmap, Tensor):
        qx = u if isinstance(u, Tensor) else Tensor(np.asarray(u, dtype=dmap.dtype))
        qy = v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=dmap.dtype))
        return ops.bilinear_sample(dmap, ops.scale(qx, 1.0 / stride), ops.scale(qy, 1.0 / stride))
    d = np.asarray(dmap, dtype=np.float64)
    single = d.ndim == 2
    if single:
        d, u, v = d[None], np.asarray(u)[None], np.asarray(v)[None]
    out = ops.bilinear_sample(Tensor(d), Tensor(np.asarray(u, np.float64) / stride),
                              Tensor(np.asarray(v, np.float64) / stride)).data
    return out[0] if single else out


def loss_uv(heatmaps: list[Tensor], target) -> Tensor:
    """Sum over stacks of the per-stack mean squared heatmap error."""
    maps = target.maps if isinstance(target, HeatmapTarget) else np.asarray(target)
    terms = []
    for h in heatmaps:
        if h.shape != maps.shape:
            raise ShapeMismatch(f"heatmap {h.shape} vs target {maps.shape}")
        terms.append(ops.mse(h, maps.astype(h.dtype, copy=False)))
    return ops.total(terms)


def loss_d(dmap: Tensor, gt, target, delta: float = 1.0) -> Tensor:
    """Mean Huber loss between ground-truth ``d'`` and the heatmap-weighted
    expectation of the disparity map, averaged over joints (and batch)."""
    maps = target.maps if isinstance(target, HeatmapTarget) else np.asarray(target)
    if isinstance(target, HeatmapTarget) and not target.normalized:
        raise UnnormalizedTarget("disparity loss needs normalised heatmaps")
    sums = maps.sum(axis=(-2, -1))
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise UnnormalizedTarget(f"target mass deviates from 1 by {np.abs(sums - 1).max():.3g}")
    gt = np.asarray(gt, dtype=np.float64)
    single = dmap.data.ndim == 2
    if single:
        dmap = ops.reshape(dmap, (1,) + dmap.shape)
        maps = maps[None]
        gt = gt[None]
    expected = ops.expectation(dmap, maps)
    return ops.huber_mean(expected, gt[..., 2], delta)


@dataclass
class Prediction:
    labels: np.ndarray            # (N, J, 3) normalised (u', v', d')
    confidence: np.ndarray        # (N, J)
    heatmaps: list = field(default_factory=list)
    dmap: Tensor | None = None


def to_input(crops, dtype=np.float32) -> Tensor:
    """``(N, H, W, 3)`` or ``(H, W, 3)`` crops in ``[0, 1]`` -> centred NCHW tensor."""
    x = np.asarray(crops)
    if x.ndim == 3:
        x = x[None]
    return Tensor((x.transpose(0, 3, 1, 2) - 0.5).astype(dtype))


class Estimator:
    """A built network plus its parameters, evaluated in one view mode."""

    def __init__(self, cfg: NetConfig, store: ParamStore, net: Network,
                 mode: str = "stereo", decoder: str = "argmax"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.cfg, self.store, self.net = cfg, store, net
        self.mode = mode
        self.decoder = decoder

    def disparity_input(self, p, f_l: Tensor, f_r: Tensor | None) -> Tensor:
        if f_r is None:
            f_r = Tensor(np.zeros(f_l.shape, dtype=f_l.dtype))
        return ops.concat_channels([f_l, f_r])

    def forward(self, left_crops, right_crops, params=None) -> Prediction:
        cfg = self.cfg
        p = self.store.params if params is None else params
        left = left_crops if isinstance(left_crops, Tensor) else to_input(left_crops, self.store.dtype)
        right = right_crops if isinstance(right_crops, Tensor) else to_input(right_crops, self.store.dtype)
        if left.shape[2:] != (cfg.net_h, cfg.net_w) or right.shape != left.shape:
            raise ShapeMismatch(f"crops {left.shape}/{right.shape} do not match "
                                f"network input {cfg.net_h}x{cfg.net_w}")
        f_l = self.net.h_f(p, left)
        heats = self.net.h_uv(p, f_l)
        uvc = decode_2d(heats[-1].data, cfg.heatmap_stride, self.decoder)
        dmap = None
        if self.mode == "direct2d":
            right_uvc = decode_2d(self.net.h_uv(p, self.net.h_f(p, right))[-1].data,
                                  cfg.heatmap_stride, self.decoder)
            d = uvc[..., 0] - right_uvc[..., 0]
        else:
            f_r = self.net.h_f(p, right) if self.mode == "stereo" else None
            dmap = self.net.h_D(p, self.disparity_input(p, f_l, f_r))
            d = sample_disparity(dmap.data, uvc[..., 0], uvc[..., 1], cfg.disparity_map_stride)
        labels = np.stack([uvc[..., 0], uvc[..., 1], d], axis=-1)
        return Prediction(labels=labels, confidence=uvc[..., 2], heatmaps=heats, dmap=dmap)

    def predict(self, left_crops, right_crops, batch_size: int = 32) -> np.ndarray:
        left = np.asarray(left_crops)
        right = np.asarray(right_crops)
        if left.ndim == 3:
            return self.forward(left, right).labels[0]
        outs = [self.forward(left[i:i + batch_size], right[i:i + batch_size]).labels
                for i in range(0, len(left), batch_size)]
        return np.concatenate(outs, axis=0)
