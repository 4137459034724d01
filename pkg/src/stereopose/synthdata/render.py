"""Analytic ray-capsule stereo renderer with hard-alpha compositing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import HandOutOfFrustum
from ..geometry import StereoRig, project_right, xyz_to_uvd
from .hand import HandSkeleton, SceneParams, default_skeleton

AMBIENT = 0.35


@dataclass
class StereoSample:
    left: np.ndarray           # (H, W, 3) float32, multiples of 1/255
    right: np.ndarray
    gt: np.ndarray             # (J, 3) global (u, v, d)
    rig: StereoRig
    sample_id: int
    xyz: np.ndarray | None = field(default=None, repr=False)


def quantize(image: np.ndarray) -> np.ndarray:
    """Round to 8-bit levels, returned as float32 in ``[0, 1]``."""
    return to_uint8(image).astype(np.float32) / np.float32(255)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def value_noise(rng: np.random.Generator, height: int, width: int, octaves: int = 4) -> np.ndarray:
    """Smooth coloured noise in ``[0, 1]``, ``(height, width, 3)``."""
    out = np.zeros((height, width, 3))
    amp_total = 0.0
    for o in range(octaves):
        cells = 4 * 2 ** o
        gh = max(2, int(np.ceil(height / width * cells)) + 2)
        gw = cells + 2
        grid = rng.random((gh, gw, 3))
        ys = np.linspace(0, gh - 1.001, height)
        xs = np.linspace(0, gw - 1.001, width)
        y0, x0 = ys.astype(int), xs.astype(int)
        fy = (ys - y0)[:, None, None]
        fx = (xs - x0)[None, :, None]
        fy = fy * fy * (3 - 2 * fy)
        fx = fx * fx * (3 - 2 * fx)
        a = grid[y0][:, x0]
        b = grid[y0][:, x0 + 1]
        c = grid[y0 + 1][:, x0]
        d = grid[y0 + 1][:, x0 + 1]
        amp = 0.5 ** o
        out += amp * ((1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d))
        amp_total += amp
    return out / amp_total


def background_pair(seed: int, disparity: float, rig: StereoRig) -> tuple[np.ndarray, np.ndarray]:
    """Procedural stereo background: a fronto-parallel plane at ``disparity``."""
    rng = np.random.default_rng(seed)
    shift = int(round(disparity))
    wide = value_noise(rng, rig.height, rig.width + shift)
    # a point at column c of the plane appears at c in the left view and c - shift in the right
    return quantize(wide[:, :rig.width]), quantize(wide[:, shift:shift + rig.width])


def intersect_capsules(origin, dirs, a, b, r):
    """Nearest hit of each ray with a set of capsules.

    ``origin`` (3,), ``dirs`` (P, 3) unit vectors, capsule arrays ``(K, 3)``
    and ``(K,)``. Returns ``t`` (P,) (``inf`` for misses) and unit normals (P, 3).
    """
    ba = b - a                                   # (K, 3)
    oa = origin[None, :] - a                     # (K, 3)
    baba = np.einsum("kc,kc->k", ba, ba)
    bard = dirs @ ba.T                           # (P, K)
    baoa = np.einsum("kc,kc->k", ba, oa)
    rdoa = dirs @ oa.T
    oaoa = np.einsum("kc,kc->k", oa, oa)
    big = np.full(bard.shape, np.inf)

    qa = baba - bard * bard
    qb = baba * rdoa - baoa * bard
    qc = baba * oaoa - baoa * baoa - r * r * baba
    disc = qb * qb - qa * qc
    with np.errstate(invalid="ignore", divide="ignore"):
        t_body = (-qb - np.sqrt(np.maximum(disc, 0))) / qa
        y = baoa + t_body * bard
    body_ok = (disc >= 0) & (qa > 1e-12) & (y > 0) & (y < baba) & (t_body > 0)
    t = np.where(body_ok, t_body, big)

    for end in (a, b):
        oc = origin[None, :] - end               # (K, 3)
        cb = dirs @ oc.T
        cc = np.einsum("kc,kc->k", oc, oc) - r * r
        h = cb * cb - cc
        with np.errstate(invalid="ignore"):
            t_cap = -cb - np.sqrt(np.maximum(h, 0))
        cap_ok = (h > 0) & (t_cap > 0)
        t = np.where(cap_ok & (t_cap < t), t_cap, t)

    k = np.argmin(t, axis=1)
    rows = np.arange(len(dirs))
    t_hit = t[rows, k]
    hit = np.isfinite(t_hit)
    p = origin[None, :] + dirs * np.where(hit, t_hit, 0)[:, None]
    pa = p - a[k]
    bak = ba[k]
    denom = np.where(baba[k] > 0, baba[k], 1.0)
    hh = np.clip(np.einsum("pc,pc->p", pa, bak) / denom, 0, 1)
    normal = (pa - bak * hh[:, None]) / r[k][:, None]
    return t_hit, normal


def _render_view(origin, rig: StereoRig, joints, capsules, scene: SceneParams, background):
    a, b, r = capsules
    image = background.astype(np.float64).copy()
    # only rays near the projected capsules can hit anything
    pts = np.concatenate([a, b])
    zs = pts[:, 2]
    us = (pts[:, 0] - origin[0]) * rig.fx / zs + rig.tx
    vs = (pts[:, 1] - origin[1]) * rig.fy / zs + rig.ty
    pad = np.max(np.concatenate([r, r]) * rig.fx / zs) + 2
    u_lo = int(max(0, np.floor(us.min() - pad)))
    u_hi = int(min(rig.width - 1, np.ceil(us.max() + pad)))
    v_lo = int(max(0, np.floor(vs.min() - pad)))
    v_hi = int(min(rig.height - 1, np.ceil(vs.max() + pad)))
    if u_lo > u_hi or v_lo > v_hi:
        return image, np.zeros(image.shape[:2], bool)
    jj, ii = np.meshgrid(np.arange(u_lo, u_hi + 1, dtype=np.float64),
                         np.arange(v_lo, v_hi + 1, dtype=np.float64))
    dirs = np.stack([(jj - rig.tx) / rig.fx, (ii - rig.ty) / rig.fy, np.ones_like(jj)], axis=-1)
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, normal = intersect_capsules(origin, dirs, a, b, r)
    hit = np.isfinite(t)
    shade = AMBIENT + (1 - AMBIENT) * np.clip(normal @ scene.light, 0, None)
    color = np.clip(shade[:, None] * scene.albedo[None, :], 0, 1)
    patch = image[v_lo:v_hi + 1, u_lo:u_hi + 1].reshape(-1, 3)
    patch[hit] = color[hit]
    image[v_lo:v_hi + 1, u_lo:u_hi + 1] = patch.reshape(v_hi - v_lo + 1, u_hi - u_lo + 1, 3)
    mask = np.zeros(image.shape[:2], bool)
    mask[v_lo:v_hi + 1, u_lo:u_hi + 1] = hit.reshape(v_hi - v_lo + 1, u_hi - u_lo + 1)
    return image, mask


def frustum_labels(rig: StereoRig, xyz: np.ndarray) -> np.ndarray:
    """``(u, v, d)`` of ``xyz``; HandOutOfFrustum if any joint misses either image."""
    if np.any(xyz[:, 2] <= 0):
        raise HandOutOfFrustum("hand behind the camera")
    gt = xyz_to_uvd(rig, xyz)
    right_uv = project_right(rig, gt)
    for name, uv in (("left", gt[:, :2]), ("right", right_uv)):
        inside = (uv[:, 0] >= 0) & (uv[:, 0] <= rig.width - 1) & \
                 (uv[:, 1] >= 0) & (uv[:, 1] <= rig.height - 1)
        if not inside.all():
            raise HandOutOfFrustum(f"joint {int(np.flatnonzero(~inside)[0])} outside the {name} image")
    return gt


def render_pair(scene: SceneParams, skeleton: HandSkeleton | None, rig: StereoRig,
                background: tuple[np.ndarray, np.ndarray] | None = None,
                sample_id: int = 0, return_masks: bool = False):
    """Render the posed hand into both rectified views over ``background``.

    The right camera shares the left intrinsics and sits ``baseline`` mm
    along +x, so a point's right-view column is ``u - d``.
    """
    skeleton = skeleton or default_skeleton()
    xyz = skeleton.pose(scene)
    gt = frustum_labels(rig, xyz)
    if background is None:
        background = background_pair(scene.background_seed, scene.background_disparity, rig)
    for bg in background:
        if bg.shape != (rig.height, rig.width, 3):
            raise ValueError(f"background shape {bg.shape} does not match the rig")
    caps = skeleton.capsules(xyz)
    left, lmask = _render_view(np.zeros(3), rig, xyz, caps, scene, background[0])
    right, rmask = _render_view(np.array([rig.baseline, 0.0, 0.0]), rig, xyz, caps, scene,
                                background[1])
    sample = StereoSample(left=quantize(left), right=quantize(right), gt=gt, rig=rig,
                          sample_id=sample_id, xyz=xyz)
    if return_masks:
        return sample, (lmask, rmask)
    return sample
