"""Stereo crop preprocessing and label (de)normalisation.

Images are ``(H, W, 3)`` float arrays with intensities in ``[0, 1]``.
Normalised labels are ``(J, 3)`` arrays of ``(u', v', d')`` in network pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateBox

DEFAULT_MARGIN = 0.25


@dataclass(frozen=True)
class CropInit:
    u0: float
    v0: float
    w0: float
    h0: float
    d0: float

    def __post_init__(self):
        if not (self.w0 > 0 and self.h0 > 0):
            raise ValueError(f"crop size must be positive, got {self.w0}x{self.h0}")
        if not all(math.isfinite(x) for x in (self.u0, self.v0, self.d0)):
            raise ValueError("crop parameters must be finite")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.u0, self.v0, self.w0, self.h0, self.d0)

    def shifted_right_box(self) -> "CropInit":
        return replace(self, u0=self.u0 - self.d0)


def sample_bilinear(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear lookup at fractional ``(rows, cols)``; outside pixels read as 0."""
    h, w = image.shape[:2]
    padded = np.zeros((h + 2, w + 2) + image.shape[2:], dtype=np.float64)
    padded[1:-1, 1:-1] = image
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    if image.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    # index -1 and h (resp. w) land in the zero border
    ri0 = np.clip(r0, -1, h).astype(np.intp) + 1
    ri1 = np.clip(r0 + 1, -1, h).astype(np.intp) + 1
    ci0 = np.clip(c0, -1, w).astype(np.intp) + 1
    ci1 = np.clip(c0 + 1, -1, w).astype(np.intp) + 1
    top = (1 - fc) * padded[ri0, ci0] + fc * padded[ri0, ci1]
    bottom = (1 - fc) * padded[ri1, ci0] + fc * padded[ri1, ci1]
    return (1 - fr) * top + fr * bottom


def rotation_matrix(angle_deg: float) -> np.ndarray:
    """Clockwise rotation as seen in an image whose rows grow downwards."""
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def crop_coordinates(init: CropInit, net_w: int, net_h: int,
                     rotation_deg: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Source ``(rows, cols)`` sampled by each network pixel of the crop."""
    jj, ii = np.meshgrid(np.arange(net_w, dtype=np.float64),
                         np.arange(net_h, dtype=np.float64))
    if rotation_deg:
        cx, cy = net_w / 2.0, net_h / 2.0
        inv = rotation_matrix(rotation_deg).T
        dx, dy = jj - cx, ii - cy
        jj = inv[0, 0] * dx + inv[0, 1] * dy + cx
        ii = inv[1, 0] * dx + inv[1, 1] * dy + cy
    cols = init.u0 + jj * (init.w0 / net_w)
    rows = init.v0 + ii * (init.h0 / net_h)
    return rows, cols


def crop(image: np.ndarray, init: CropInit, net_w: int, net_h: int,
         rotation_deg: float = 0.0) -> np.ndarray:
    rows, cols = crop_coordinates(init, net_w, net_h, rotation_deg)
    return sample_bilinear(image, rows, cols).astype(image.dtype, copy=False)


def preprocess_pair(left: np.ndarray, right: np.ndarray, init: CropInit,
                    net_w: int, net_h: int) -> tuple[np.ndarray, np.ndarray]:
    """Crop the left view with the box and the right view with the box shifted by ``-d0``."""
    if net_w < 8 or net_h < 8:
        raise ValueError("network input must be at least 8x8")
    return (crop(left, init, net_w, net_h),
            crop(right, init.shifted_right_box(), net_w, net_h))


def normalize_labels(gt, init: CropInit, net_w: int, net_h: int) -> np.ndarray:
    uvd = np.asarray(gt, dtype=np.float64)
    out = np.empty_like(uvd)
    out[:, 0] = (uvd[:, 0] - init.u0) / init.w0 * net_w
    out[:, 1] = (uvd[:, 1] - init.v0) / init.h0 * net_h
    out[:, 2] = (uvd[:, 2] - init.d0) / init.w0 * net_w
    return out


def denormalize(pred, init: CropInit, net_w: int, net_h: int) -> np.ndarray:
    uvd = np.asarray(pred, dtype=np.float64)
    out = np.empty_like(uvd)
    out[:, 0] = uvd[:, 0] / net_w * init.w0 + init.u0
    out[:, 1] = uvd[:, 1] / net_h * init.h0 + init.v0
    out[:, 2] = uvd[:, 2] / net_w * init.w0 + init.d0
    return out


def rotate_labels(labels, angle_deg: float, net_w: int, net_h: int) -> np.ndarray:
    """Rotate ``(u', v')`` about the crop centre; disparity is left untouched."""
    out = np.array(labels, dtype=np.float64)
    rot = rotation_matrix(angle_deg)
    cx, cy = net_w / 2.0, net_h / 2.0
    dx, dy = out[:, 0] - cx, out[:, 1] - cy
    out[:, 0] = rot[0, 0] * dx + rot[0, 1] * dy + cx
    out[:, 1] = rot[1, 0] * dx + rot[1, 1] * dy + cy
    return out


def init_from_joints(joints, margin: float = DEFAULT_MARGIN) -> CropInit:
    """Square box around the joints' ``(u, v)``, padded by ``margin`` of its side.

    ``d0`` is the mean joint disparity.
    """
    uvd = np.asarray(joints, dtype=np.float64)
    if uvd.ndim != 2 or uvd.shape[0] < 1:
        raise ValueError("need at least one joint")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    lo = uvd[:, :2].min(axis=0)
    hi = uvd[:, :2].max(axis=0)
    side = float((hi - lo).max())
    if side <= 0:
        raise DegenerateBox("all joints coincide; bounding box has zero size")
    center = (lo + hi) / 2.0
    side = side * (1.0 + 2.0 * margin)
    return CropInit(u0=float(center[0] - side / 2.0), v0=float(center[1] - side / 2.0),
                    w0=side, h0=side, d0=float(uvd[:, 2].mean()))
