"""Rectified pinhole stereo camera model.

Joint sets are plain ``(J, 3)`` float64 arrays: columns ``(u, v, d)`` in
image/disparity space or ``(x, y, z)`` in millimetres in the left camera
frame. Pixel centres sit on integer coordinates, 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonPositiveDepth, NonPositiveDisparity, RigFileError

RIG_KEYS = ("fx", "fy", "tx", "ty", "baseline_mm", "width", "height")


@dataclass(frozen=True)
class StereoRig:
    fx: float
    fy: float
    tx: float
    ty: float
    baseline: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0 and self.baseline > 0):
            raise ValueError("fx, fy and baseline must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not (0 <= self.tx < self.width and 0 <= self.ty < self.height):
            raise ValueError("principal point outside the image")

    def disparity_of_depth(self, z):
        return self.fx * self.baseline / np.asarray(z, dtype=np.float64)


DEFAULT_RIG = StereoRig(fx=500.0, fy=500.0, tx=160.0, ty=120.0,
                        baseline=60.0, width=320, height=240)


def _as_joints(joints) -> np.ndarray:
    arr = np.asarray(joints, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (J, 3) joints, got shape {arr.shape}")
    return arr


def uvd_to_xyz(rig: StereoRig, joints) -> np.ndarray:
    """Back-project ``(u, v, d)`` rows to left-camera ``(x, y, z)`` in mm."""
    uvd = _as_joints(joints)
    u, v, d = uvd[:, 0], uvd[:, 1], uvd[:, 2]
    bad = np.flatnonzero(~(d > 0))
    if bad.size:
        raise NonPositiveDisparity(int(bad[0]), float(d[bad[0]]))
    z = rig.fx * rig.baseline / d
    x = (u - rig.tx) / rig.fx * z
    y = (v - rig.ty) / rig.fy * z
    return np.stack([x, y, z], axis=1)


def xyz_to_uvd(rig: StereoRig, joints) -> np.ndarray:
    xyz = _as_joints(joints)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    bad = np.flatnonzero(~(z > 0))
    if bad.size:
        raise NonPositiveDepth(int(bad[0]), float(z[bad[0]]))
    d = rig.fx * rig.baseline / z
    u = x * rig.fx / z + rig.tx
    v = y * rig.fy / z + rig.ty
    return np.stack([u, v, d], axis=1)


def project_right(rig: StereoRig, joints) -> np.ndarray:
    """Right-view ``(u_r, v_r)`` of each joint; rows are shared by rectification."""
    uvd = _as_joints(joints)
    return np.stack([uvd[:, 0] - uvd[:, 2], uvd[:, 1].copy()], axis=1)


def format_rig(rig: StereoRig) -> str:
    values = (rig.fx, rig.fy, rig.tx, rig.ty, rig.baseline, rig.width, rig.height)
    lines = []
    for key, value in zip(RIG_KEYS, values):
        text = str(int(value)) if key in ("width", "height") else repr(float(value))
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def parse_rig(text: str) -> StereoRig:
    found: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise RigFileError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in RIG_KEYS:
            raise RigFileError(f"line {lineno}: unknown key {key!r}")
        if key in found:
            raise RigFileError(f"line {lineno}: duplicate key {key!r}")
        found[key] = value
    missing = [k for k in RIG_KEYS if k not in found]
    if missing:
        raise RigFileError(f"missing keys: {', '.join(missing)}")
    try:
        return StereoRig(
            fx=float(found["fx"]), fy=float(found["fy"]),
            tx=float(found["tx"]), ty=float(found["ty"]),
            baseline=float(found["baseline_mm"]),
            width=int(found["width"]), height=int(found["height"]),
        )
    except ValueError as exc:
        raise RigFileError(str(exc)) from exc


def load_rig(path) -> StereoRig:
    return parse_rig(Path(path).read_text())


def save_rig(rig: StereoRig, path) -> None:
    Path(path).write_text(format_rig(rig))
