"""Crop-initialisation jitter policy for the two training stages."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..errors import IllegalAugmentation
from ..roi import CropInit

STAGES = ("2d", "3d")
PROTOCOLS = ("frame", "track")

ROTATE_DEG = 20.0
SHIFT_UV = 0.20
SHIFT_D = 0.10
SCALE = 0.20

# (stage, protocol) -> (rotate, shift_uv, shift_d, scale)
POLICY_TABLE = {
    ("2d", "frame"): (True, False, False, True),
    ("2d", "track"): (True, True, False, True),
    ("3d", "frame"): (False, False, False, True),
    ("3d", "track"): (False, False, True, True),
}


@dataclass(frozen=True)
class AugPolicy:
    stage: str
    protocol: str
    shift_uv_override: bool | None = None

    def __post_init__(self):
        if self.stage not in STAGES or self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown policy condition {self.stage}/{self.protocol}")

    @property
    def switches(self) -> tuple[bool, bool, bool, bool]:
        rotate, shift_uv, shift_d, scale = POLICY_TABLE[(self.stage, self.protocol)]
        if self.shift_uv_override is not None:
            shift_uv = self.shift_uv_override
        return rotate, shift_uv, shift_d, scale

    @property
    def rotate(self) -> bool:
        return self.switches[0]

    @property
    def shift_uv(self) -> bool:
        return self.switches[1]

    @property
    def shift_d(self) -> bool:
        return self.switches[2]

    @property
    def scale(self) -> bool:
        return self.switches[3]


def augment(init: CropInit, policy: AugPolicy, rng, force_rotation: float | None = None
            ) -> tuple[CropInit, float | None]:
    """Jitter a ground-truth crop initialisation according to ``policy``.

    Shifts are fractions of ``(w0, h0)`` and ``d0``; scaling is about the box
    centre and keeps the box square. Returns the new init and the clockwise
    rotation in degrees for the left crop, or ``None`` when rotation is off.
    """
    if force_rotation is not None and not policy.rotate:
        raise IllegalAugmentation(
            f"rotation is not allowed in stage {policy.stage}: it breaks the stereo geometry")
    u0, v0, w0, h0, d0 = init.as_tuple()
    rotation = None
    if policy.rotate:
        rotation = force_rotation if force_rotation is not None else \
            float(rng.uniform(-ROTATE_DEG, ROTATE_DEG))
    if policy.shift_uv:
        u0 += float(rng.uniform(-SHIFT_UV, SHIFT_UV)) * w0
        v0 += float(rng.uniform(-SHIFT_UV, SHIFT_UV)) * h0
    if policy.shift_d:
        d0 += float(rng.uniform(-SHIFT_D, SHIFT_D)) * d0
    if policy.scale:
        factor = 1.0 + float(rng.uniform(-SCALE, SCALE))
    if policy.scale and factor != 1.0:
        cu, cv = u0 + w0 / 2, v0 + h0 / 2
        w0, h0 = w0 * factor, h0 * factor
        u0, v0 = cu - w0 / 2, cv - h0 / 2
    return replace(init, u0=u0, v0=v0, w0=w0, h0=h0, d0=d0), rotation
