"""Procedural 21-joint hand skeleton and random scene parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import DEFAULT_RIG, StereoRig

NUM_JOINTS = 21
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
JOINT_NAMES = ["wrist"] + [f"{f}_{p}" for f in FINGERS for p in ("mcp", "pip", "dip", "tip")]

# Hand-local frame in mm: wrist at the origin, palm in the z = 0 plane,
# fingers extending towards -y.
_BASES = np.array([[-30.0, -22.0], [-22.0, -80.0], [-4.0, -85.0], [14.0, -80.0], [30.0, -72.0]])
_DIRECTIONS = np.array([[-0.62, -0.78], [-0.08, -1.0], [0.0, -1.0], [0.08, -1.0], [0.18, -1.0]])
_LENGTHS = np.array([[32.0, 28.0, 24.0], [40.0, 24.0, 20.0], [44.0, 28.0, 22.0],
                     [41.0, 27.0, 21.0], [32.0, 20.0, 18.0]])
_RADII = np.array([[10.0, 9.0, 8.0], [8.5, 8.0, 7.0], [9.0, 8.0, 7.0],
                   [8.5, 7.5, 6.5], [7.5, 6.5, 6.0]])
_PALM_RADIUS = np.array([11.0, 11.0, 11.0, 11.0, 10.0])


@dataclass(frozen=True)
class HandSkeleton:
    """Rest pose of the hand; joint 0 is the wrist and every other joint's
    parent precedes it. ``radii[k]`` is the radius of the bone ending at joint
    ``k`` (``radii[0]`` unused). ``extra`` lists palm-filling capsules
    ``(i, j, radius)`` that are not kinematic bones."""

    rest: np.ndarray = field(repr=False)
    parents: tuple[int, ...]
    radii: np.ndarray = field(repr=False)
    extra: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        if self.rest.shape != (NUM_JOINTS, 3) or len(self.parents) != NUM_JOINTS:
            raise ValueError("skeleton must have exactly 21 joints")
        if self.parents[0] != -1 or any(not 0 <= p < k for k, p in enumerate(self.parents) if k):
            raise ValueError("parents must form a tree rooted at the wrist")
        lengths = np.linalg.norm(self.rest[1:] - self.rest[list(self.parents[1:])], axis=1)
        if np.any(lengths <= 0):
            raise ValueError("bone lengths must be positive")

    def pose(self, scene: "SceneParams") -> np.ndarray:
        return pose_joints(scene, self)

    def capsules(self, joints: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Endpoints ``(K, 3)``, ``(K, 3)`` and radii ``(K,)`` of every capsule."""
        a = [joints[p] for p in self.parents[1:]]
        b = [joints[k] for k in range(1, NUM_JOINTS)]
        r = list(self.radii[1:])
        for i, j, rad in self.extra:
            a.append(joints[i])
            b.append(joints[j])
            r.append(rad)
        return np.array(a), np.array(b), np.array(r)


def default_skeleton() -> HandSkeleton:
    rest = np.zeros((NUM_JOINTS, 3))
    parents = [-1]
    radii = np.zeros(NUM_JOINTS)
    for f in range(5):
        base = 1 + 4 * f
        d = _DIRECTIONS[f] / np.linalg.norm(_DIRECTIONS[f])
        rest[base, :2] = _BASES[f]
        parents.append(0)
        radii[base] = _PALM_RADIUS[f]
        for k in range(3):
            rest[base + k + 1, :2] = rest[base + k, :2] + d * _LENGTHS[f, k]
            parents.append(base + k)
            radii[base + k + 1] = _RADII[f, k]
    mcps = [5, 9, 13, 17]
    extra = tuple((a, b, 10.0) for a, b in zip(mcps, mcps[1:])) + ((1, 5, 10.0),)
    return HandSkeleton(rest=rest, parents=tuple(parents), radii=radii, extra=extra)


@dataclass(frozen=True)
class SphereSkeleton:
    """Degenerate skeleton: one sphere at the wrist (test fixture for rendering)."""

    radius: float

    def pose(self, scene: "SceneParams") -> np.ndarray:
        return np.repeat(np.asarray(scene.translation, dtype=np.float64)[None, :], NUM_JOINTS, axis=0)

    def capsules(self, joints):
        c = joints[:1]
        return c.copy(), c.copy(), np.array([self.radius])


@dataclass(frozen=True)
class SceneLimits:
    depth_range: tuple[float, float] = (300.0, 900.0)
    flexion_min: tuple[float, float, float] = (0.0, 0.0, 0.0)
    flexion_max: tuple[float, float, float] = (1.3, 1.5, 1.1)
    roll_range: float = np.pi / 3      # in-plane rotation, +/- radians
    tilt_range: float = np.pi / 5      # out-of-plane yaw/pitch, +/- radians
    scale_range: tuple[float, float] = (0.85, 1.15)
    center_box: tuple[float, float] = (0.3, 0.7)   # fraction of the image for the hand centre

    def depth_ok(self, z: float) -> bool:
        return self.depth_range[0] <= z <= self.depth_range[1]


@dataclass(frozen=True)
class SceneParams:
    translation: np.ndarray          # wrist position in left-camera mm
    rotation: np.ndarray             # (roll, pitch, yaw) radians
    flexion: np.ndarray              # (5, 3) radians: MCP, PIP, DIP per finger
    hand_scale: float
    albedo: np.ndarray               # rgb in [0, 1]
    light: np.ndarray                # unit vector towards the light
    background_seed: int
    background_disparity: float
    seed: int


def rotation_from_angles(angles) -> np.ndarray:
    roll, pitch, yaw = angles
    cz, sz = np.cos(roll), np.sin(roll)
    cx, sx = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    return ry @ rx @ rz


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + s * k + (1 - c) * (k @ k)


def articulate(skeleton: HandSkeleton, flexion) -> np.ndarray:
    """Rest pose with each finger curled about its lateral axis, in the hand frame."""
    flex = np.asarray(flexion, dtype=np.float64)
    joints = skeleton.rest.copy()
    normal = np.array([0.0, 0.0, 1.0])
    for f in range(5):
        base = 1 + 4 * f
        chain = skeleton.rest[base:base + 4]
        direction = chain[1] - chain[0]
        direction /= np.linalg.norm(direction)
        lateral = np.cross(normal, direction)
        lateral /= np.linalg.norm(lateral)
        angle = 0.0
        for k in range(3):
            angle += flex[f, k]
            seg = chain[k + 1] - chain[k]
            joints[base + k + 1] = joints[base + k] + _axis_rotation(lateral, angle) @ seg
    return joints


def pose_joints(scene: SceneParams, skeleton: HandSkeleton | None = None) -> np.ndarray:
    """Posed ``(21, 3)`` joints in left-camera millimetres."""
    skeleton = skeleton or default_skeleton()
    local = articulate(skeleton, scene.flexion) * scene.hand_scale
    return local @ rotation_from_angles(scene.rotation).T + scene.translation


def sample_scene(seed, limits: SceneLimits = SceneLimits(), rig: StereoRig = DEFAULT_RIG,
                 skeleton: HandSkeleton | None = None) -> SceneParams:
    """Deterministic random scene for ``seed`` (an int or a sequence of ints).

    The wrist depth lies in ``limits.depth_range``; the hand centroid projects
    inside ``limits.center_box`` of the left image, and so does the wrist.
    """
    rng = np.random.default_rng(seed)
    skeleton = skeleton or default_skeleton()
    lo, hi = np.asarray(limits.flexion_min), np.asarray(limits.flexion_max)
    flexion = lo + (hi - lo) * rng.random((5, 3))
    rotation = np.array([rng.uniform(-limits.roll_range, limits.roll_range),
                         rng.uniform(-limits.tilt_range, limits.tilt_range),
                         rng.uniform(-limits.tilt_range, limits.tilt_range)])
    scale = rng.uniform(*limits.scale_range)
    albedo = np.array([rng.uniform(0.45, 0.95), rng.uniform(0.3, 0.75), rng.uniform(0.2, 0.65)])
    light = rng.normal(size=3)
    light[2] = -abs(light[2]) - 0.5
    light /= np.linalg.norm(light)
    bg_seed = int(rng.integers(0, 2**31 - 1))
    bg_disp = float(rng.uniform(4.0, 16.0))
    # Disparity is drawn uniformly so that near hands are not underrepresented.
    d_lo = rig.fx * rig.baseline / limits.depth_range[1]
    d_hi = rig.fx * rig.baseline / limits.depth_range[0]
    rot = rotation_from_angles(rotation)
    local = articulate(skeleton, flexion) * scale @ rot.T
    centroid = local.mean(axis=0)
    c0, c1 = limits.center_box
    for _ in range(1000):
        z = rig.fx * rig.baseline / rng.uniform(d_lo, d_hi)
        u = rng.uniform(c0, c1) * rig.width
        v = rng.uniform(c0, c1) * rig.height
        zc = z + centroid[2]
        if zc <= 0:
            continue
        center = np.array([(u - rig.tx) / rig.fx * zc, (v - rig.ty) / rig.fy * zc, zc])
        wrist = center - centroid
        if not limits.depth_ok(wrist[2]):
            continue
        wu = wrist[0] * rig.fx / wrist[2] + rig.tx
        wv = wrist[1] * rig.fy / wrist[2] + rig.ty
        if 0 <= wu < rig.width and 0 <= wv < rig.height:
            break
    else:
        raise RuntimeError("could not place the hand inside the depth range")
    return SceneParams(translation=wrist, rotation=rotation, flexion=flexion, hand_scale=scale,
                       albedo=albedo, light=light, background_seed=bg_seed,
                       background_disparity=bg_disp, seed=_seed_id(seed))


def _seed_id(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def perturb_scene(scene: SceneParams, rng: np.random.Generator, limits: SceneLimits,
                  max_translation: float, max_flexion: float, max_rotation: float) -> SceneParams:
    """One bounded random-walk step; flexion is clipped to ``limits``."""
    step = rng.uniform(-max_translation, max_translation, size=3)
    flex = scene.flexion + rng.uniform(-max_flexion, max_flexion, size=(5, 3))
    flex = np.clip(flex, limits.flexion_min, limits.flexion_max)
    rot = scene.rotation + rng.uniform(-max_rotation, max_rotation, size=3)
    return SceneParams(translation=scene.translation + step, rotation=rot, flexion=flex,
                       hand_scale=scene.hand_scale, albedo=scene.albedo, light=scene.light,
                       background_seed=scene.background_seed,
                       background_disparity=scene.background_disparity, seed=scene.seed)
