"""Dataset generation and on-disk layout.

Directory layout::

    rig.cfg                 rig in ``key = value`` form
    NNNNNN_l.ppm            left view, binary P6, maxval 255
    NNNNNN_r.ppm            right view
    annotations.csv         ``id,j,u,v,d``, one row per joint per sample
    tracks.csv              optional ``sequence,frame,id`` for tracking sequences
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..errors import CorruptDataset, HandOutOfFrustum, RigFileError
from ..geometry import DEFAULT_RIG, StereoRig, format_rig, load_rig
from .hand import (NUM_JOINTS, SceneLimits, SceneParams, default_skeleton, perturb_scene,
                   pose_joints, sample_scene)
from .render import StereoSample, background_pair, frustum_labels, render_pair, to_uint8

MAX_ATTEMPTS = 200


def load_backgrounds(directory, rig: StereoRig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Background pairs ``NAME_l.ppm`` / ``NAME_r.ppm`` from a directory, sorted by name."""
    directory = Path(directory)
    lefts = sorted(directory.glob("*_l.ppm"))
    if not lefts:
        raise CorruptDataset(f"no *_l.ppm background images in {directory}")
    pairs = []
    for left in lefts:
        right = left.with_name(left.name[:-6] + "_r.ppm")
        try:
            pair = (read_ppm(left), read_ppm(right))
        except (OSError, ValueError) as exc:
            raise CorruptDataset(f"background {left.name[:-6]}: {exc}") from exc
        for img in pair:
            if img.shape != (rig.height, rig.width, 3):
                raise CorruptDataset(f"background {left.name[:-6]} is {img.shape[1]}x{img.shape[0]}, "
                                     f"rig says {rig.width}x{rig.height}")
        pairs.append(pair)
    return pairs


def _pick_background(scene, backgrounds):
    if not backgrounds:
        return None
    return backgrounds[scene.background_seed % len(backgrounds)]


def render_sample(seed: int, sample_id: int, rig: StereoRig = DEFAULT_RIG,
                  limits: SceneLimits = SceneLimits(), backgrounds=None) -> StereoSample:
    """Render sample ``sample_id``; rejected scenes are redrawn deterministically.

    ``backgrounds`` optionally replaces the procedural backgrounds with a list
    of image pairs; the scene's background selector picks one.
    """
    scene = accepted_scene(seed, sample_id, rig, limits)
    return render_pair(scene, None, rig, _pick_background(scene, backgrounds), sample_id=sample_id)


def accepted_scene(seed: int, sample_id: int, rig: StereoRig = DEFAULT_RIG,
                   limits: SceneLimits = SceneLimits()) -> SceneParams:
    """The scene :func:`render_sample` renders, found without rendering."""
    skeleton = default_skeleton()
    for attempt in range(MAX_ATTEMPTS):
        scene = sample_scene([seed, sample_id, attempt], limits, rig, skeleton)
        try:
            frustum_labels(rig, pose_joints(scene, skeleton))
            return scene
        except HandOutOfFrustum:
            continue
    raise RuntimeError(f"sample {sample_id}: no scene fits the image after {MAX_ATTEMPTS} draws")


def generate_dataset(count: int, seed: int, rig: StereoRig = DEFAULT_RIG,
                     limits: SceneLimits = SceneLimits(), start_id: int = 0,
                     threads: int = 1, backgrounds=None) -> list[StereoSample]:
    ids = range(start_id, start_id + count)
    if threads <= 1:
        return [render_sample(seed, i, rig, limits, backgrounds) for i in ids]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda i: render_sample(seed, i, rig, limits, backgrounds), ids))


def generate_sequence(seed: int, frames: int, rig: StereoRig = DEFAULT_RIG,
                      limits: SceneLimits = SceneLimits(), start_id: int = 0,
                      max_translation: float = 8.0, max_flexion: float = 0.08,
                      max_rotation: float = 0.04, backgrounds=None) -> list[StereoSample]:
    """A tracking sequence: a bounded random walk on one scene over a static background.

    Steps that push the hand out of either view are redrawn.
    """
    rng = np.random.default_rng([seed, start_id, 0x5E0])
    first = None
    for attempt in range(MAX_ATTEMPTS):
        scene = sample_scene([seed, start_id, attempt], limits, rig)
        try:
            background = (_pick_background(scene, backgrounds)
                          or background_pair(scene.background_seed, scene.background_disparity, rig))
            first = render_pair(scene, None, rig, background, sample_id=start_id)
            break
        except HandOutOfFrustum:
            continue
    if first is None:
        raise RuntimeError("could not place the first frame")
    out = [first]
    for t in range(1, frames):
        for _ in range(MAX_ATTEMPTS):
            nxt = perturb_scene(scene, rng, limits, max_translation, max_flexion, max_rotation)
            if not limits.depth_ok(nxt.translation[2]):
                continue
            try:
                sample = render_pair(nxt, None, rig, background, sample_id=start_id + t)
            except HandOutOfFrustum:
                continue
            scene = nxt
            out.append(sample)
            break
        else:
            raise RuntimeError(f"random walk stuck at frame {t}")
    return out


def write_ppm(path, image: np.ndarray) -> None:
    data = to_uint8(image)
    h, w = data.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError("only binary P6 images with maxval 255 are supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = raw[pos:]
    if len(body) != w * h * 3:
        raise ValueError(f"PPM body has {len(body)} bytes, expected {w * h * 3}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float32) / np.float32(255)


def _image_names(sample_id: int) -> tuple[str, str]:
    return f"{sample_id:06d}_l.ppm", f"{sample_id:06d}_r.ppm"


def write_dataset(samples: list[StereoSample], directory, tracks: list[list[int]] | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not samples:
        raise ValueError("no samples to write")
    rig = samples[0].rig
    if any(s.rig != rig for s in samples):
        raise ValueError("all samples in a dataset must share one rig")
    (directory / "rig.cfg").write_text(format_rig(rig))
    rows = io.StringIO()
    rows.write("id,j,u,v,d\n")
    for s in sorted(samples, key=lambda s: s.sample_id):
        left_name, right_name = _image_names(s.sample_id)
        write_ppm(directory / left_name, s.left)
        write_ppm(directory / right_name, s.right)
        for j, (u, v, d) in enumerate(s.gt):
            rows.write(f"{s.sample_id},{j},{float(u)!r},{float(v)!r},{float(d)!r}\n")
    (directory / "annotations.csv").write_text(rows.getvalue())
    if tracks is not None:
        lines = ["sequence,frame,id"]
        for k, ids in enumerate(tracks):
            lines.extend(f"{k},{t},{i}" for t, i in enumerate(ids))
        (directory / "tracks.csv").write_text("\n".join(lines) + "\n")


def read_dataset(directory, num_joints: int = NUM_JOINTS) -> list[StereoSample]:
    directory = Path(directory)
    try:
        rig = load_rig(directory / "rig.cfg")
    except (OSError, RigFileError) as exc:
        raise CorruptDataset(f"rig.cfg: {exc}") from exc
    labels: dict[int, dict[int, tuple[float, float, float]]] = {}
    try:
        text = (directory / "annotations.csv").read_text()
    except OSError as exc:
        raise CorruptDataset(f"annotations.csv: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["id", "j", "u", "v", "d"]:
        raise CorruptDataset(f"annotations.csv: bad header {header}")
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != 5:
            raise CorruptDataset(f"annotations.csv line {lineno}: expected 5 fields, got {len(row)}")
        try:
            sid, j = int(row[0]), int(row[1])
            u, v, d = float(row[2]), float(row[3]), float(row[4])
        except ValueError as exc:
            raise CorruptDataset(f"annotations.csv line {lineno}: {exc}") from exc
        joints = labels.setdefault(sid, {})
        if j in joints or not 0 <= j < num_joints:
            raise CorruptDataset(f"annotations.csv line {lineno}: bad joint index {j}", sid)
        joints[j] = (u, v, d)
    samples = []
    for sid in sorted(labels):
        joints = labels[sid]
        if len(joints) != num_joints:
            raise CorruptDataset(f"has {len(joints)} joints, expected {num_joints}", sid)
        gt = np.array([joints[j] for j in range(num_joints)])
        if np.any(gt[:, 2] <= 0) or not np.all(np.isfinite(gt)):
            raise CorruptDataset("non-positive or non-finite disparity", sid)
        views = []
        for name in _image_names(sid):
            path = directory / name
            try:
                img = read_ppm(path)
            except (OSError, ValueError) as exc:
                raise CorruptDataset(f"image {name}: {exc}", sid) from exc
            if img.shape != (rig.height, rig.width, 3):
                raise CorruptDataset(f"image {name} is {img.shape[1]}x{img.shape[0]}, "
                                     f"rig says {rig.width}x{rig.height}", sid)
            views.append(img)
        samples.append(StereoSample(left=views[0], right=views[1], gt=gt, rig=rig, sample_id=sid))
    return samples


def read_tracks(directory) -> list[list[int]]:
    path = Path(directory) / "tracks.csv"
    if not path.exists():
        raise CorruptDataset("tracks.csv missing; dataset has no tracking sequences")
    seqs: dict[int, dict[int, int]] = {}
    reader = csv.reader(io.StringIO(path.read_text()))
    if next(reader, None) != ["sequence", "frame", "id"]:
        raise CorruptDataset("tracks.csv: bad header")
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        try:
            k, t, sid = (int(x) for x in row)
        except ValueError as exc:
            raise CorruptDataset(f"tracks.csv line {lineno}: {exc}") from exc
        seqs.setdefault(k, {})[t] = sid
    out = []
    for k in sorted(seqs):
        frames = seqs[k]
        if sorted(frames) != list(range(len(frames))):
            raise CorruptDataset(f"tracks.csv: sequence {k} has missing frames")
        out.append([frames[t] for t in range(len(frames))])
    return out
