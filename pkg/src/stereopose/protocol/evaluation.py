"""Frame and track evaluation protocols reporting mean 3-D joint error in mm."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateBox
from ..geometry import uvd_to_xyz
from ..roi import CropInit, crop, denormalize, init_from_joints, normalize_labels
from .augment import SCALE, SHIFT_D, SHIFT_UV

PENALTY_MM = 1000.0
DIVERGENCE_MM = 100.0


@dataclass
class EvalReport:
    protocol: str
    frame_ids: list[int]
    joint_errors: np.ndarray                 # (F, J) mm
    predictions: np.ndarray                  # (F, J, 3) global (u, v, d)
    inits: list[CropInit] = field(default_factory=list)
    invalid_frames: int = 0
    divergence_threshold: float = DIVERGENCE_MM

    @property
    def frames(self) -> int:
        return len(self.frame_ids)

    @property
    def per_frame(self) -> np.ndarray:
        return self.joint_errors.mean(axis=1)

    @property
    def per_joint(self) -> np.ndarray:
        return self.joint_errors.mean(axis=0)

    @property
    def mean_error(self) -> float:
        return float(self.per_frame.mean()) if self.frames else float("nan")

    @property
    def diverged(self) -> int:
        return int(np.count_nonzero(self.per_frame > self.divergence_threshold))

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"protocol {self.protocol}\n")
        out.write(f"frames {self.frames}\n")
        out.write(f"mean_error_mm {self.mean_error:.6f}\n")
        out.write(f"invalid_disparity_frames {self.invalid_frames}\n")
        if self.protocol == "track":
            out.write(f"diverged_frames {self.diverged} (threshold {self.divergence_threshold:g} mm)\n")
        out.write("per_joint_mm " + " ".join(f"{e:.6f}" for e in self.per_joint) + "\n")
        return out.getvalue()

    def to_records(self) -> str:
        """One line per frame: ``frame_id, mean_err_mm, j0_err, ..., j20_err``."""
        j = self.joint_errors.shape[1] if self.frames else 0
        lines = ["frame_id, mean_err_mm, " + ", ".join(f"j{k}_err" for k in range(j))]
        for fid, mean, errs in zip(self.frame_ids, self.per_frame, self.joint_errors):
            lines.append(f"{fid}, {mean:.6f}, " + ", ".join(f"{e:.6f}" for e in errs))
        return "\n".join(lines) + "\n"


class OraclePredictor:
    """Echoes the normalised ground truth for each crop; error should be zero."""

    def __init__(self, net_w: int, net_h: int):
        self.net_w, self.net_h = net_w, net_h

    def __call__(self, lefts, rights, samples, inits):
        return np.stack([normalize_labels(s.gt, init, self.net_w, self.net_h)
                         for s, init in zip(samples, inits)])


class NetworkPredictor:
    """Adapter from an :class:`~stereopose.estimator.Estimator` to the predictor interface."""

    def __init__(self, estimator, batch_size: int = 32):
        self.est = estimator
        self.batch_size = batch_size

    def __call__(self, lefts, rights, samples, inits):
        return self.est.predict(lefts, rights, self.batch_size)


def frame_errors(sample, labels, init: CropInit, net_w: int, net_h: int,
                 penalty: float = PENALTY_MM) -> tuple[np.ndarray, np.ndarray, bool]:
    """Per-joint error (mm) of one frame from normalised predictions.

    Returns the errors, the global ``(u, v, d)`` prediction, and whether any
    joint had a non-positive disparity (those joints score ``penalty``).
    """
    pred = denormalize(labels, init, net_w, net_h)
    valid = pred[:, 2] > 0
    err = np.full(len(pred), penalty)
    if valid.any():
        gt_xyz = sample.xyz if sample.xyz is not None else uvd_to_xyz(sample.rig, sample.gt)
        xyz = uvd_to_xyz(sample.rig, pred[valid])
        err[valid] = np.linalg.norm(xyz - gt_xyz[valid], axis=1)
    return err, pred, not valid.all()


def _crops(samples, inits, net_w, net_h):
    lefts = np.stack([crop(s.left, i, net_w, net_h) for s, i in zip(samples, inits)])
    rights = np.stack([crop(s.right, i.shifted_right_box(), net_w, net_h)
                       for s, i in zip(samples, inits)])
    return lefts, rights


def eval_frame(samples, predictor, net_w: int, net_h: int, margin: float = 0.25,
               penalty: float = PENALTY_MM, batch_size: int = 64) -> EvalReport:
    """Every frame is cropped from its own ground truth."""
    errs, preds, inits, invalid = [], [], [], 0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        chunk_inits = [init_from_joints(s.gt, margin) for s in chunk]
        lefts, rights = _crops(chunk, chunk_inits, net_w, net_h)
        labels = predictor(lefts, rights, chunk, chunk_inits)
        for s, lab, init in zip(chunk, labels, chunk_inits):
            e, p, bad = frame_errors(s, lab, init, net_w, net_h, penalty)
            errs.append(e)
            preds.append(p)
            invalid += bad
        inits.extend(chunk_inits)
    return EvalReport("frame", [s.sample_id for s in samples], _stack(errs, 2),
                      _stack(preds, 3), inits, invalid)


def jitter_init(init: CropInit, rng) -> CropInit:
    """Perturb a box within the training jitter ranges (centre shift, d0 shift, scale)."""
    u0, v0, w0, h0, d0 = init.as_tuple()
    factor = 1.0 + rng.uniform(-SCALE, SCALE)
    cu = u0 + w0 / 2 + rng.uniform(-SHIFT_UV, SHIFT_UV) * w0
    cv = v0 + h0 / 2 + rng.uniform(-SHIFT_UV, SHIFT_UV) * h0
    w0, h0 = w0 * factor, h0 * factor
    return CropInit(cu - w0 / 2, cv - h0 / 2, w0, h0, d0 * (1.0 + rng.uniform(-SHIFT_D, SHIFT_D)))


def eval_track(sequences, predictor, net_w: int, net_h: int, margin: float = 0.25,
               penalty: float = PENALTY_MM, threshold: float = DIVERGENCE_MM,
               first_init=None) -> EvalReport:
    """Only frame 0 is cropped from ground truth (optionally through
    ``first_init(init, k)`` for sequence ``k``); every later box comes from
    the previous frame's prediction.

    Sequences advance in lockstep so each time step is one predictor batch.
    """
    if not sequences:
        return EvalReport("track", [], np.zeros((0, 0)), np.zeros((0, 0, 3)), [], 0, threshold)
    length = max(len(seq) for seq in sequences)
    current = []
    for k, seq in enumerate(sequences):
        init = init_from_joints(seq[0].gt, margin)
        current.append(first_init(init, k) if first_init is not None else init)
    per_seq = [[] for _ in sequences]   # (frame_id, err, pred, init, invalid)
    for t in range(length):
        active = [k for k, seq in enumerate(sequences) if t < len(seq)]
        frames = [sequences[k][t] for k in active]
        inits = [current[k] for k in active]
        lefts, rights = _crops(frames, inits, net_w, net_h)
        labels = predictor(lefts, rights, frames, inits)
        for k, s, lab, init in zip(active, frames, labels, inits):
            e, p, bad = frame_errors(s, lab, init, net_w, net_h, penalty)
            per_seq[k].append((s.sample_id, e, p, init, bad))
            try:
                current[k] = init_from_joints(p, margin)
            except DegenerateBox:
                pass   # keep the previous box
    rows = [r for seq in per_seq for r in seq]
    return EvalReport("track", [r[0] for r in rows], _stack([r[1] for r in rows], 2),
                      _stack([r[2] for r in rows], 3), [r[3] for r in rows],
                      sum(r[4] for r in rows), threshold)


def _stack(items, ndim):
    return np.stack(items) if items else np.zeros((0,) * ndim)
