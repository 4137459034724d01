"""Quick built-in numeric checks used by ``stereopose selfcheck``."""

from __future__ import annotations

import numpy as np

from .diffnet import load_checkpoint, ops, save_checkpoint
from .diffnet.gradcheck import check_gradients
from .diffnet.network import NetConfig, build_network
from .estimator import make_heatmap_target, sample_disparity
from .geometry import DEFAULT_RIG, uvd_to_xyz, xyz_to_uvd
from .roi import CropInit, denormalize, normalize_labels


def _geometry(rng):
    uvd = np.c_[rng.uniform(0, 320, 1000), rng.uniform(0, 240, 1000), rng.uniform(1, 200, 1000)]
    err = np.abs(xyz_to_uvd(DEFAULT_RIG, uvd_to_xyz(DEFAULT_RIG, uvd)) - uvd).max()
    return err < 1e-9, f"max error {err:.3g}"


def _normalisation(rng):
    worst = 0.0
    for _ in range(200):
        init = CropInit(*rng.uniform(-50, 200, 2), *rng.uniform(20, 300, 2), rng.uniform(1, 100))
        lab = rng.uniform(-10, 74, (21, 3))
        worst = max(worst, np.abs(normalize_labels(denormalize(lab, init, 64, 64), init, 64, 64)
                                  - lab).max())
    return worst < 1e-12, f"max error {worst:.3g}"


def _bilinear(rng):
    worst = 0.0
    for _ in range(50):
        grid = rng.standard_normal((9, 11))
        u, v = rng.uniform(-8, 48, 21), rng.uniform(-8, 40, 21)
        got = sample_disparity(grid, u, v, 4)
        x, y = np.clip(u / 4, 0, 10), np.clip(v / 4, 0, 8)
        n, m = np.arange(11), np.arange(9)
        wx = np.maximum(0, 1 - np.abs(x[:, None] - n[None]))
        wy = np.maximum(0, 1 - np.abs(y[:, None] - m[None]))
        want = np.einsum("jm,jn,mn->j", wy, wx, grid)
        worst = max(worst, np.abs(got - want).max())
    return worst < 1e-12, f"max error {worst:.3g}"


def _huber(rng):
    vals = ops.huber(np.array([0.5, 2.0]), 1.0)
    ok = vals[0] == 0.125 and vals[1] == 1.5
    return ok, f"values {vals[0]:g}, {vals[1]:g}"


def _heatmaps(rng):
    t = make_heatmap_target(rng.uniform(0, 64, (21, 3)), (16, 16), 4, 3.0, normalized=True)
    err = np.abs(t.maps.sum(axis=(-2, -1)) - 1).max()
    return err < 1e-9, f"max mass error {err:.3g}"


def _gradients(rng):
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    res = check_gradients(lambda x, w, b: ops.relu(ops.conv2d(x, w, b)), [x, w, b], rng, coords=10)
    return res.ok(), f"max relative error {res.max_rel_error:.3g}"


def _checkpoint(rng):
    store, _ = build_network(NetConfig(num_stacks=1, base_channels=4), 0)
    raw = save_checkpoint(store)
    ok = save_checkpoint(load_checkpoint(raw)) == raw
    return ok, f"{len(raw)} bytes"


CHECKS = [("geometry_round_trip", _geometry), ("crop_normalisation_round_trip", _normalisation),
          ("bilinear_sampling_oracle", _bilinear), ("huber_branches", _huber),
          ("heatmap_mass", _heatmaps), ("conv_gradients", _gradients),
          ("checkpoint_round_trip", _checkpoint)]


def run_selfcheck(seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn(rng)
        except Exception as exc:   # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
