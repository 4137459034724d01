"""Inference timing and multiply-accumulate accounting per network variant."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..diffnet.network import NetConfig, build_network
from ..diffnet.tensor import Tensor, profile
from ..estimator import Estimator

VIEWS = ("mono", "stereo")


@dataclass
class MacCount:
    variant: str
    h_f: int
    h_uv: int
    h_D: int

    @property
    def mono(self) -> int:
        return self.h_f + self.h_uv + self.h_D

    @property
    def stereo(self) -> int:
        return 2 * self.h_f + self.h_uv + self.h_D

    def total(self, view: str) -> int:
        return self.stereo if view == "stereo" else self.mono


@dataclass
class BenchRow:
    variant: str
    view: str
    fps_mean: float
    fps_std: float
    runs: int
    macs: int


def count_macs(cfg: NetConfig, store=None, net=None) -> MacCount:
    """Per-component MACs of a single-image forward pass, read off the graph."""
    if net is None:
        store, net = build_network(cfg, 0)
    p = store.params
    x = Tensor(np.zeros((1, 3, cfg.net_h, cfg.net_w), dtype=store.dtype))
    with profile() as pf:
        f = net.h_f(p, x)
    mac_f = pf.macs
    with profile() as pf:
        net.h_uv(p, f)
    mac_uv = pf.macs
    f_lr = Tensor(np.zeros((1, 2 * f.shape[1]) + f.shape[2:], dtype=store.dtype))
    with profile() as pf:
        net.h_D(p, f_lr)
    return MacCount(cfg.variant, mac_f, mac_uv, pf.macs)


def bench_fps(configs, views=VIEWS, repetitions: int = 20, burn_in: int = 5,
              seed: int = 0, clock=time.perf_counter) -> list[BenchRow]:
    """Time single-pair inference; ``burn_in`` untimed runs precede ``repetitions`` timed ones."""
    if repetitions < 1 or burn_in < 0:
        raise ValueError("need at least one timed run and a non-negative burn-in")
    rng = np.random.default_rng(seed)
    rows = []
    for cfg in configs:
        store, net = build_network(cfg, seed)
        macs = count_macs(cfg, store, net)
        left = rng.random((1, cfg.net_h, cfg.net_w, 3)).astype(np.float32)
        right = rng.random((1, cfg.net_h, cfg.net_w, 3)).astype(np.float32)
        for view in views:
            if view not in VIEWS:
                raise ValueError(f"unknown view {view!r}")
            est = Estimator(cfg, store, net, mode=view)
            for _ in range(burn_in):
                est.forward(left, right)
            fps = []
            for _ in range(repetitions):
                t0 = clock()
                est.forward(left, right)
                fps.append(1.0 / max(clock() - t0, 1e-12))
            rows.append(BenchRow(cfg.variant, view, float(np.mean(fps)), float(np.std(fps)),
                                 repetitions, macs.total(view)))
    return rows


def format_macs(counts: list[MacCount]) -> str:
    lines = ["variant  h_f_macs  h_uv_macs  h_D_macs  mono_macs  stereo_macs  stereo/mono"]
    for c in counts:
        lines.append(f"{c.variant}  {c.h_f}  {c.h_uv}  {c.h_D}  {c.mono}  {c.stereo}  "
                     f"{c.stereo / c.mono:.4f}")
    return "\n".join(lines) + "\n"


def format_fps(rows: list[BenchRow]) -> str:
    lines = ["variant  view  fps_mean  fps_std  runs  macs"]
    for r in rows:
        lines.append(f"{r.variant}  {r.view}  {r.fps_mean:.3f}  {r.fps_std:.3f}  {r.runs}  {r.macs}")
    return "\n".join(lines) + "\n"
