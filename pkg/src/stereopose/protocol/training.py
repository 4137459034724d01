"""Two-stage (and joint) training of the stereo pose network."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..diffnet import ops
from ..diffnet.optim import rmsprop_step, step_schedule
from ..diffnet.tensor import Tensor
from ..errors import FrozenViolation, NumericError
from ..estimator import Estimator, loss_d, loss_uv, make_heatmap_target, to_input
from ..roi import crop, init_from_joints, normalize_labels, rotate_labels
from .augment import AugPolicy, augment

log = logging.getLogger(__name__)

STAGE_LOSSES = {"2d": ("uv",), "3d": ("d",), "joint": ("uv", "d")}
TRAINABLE = {"2d": ("h_f/", "h_uv/"), "3d": ("h_D/",), "joint": ("h_f/", "h_uv/", "h_D/")}


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr: float = 0.05
    lr_factor: float = 0.3
    lr_every: int = 30
    rho: float = 0.9
    epsilon: float = 1e-8
    sigma: float = 3.0
    sigma_d: float | None = None     # disparity-target width in map cells; None matches sigma
    delta: float = 1.0
    seed: int = 0
    protocol: str = "frame"
    margin: float = 0.25
    threads: int = 1
    shift_uv_override: bool | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ValueError("batch size, epochs and learning rate must be positive")
        if self.sigma <= 0 or self.delta <= 0 or (self.sigma_d is not None and self.sigma_d <= 0):
            raise ValueError("sigma and delta must be positive")


@dataclass
class TrainResult:
    stage: str
    history: list[dict] = field(default_factory=list)

    @property
    def initial_val(self):
        return self.history[0]["val_loss"] if self.history else None

    @property
    def final_val(self):
        return self.history[-1]["val_loss"] if self.history else None


@dataclass
class Batch:
    left: np.ndarray      # (B, H, W, 3)
    right: np.ndarray
    labels: np.ndarray    # (B, J, 3) normalised


def make_batch(samples, policy: AugPolicy | None, rng, net_w: int, net_h: int,
               margin: float, need_right: bool = True) -> Batch:
    """Crops and normalised labels; ``policy=None`` means ground-truth crops."""
    lefts, rights, labels = [], [], []
    for s in samples:
        init = init_from_joints(s.gt, margin)
        rotation = None
        if policy is not None:
            init, rotation = augment(init, policy, rng)
        lab = normalize_labels(s.gt, init, net_w, net_h)
        lefts.append(crop(s.left, init, net_w, net_h, rotation or 0.0))
        if rotation:
            lab = rotate_labels(lab, rotation, net_w, net_h)
        if need_right:
            rights.append(crop(s.right, init.shifted_right_box(), net_w, net_h))
        labels.append(lab)
    return Batch(np.stack(lefts), np.stack(rights) if need_right else None, np.stack(labels))


class Trainer:
    """Runs one optimisation stage over an :class:`Estimator`'s parameters."""

    def __init__(self, estimator: Estimator, cfg: TrainConfig, stage: str):
        if stage not in STAGE_LOSSES:
            raise ValueError(f"unknown stage {stage!r}")
        self.est = estimator
        self.cfg = cfg
        self.stage = stage
        self.losses = STAGE_LOSSES[stage]
        policy_stage = "2d" if stage == "2d" else "3d"
        self.policy = AugPolicy(policy_stage, cfg.protocol, cfg.shift_uv_override)
        self.trainable = TRAINABLE[stage]
        net = estimator.cfg
        self.sigma_d = cfg.sigma_d or cfg.sigma * net.heatmap_stride / net.disparity_map_stride

    # -- loss graph -------------------------------------------------------
    def loss(self, params, batch: Batch) -> Tensor:
        est, net = self.est, self.est.cfg
        dtype = est.store.dtype
        left = to_input(batch.left, dtype)
        f_l = est.net.h_f(params, left)
        terms = []
        if "uv" in self.losses:
            target = make_heatmap_target(batch.labels, net.heatmap_shape, net.heatmap_stride,
                                         self.cfg.sigma, normalized=False)
            terms.append(loss_uv(est.net.h_uv(params, f_l), target))
        if "d" in self.losses:
            f_r = est.net.h_f(params, to_input(batch.right, dtype)) if est.mode == "stereo" else None
            dmap = est.net.h_D(params, est.disparity_input(params, f_l, f_r))
            target = make_heatmap_target(batch.labels, net.disparity_shape,
                                         net.disparity_map_stride, self.sigma_d, normalized=True)
            terms.append(loss_d(dmap, batch.labels, target, self.cfg.delta))
        return ops.total(terms)

    def _params(self, shared: bool):
        store = self.est.store
        out = {}
        for name, t in store.params.items():
            if name.startswith(self.trainable) and name not in store.frozen:
                out[name] = t if shared else Tensor(t.data, requires_grad=True)
            else:
                out[name] = Tensor(t.data)
        return out

    def _chunk_grads(self, batch: Batch, weight: float, shared: bool):
        params = self._params(shared)
        loss = self.loss(params, batch)
        loss.backward(np.asarray(weight, dtype=loss.dtype))
        grads = {n: t.grad for n, t in params.items() if t.requires_grad}
        return float(loss.data), grads

    def step(self, batch: Batch, lr: float) -> float:
        store = self.est.store
        store.zero_grad()
        n = len(batch.labels)
        threads = max(1, min(self.cfg.threads, n))
        if threads == 1:
            value, grads = self._chunk_grads(batch, 1.0, shared=True)
        else:
            bounds = np.linspace(0, n, threads + 1).astype(int)
            chunks = [Batch(batch.left[a:b], None if batch.right is None else batch.right[a:b],
                            batch.labels[a:b]) for a, b in zip(bounds, bounds[1:])]
            weights = [(b - a) / n for a, b in zip(bounds, bounds[1:])]
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(lambda cw: self._chunk_grads(cw[0], cw[1], False),
                                        zip(chunks, weights)))
            value = sum(w * v for w, (v, _) in zip(weights, results))
            grads = {}
            for _, g in results:          # fixed reduction order
                for name, arr in g.items():
                    if arr is None:
                        continue
                    grads[name] = arr.copy() if name not in grads else grads[name] + arr
            for name, arr in grads.items():
                store.params[name].grad = arr
        if not np.isfinite(value):
            raise NumericError(f"non-finite training loss in stage {self.stage}")
        rmsprop_step(store, lr, self.cfg.rho, self.cfg.epsilon)
        return value

    def evaluate(self, samples, batch_size: int = 64) -> float:
        """Mean loss over ``samples`` with ground-truth crops, no augmentation."""
        if not samples:
            return float("nan")
        net = self.est.cfg
        params = {n: Tensor(t.data) for n, t in self.est.store.params.items()}
        total, count = 0.0, 0
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            batch = make_batch(chunk, None, None, net.net_w, net.net_h, self.cfg.margin,
                               need_right="d" in self.losses)
            total += float(self.loss(params, batch).data) * len(chunk)
            count += len(chunk)
        return total / count

    def fit(self, samples, val=None, epochs: int | None = None) -> TrainResult:
        cfg, net = self.cfg, self.est.cfg
        epochs = cfg.epochs if epochs is None else epochs
        rng = np.random.default_rng([cfg.seed, {"2d": 2, "3d": 3, "joint": 5}[self.stage]])
        result = TrainResult(self.stage)
        need_right = "d" in self.losses
        if val:
            result.history.append({"epoch": 0, "lr": None, "train_loss": None,
                                   "val_loss": self.evaluate(val)})
        for epoch in range(epochs):
            lr = step_schedule(cfg.lr, epoch, cfg.lr_every, cfg.lr_factor)
            order = rng.permutation(len(samples))
            losses = []
            for i in range(0, len(order), cfg.batch_size):
                chunk = [samples[k] for k in order[i:i + cfg.batch_size]]
                batch = make_batch(chunk, self.policy, rng, net.net_w, net.net_h, cfg.margin,
                                   need_right)
                losses.append(self.step(batch, lr) * len(chunk))
            entry = {"epoch": epoch + 1, "lr": lr, "train_loss": sum(losses) / len(samples),
                     "val_loss": self.evaluate(val) if val else None}
            result.history.append(entry)
            log.info("stage %s epoch %d lr %.4g train %.5f val %s", self.stage, epoch + 1, lr,
                     entry["train_loss"], entry["val_loss"])
        return result


def train_stage_2d(samples, estimator: Estimator, cfg: TrainConfig, val=None,
                   epochs: int | None = None) -> TrainResult:
    """Optimise the heatmap loss over the trunk and heatmap head."""
    estimator.store.unfreeze("h_f/", "h_uv/")
    return Trainer(estimator, cfg, "2d").fit(samples, val, epochs)


def train_stage_3d(samples, estimator: Estimator, cfg: TrainConfig, val=None,
                   epochs: int | None = None) -> TrainResult:
    """Optimise the disparity loss over the disparity head with the trunk frozen."""
    store = estimator.store
    store.freeze("h_f/", "h_uv/")
    before = {n: store.params[n].data.tobytes() for n in store.with_prefix("h_f/", "h_uv/")}
    result = Trainer(estimator, cfg, "3d").fit(samples, val, epochs)
    changed = [n for n, raw in before.items() if store.params[n].data.tobytes() != raw]
    if changed:
        raise FrozenViolation(f"frozen parameters changed: {', '.join(changed[:5])}")
    return result


def train_joint(samples, estimator: Estimator, cfg: TrainConfig, val=None,
                epochs: int | None = None) -> TrainResult:
    """Single-stage alternative: heatmap and disparity losses minimised together."""
    estimator.store.unfreeze("h_f/", "h_uv/", "h_D/")
    return Trainer(estimator, cfg, "joint").fit(samples, val, epochs)
