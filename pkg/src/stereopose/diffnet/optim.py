from __future__ import annotations

import numpy as np

from .params import ParamStore


def rmsprop_step(store: ParamStore, lr: float, decay_rho: float = 0.9,
                 epsilon: float = 1e-8) -> None:
    """One RMSprop update of every non-frozen parameter with a gradient.

    ``acc <- rho * acc + (1 - rho) * g**2``; ``p <- p - lr * g / sqrt(acc + eps)``.
    """
    for name, param in store.params.items():
        if name in store.frozen or param.grad is None:
            continue
        g = param.grad.astype(store.dtype, copy=False)
        acc = store.accum[name]
        acc *= decay_rho
        acc += (1.0 - decay_rho) * g * g
        param.data -= (lr * g / np.sqrt(acc + epsilon)).astype(store.dtype, copy=False)


def step_schedule(base_lr: float, epoch: int, every: int = 30, factor: float = 0.3) -> float:
    """Piecewise-constant schedule: multiply by ``factor`` every ``every`` epochs."""
    return base_lr * factor ** (epoch // every)
