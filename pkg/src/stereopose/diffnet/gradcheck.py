"""Central finite-difference checks for the autodiff ops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

DENOM_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), DENOM_FLOOR)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                    rng: np.random.Generator, coords: int = 50, eps: float = 1e-5,
                    wrt: Sequence[int] | None = None) -> GradCheckResult:
    """Compare analytic and numeric gradients of ``fn(*tensors)``.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. ``coords`` entries are drawn per checked input.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    probe = {}

    def scalar(values):
        out = fn(*values)
        if out.data.size == 1:
            return out, out
        if "w" not in probe:
            probe["w"] = rng.standard_normal(out.shape)
        proj = (out.data * probe["w"]).sum()
        return out, proj

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out, _ = scalar(tensors)
    seed = np.ones_like(out.data) if out.data.size == 1 else probe["w"]
    out.backward(seed)
    worst = 0.0
    checked = 0
    for i in wrt:
        grad = tensors[i].grad
        if grad is None:
            grad = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        picks = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + eps
            plus = _value(scalar([Tensor(a) for a in arrays])[1])
            flat[idx] = orig - eps
            minus = _value(scalar([Tensor(a) for a in arrays])[1])
            flat[idx] = orig
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, relative_error(float(grad.reshape(-1)[idx]), numeric))
            checked += 1
    return GradCheckResult(worst, checked)


def _value(x) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)
