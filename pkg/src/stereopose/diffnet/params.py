from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named trainable tensors plus RMSprop accumulators and a frozen set."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.accum: dict[str, np.ndarray] = {}
        self.frozen: set[str] = set()

    def __len__(self):
        return len(self.params)

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def add(self, name: str, value: np.ndarray, accum: np.ndarray | None = None,
            frozen: bool = False) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        if accum is None:
            accum = np.zeros_like(t.data)
        accum = np.array(accum, dtype=self.dtype)
        if accum.shape != t.shape:
            raise ValueError(f"accumulator shape {accum.shape} != parameter shape {t.shape}")
        self.accum[name] = accum
        if frozen:
            self.frozen.add(name)
        return t

    def with_prefix(self, *prefixes: str) -> list[str]:
        return [n for n in self.params if n.startswith(prefixes)]

    def freeze(self, *prefixes: str):
        self.frozen.update(self.with_prefix(*prefixes))

    def unfreeze(self, *prefixes: str):
        self.frozen.difference_update(self.with_prefix(*prefixes))

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def leaves(self) -> dict[str, Tensor]:
        """Fresh leaf tensors sharing this store's values, with private gradients."""
        return {n: Tensor(t.data, requires_grad=True) for n, t in self.params.items()}

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore(self.dtype if dtype is None else dtype)
        for n, t in self.params.items():
            out.add(n, t.data, self.accum[n], frozen=n in self.frozen)
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def num_values(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def equals(self, other: "ParamStore") -> bool:
        """Bit-identical names, values, accumulators and frozen set."""
        if self.names() != other.names() or self.frozen != other.frozen:
            return False
        for n in self.params:
            a, b = self.params[n].data, other.params[n].data
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
            if self.accum[n].tobytes() != other.accum[n].tobytes():
                return False
        return True
