"""Reverse-mode autodiff over numpy arrays."""

from __future__ import annotations

import contextlib
import threading
from collections import Counter

import numpy as np


class Tensor:
    """A value node in a dynamically built computation graph.

    Leaves created with ``requires_grad=True`` accumulate ``.grad`` when
    :meth:`backward` runs on any tensor downstream of them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = ""):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op!r})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def make_node(data, parents, backward, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), op=op)
    if needs:
        out._backward = backward
    return out


class Profile:
    """Counts multiply-accumulates and named events while active."""

    def __init__(self):
        self.macs = 0
        self.ops: Counter[str] = Counter()
        self.events: Counter[str] = Counter()


_state = threading.local()


def _active() -> list[Profile]:
    stack = getattr(_state, "profiles", None)
    if stack is None:
        stack = _state.profiles = []
    return stack


@contextlib.contextmanager
def profile():
    prof = Profile()
    _active().append(prof)
    try:
        yield prof
    finally:
        _active().remove(prof)


def record(op: str, macs: int = 0):
    for prof in _active():
        prof.ops[op] += 1
        prof.macs += macs


def record_event(name: str):
    for prof in _active():
        prof.events[name] += 1
