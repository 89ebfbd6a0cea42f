"""DiffArray and the gradient tape.

Every operator builds its output through :func:`make_op`. When a
:class:`GradTape` is active and at least one input requires gradient, the
output and a closure computing the input gradients are appended to the tape.
Outside a tape nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPE: type = np.float32
_TAPES: list["GradTape"] = []
_ids = itertools.count()


class ContractError(ValueError):
    """Raised when operator inputs violate a shape or argument contract."""


def default_dtype() -> type:
    return _DTYPE


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the dtype new arrays are created with.

    ``with precision(np.float64): ...`` is the mode used for gradient checks.
    """
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


class DiffArray:
    """Dense array that can take part in reverse-mode differentiation."""

    __slots__ = ("value", "_grad", "requires_grad", "node_id", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=_DTYPE)
        self._grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g) -> None:
        self._grad = None if g is None else np.asarray(g, dtype=self.value.dtype)

    def zero_grad(self) -> None:
        self._grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.value.shape:
            raise ContractError(f"gradient shape {g.shape} != value shape {self.value.shape}")
        if self._grad is None:
            self._grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self._grad += g

    def detach(self) -> "DiffArray":
        return DiffArray(self.value, requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffArray(shape={self.shape}, dtype={self.value.dtype}{tag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)


def as_array(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: DiffArray, parents: tuple[DiffArray, ...], backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class GradTape:
    """Ordered record of operations; replayed in reverse by :meth:`backward`.

    Creation order is a topological order, so a single reverse sweep visits
    every node after all of its consumers.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: DiffArray, parents: tuple[DiffArray, ...], backward: Callable) -> None:
        out.node_id = len(self.nodes)
        self.nodes.append(_Node(out, parents, backward))

    def backward(self, loss: DiffArray, seed: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if seed is None:
            if loss.value.size != 1:
                raise ContractError("backward without a seed needs a scalar loss")
            seed = np.ones_like(loss.value)
        grads: dict[int, np.ndarray] = {}
        if loss.node_id is None or loss.node_id >= len(self.nodes) or self.nodes[loss.node_id].out is not loss:
            loss.accumulate(np.asarray(seed, dtype=loss.value.dtype))
            return
        grads[loss.node_id] = np.asarray(seed, dtype=loss.value.dtype)
        for nid in range(loss.node_id, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            pgrads = node.backward(g)
            for parent, pg in zip(node.parents, pgrads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.dtype != parent.value.dtype:
                    pg = pg.astype(parent.value.dtype)
                pid = parent.node_id
                if pid is not None and pid < len(self.nodes) and self.nodes[pid].out is parent:
                    if pid in grads:
                        grads[pid] = grads[pid] + pg
                    else:
                        grads[pid] = pg
                else:
                    parent.accumulate(pg)


def active_tape() -> GradTape | None:
    return _TAPES[-1] if _TAPES else None


def make_op(value: np.ndarray, parents: Sequence[DiffArray], backward: Callable) -> DiffArray:
    """Wrap ``value`` as an op output and record it if gradients are needed.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    out = DiffArray(value)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, tuple(parents), backward)
    return out


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on all active tapes."""
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)
