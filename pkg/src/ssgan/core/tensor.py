"""Tensor value carrier and the tape used for reverse-mode differentiation.

A :class:`Tensor` is a thin wrapper around a numpy array. When it was
produced from inputs that live on a :class:`GradientTape` it also carries a
handle into that tape, and the operation that produced it is recorded as a
node holding a backward closure.

Storage is float32. Float64 arrays are accepted and propagated unchanged so
that the gradient checker can re-run a forward pass in double precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, NonFiniteError, ShapeError

_FLOAT_TYPES = (np.float32, np.float64)


def as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.type not in _FLOAT_TYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """An array of 1 to 4 axes, read as (N, C, H, W) with leading axes implied."""

    __slots__ = ("data", "tape", "handle")

    def __init__(self, data, tape: Optional["GradientTape"] = None, handle: Optional[int] = None):
        arr = as_array(data)
        if not 1 <= arr.ndim <= 4:
            raise ShapeError(f"tensor must have 1 to 4 axes, got {arr.ndim}")
        if 0 in arr.shape:
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.tape = tape
        self.handle = handle

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def extents(self) -> tuple:
        """The shape padded to four axes with leading ones."""
        return (1,) * (4 - self.data.ndim) + self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not self.is_finite():
            raise NonFiniteError(f"{what} contains NaN or Inf", name=what)
        return self

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        tracked = f", handle={self.handle}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tracked})"


@dataclass
class Node:
    kind: str
    inputs: tuple
    backward: Optional[Callable]
    shape: tuple
    dtype: np.dtype
    name: Optional[str] = None


@dataclass
class GradientTape:
    """Append-only record of operations in execution (topological) order."""

    nodes: list = field(default_factory=list)
    grads: dict = field(default_factory=dict)

    def watch(self, data, name: Optional[str] = None) -> Tensor:
        """Register a leaf (parameter or input) and return its tracked tensor."""
        arr = data.data if isinstance(data, Tensor) else as_array(data)
        handle = len(self.nodes)
        self.nodes.append(Node("leaf", (), None, arr.shape, arr.dtype, name))
        return Tensor(arr, self, handle)

    def watch_all(self, params: dict) -> dict:
        return {name: self.watch(value, name) for name, value in params.items()}

    def _append(self, kind, inputs, backward, out: np.ndarray) -> Tensor:
        for h in inputs:
            if h is not None and h >= len(self.nodes):
                raise ContractError("tape input handle does not precede its node")
        handle = len(self.nodes)
        self.nodes.append(Node(kind, tuple(inputs), backward, out.shape, out.dtype))
        return Tensor(out, self, handle)

    def leaf_handles(self) -> dict:
        return {n.name: i for i, n in enumerate(self.nodes) if n.kind == "leaf" and n.name is not None}


def record(kind: str, out: np.ndarray, inputs: Sequence, backward: Callable) -> Tensor:
    """Wrap ``out`` and, if any input is tracked, append a node to its tape.

    ``backward(g)`` must return one gradient (or ``None``) per entry of
    ``inputs``; entries of ``inputs`` that are not tensors get ``None``.
    """
    tape = None
    for t in inputs:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operation mixes tensors from two different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(out)
    handles = [t.handle if isinstance(t, Tensor) and t.tape is tape else None for t in inputs]
    return tape._append(kind, handles, backward, out)


def backward(tape: GradientTape, loss: Tensor) -> dict:
    """Accumulate d(loss)/d(node) for every node; return gradients of named leaves.

    Leaves the loss does not depend on receive zero gradients of their own
    extents. The per-node gradients stay available in ``tape.grads``.
    """
    if loss.tape is not tape or loss.handle is None:
        raise ContractError("loss is not recorded on this tape")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got extents {loss.shape}")
    grads: dict = {loss.handle: np.ones(loss.shape, dtype=loss.dtype)}
    for h in range(loss.handle, -1, -1):
        g = grads.get(h)
        node = tape.nodes[h]
        if g is None or node.backward is None:
            continue
        in_grads = node.backward(g)
        for ih, ig in zip(node.inputs, in_grads):
            if ih is None or ig is None:
                continue
            if ig.shape != tape.nodes[ih].shape:
                raise ShapeError(
                    f"{node.kind} backward produced {ig.shape} for an input of {tape.nodes[ih].shape}"
                )
            prev = grads.get(ih)
            grads[ih] = ig if prev is None else prev + ig
    tape.grads = grads
    out = {}
    for name, h in tape.leaf_handles().items():
        node = tape.nodes[h]
        g = grads.get(h)
        out[name] = np.zeros(node.shape, dtype=node.dtype) if g is None else g
    return out
