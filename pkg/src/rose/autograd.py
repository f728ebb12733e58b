"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every primitive applied to its nodes in execution
order, so the node list is topologically sorted by construction.  Gradients
are obtained with :func:`backward`, which walks the tape in reverse from a
scalar loss node and returns one gradient per named parameter leaf.

Dropout randomness comes from :class:`RngStream`, a counter-style key
``(seed, step, pass_index)``; the same key always yields the same masks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Node",
    "RngStream",
    "ShapeError",
    "Tape",
    "backward",
    "dropout_mask",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


@dataclass(frozen=True)
class RngStream:
    """Key of an independent, reproducible random stream.

    Each distinct ``(seed, step, pass_index)`` maps to its own Philox
    generator; streams for pass 0 and pass 1 of the same step do not
    overlap.
    """

    seed: int
    step: int = 0
    pass_index: int = 0

    def __post_init__(self):
        if self.pass_index not in (0, 1):
            raise ValueError(f"pass_index must be 0 or 1, got {self.pass_index}")
        if self.step < 0 or self.seed < 0:
            raise ValueError("seed and step must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, self.step, self.pass_index])
        return np.random.Generator(np.random.Philox(ss))

    def with_pass(self, pass_index: int) -> "RngStream":
        return RngStream(self.seed, self.step, pass_index)


def dropout_mask(rng, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask with entries in ``{0, 1/(1-rate)}``.

    ``rng`` is either an :class:`RngStream` or an already-open
    ``numpy.random.Generator`` (so several sites can draw from one stream).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=np.float64)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    keep = gen.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


class Node:
    """One recorded value on a tape."""

    __slots__ = ("id", "op", "value", "parents", "vjp", "name")

    def __init__(self, id, op, value, parents=(), vjp=None, name=None):
        self.id = id
        self.op = op
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node(#{self.id} {self.op}{label} shape={self.value.shape})"


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Ordered record of primitive operations.

    Parameters are registered with :meth:`param`; everything else is either a
    constant (:meth:`constant`) or the output of a primitive method.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, value, parents=(), vjp=None, name=None) -> Node:
        node = Node(len(self.nodes), op, value, parents, vjp, name)
        self.nodes.append(node)
        return node

    # leaves

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered on this tape")
        node = self._push("param", np.asarray(value, dtype=np.float64), name=name)
        self.params[name] = node
        return node

    def constant(self, value) -> Node:
        return self._push("constant", np.asarray(value, dtype=np.float64))

    # primitives

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        av, bv = a.value, b.value
        return self._push(
            "matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g)
        )

    def add(self, a: Node, b: Node) -> Node:
        try:
            out = a.value + b.value
        except ValueError:
            raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None
        sa, sb = a.shape, b.shape
        return self._push(
            "add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        )

    def sub(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"sub: shape mismatch {a.shape} vs {b.shape}")
        return self._push("sub", a.value - b.value, (a, b), lambda g: (g, -g))

    def mul(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
        av, bv = a.value, b.value
        return self._push("mul", av * bv, (a, b), lambda g: (g * bv, g * av))

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._push("scale", a.value * c, (a,), lambda g: (g * c,))

    def tanh(self, a: Node) -> Node:
        out = np.tanh(a.value)
        return self._push("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))

    def relu(self, a: Node) -> Node:
        active = a.value > 0
        out = np.where(active, a.value, 0.0)
        return self._push("relu", out, (a,), lambda g: (g * active,))

    def exp(self, a: Node) -> Node:
        out = np.exp(a.value)
        return self._push("exp", out, (a,), lambda g: (g * out,))

    def clamp_min(self, a: Node, floor: float) -> Node:
        keep = a.value >= floor
        out = np.where(keep, a.value, floor)
        return self._push("clamp_min", out, (a,), lambda g: (g * keep,))

    def dropout(self, a: Node, mask: np.ndarray) -> Node:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != a.shape:
            raise ShapeError(f"dropout: mask {mask.shape} does not match input {a.shape}")
        return self._push("dropout", a.value * mask, (a,), lambda g: (g * mask,))

    def log_softmax(self, a: Node) -> Node:
        if a.value.ndim != 2:
            raise ShapeError(f"log_softmax: expected (batch, classes), got {a.shape}")
        shifted = a.value - a.value.max(axis=1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        soft = np.exp(out)
        return self._push(
            "log_softmax",
            out,
            (a,),
            lambda g: (g - soft * g.sum(axis=1, keepdims=True),),
        )

    def gather(self, a: Node, labels) -> Node:
        """Pick ``a[i, labels[i]]`` for every row; output shape ``(batch,)``."""
        labels = np.asarray(labels)
        if a.value.ndim != 2 or labels.shape != (a.shape[0],):
            raise ShapeError(f"gather: labels {labels.shape} do not index rows of {a.shape}")
        rows = np.arange(a.shape[0])
        shape = a.shape

        def vjp(g):
            out = np.zeros(shape)
            out[rows, labels] = g
            return (out,)

        return self._push("gather", a.value[rows, labels], (a,), vjp)

    def sum(self, a: Node, axis: Optional[int] = None) -> Node:
        shape = a.shape
        if axis is None:
            return self._push(
                "sum", np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
            )
        out = a.value.sum(axis=axis)
        return self._push(
            "sum",
            out,
            (a,),
            lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
        )

    def mean(self, a: Node) -> Node:
        shape, size = a.shape, a.value.size
        return self._push(
            "mean",
            np.asarray(a.value.mean()),
            (a,),
            lambda g: (np.full(shape, g / size),),
        )


def backward(tape: Tape, loss: Node, wrt: Optional[Sequence[str]] = None) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` with respect to the tape's parameters.

    Returns a dict keyed by parameter name in registration order.  Parameters
    the loss does not depend on get zero gradients.
    """
    if loss.value.size != 1 or loss.value.ndim != 0:
        raise ShapeError(f"backward: loss must be a scalar node, got shape {loss.shape}")
    if loss.id >= len(tape.nodes) or tape.nodes[loss.id] is not loss:
        raise ValueError("backward: loss node does not belong to this tape")

    grads: dict[int, np.ndarray] = {loss.id: np.ones(())}
    for node in reversed(tape.nodes[: loss.id + 1]):
        g = grads.pop(node.id, None)
        if g is None or node.vjp is None:
            if g is not None:
                grads[node.id] = g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent.op == "constant":
                continue
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg

    names = tape.params if wrt is None else wrt
    out = {}
    for name in names:
        node = tape.params[name]
        g = grads.get(node.id)
        out[name] = np.zeros_like(node.value) if g is None else np.asarray(g, dtype=np.float64).reshape(node.shape)
    return out

