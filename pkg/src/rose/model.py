"""Small dropout-equipped MLP classifiers with named parameter groups."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .autograd import Node, RngStream, ShapeError, Tape, dropout_mask

__all__ = [
    "ModelSpec",
    "ParamSet",
    "build_logits",
    "forward",
    "init_params",
    "logits",
    "predict",
]

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple = (32,)
    classes: int = 2
    activation: str = "tanh"
    dropout_rate: float = 0.1
    dropout_sites: str = "after_each_hidden"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if not self.hidden_dims:
            raise ValueError("at least one hidden layer is required")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if int(self.classes) < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 0.0 <= float(self.dropout_rate) < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.dropout_sites != "after_each_hidden":
            raise ValueError(f"unsupported dropout_sites {self.dropout_sites!r}")

    def layer_shapes(self) -> list[tuple[str, tuple]]:
        dims = [self.input_dim, *self.hidden_dims]
        shapes = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            shapes.append((f"layer{i}.weight", (fan_in, fan_out)))
            shapes.append((f"layer{i}.bias", (fan_out,)))
        shapes.append(("out.weight", (dims[-1], self.classes)))
        shapes.append(("out.bias", (self.classes,)))
        return shapes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


class ParamSet(dict):
    """Ordered mapping of group name to float64 array.

    Iteration follows declaration order.  ``size`` is the total scalar count.
    """

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self.values()))

    def copy(self) -> "ParamSet":
        return ParamSet((k, np.array(v, dtype=np.float64, copy=True)) for k, v in self.items())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values()])

    def same_structure(self, other) -> bool:
        return list(self) == list(other) and all(self[k].shape == other[k].shape for k in self)


def init_params(spec: ModelSpec, seed: int = 0) -> ParamSet:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    params = ParamSet()
    for name, shape in spec.layer_shapes():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def _check_input(spec: ModelSpec, X: np.ndarray):
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(
            f"input: expected (batch, {spec.input_dim}), got {X.shape}"
        )


def build_logits(
    tape: Tape,
    nodes: dict[str, Node],
    spec: ModelSpec,
    X: np.ndarray,
    rng: Optional[RngStream] = None,
    dropout_rate: Optional[float] = None,
) -> Node:
    """Record one forward pass on ``tape`` using existing parameter nodes.

    Dropout is applied after every hidden activation when ``rng`` is given
    and the effective rate is positive.  Masks for successive sites are drawn
    in order from the single generator of ``rng``.
    """
    X = np.asarray(X, dtype=np.float64)
    _check_input(spec, X)
    rate = spec.dropout_rate if dropout_rate is None else float(dropout_rate)
    gen = rng.generator() if (rng is not None and rate > 0) else None
    act = tape.tanh if spec.activation == "tanh" else tape.relu

    h = tape.constant(X)
    for i in range(len(spec.hidden_dims)):
        h = act(tape.add(tape.matmul(h, nodes[f"layer{i}.weight"]), nodes[f"layer{i}.bias"]))
        if gen is not None:
            h = tape.dropout(h, dropout_mask(gen, h.shape, rate))
    return tape.add(tape.matmul(h, nodes["out.weight"]), nodes["out.bias"])


def forward(
    params: ParamSet,
    spec: ModelSpec,
    X: np.ndarray,
    rng: Optional[RngStream] = None,
    dropout_rate: Optional[float] = None,
) -> tuple[Node, Tape]:
    """Fresh-tape forward pass; returns ``(logits_node, tape)``."""
    tape = Tape()
    nodes = {name: tape.param(name, value) for name, value in params.items()}
    return build_logits(tape, nodes, spec, X, rng, dropout_rate), tape


def logits(params: ParamSet, spec: ModelSpec, X) -> np.ndarray:
    """Evaluation-mode logits (no dropout, no tape)."""
    X = np.asarray(X, dtype=np.float64)
    _check_input(spec, X)
    act = np.tanh if spec.activation == "tanh" else (lambda z: np.where(z > 0, z, 0.0))
    h = X
    for i in range(len(spec.hidden_dims)):
        h = act(h @ params[f"layer{i}.weight"] + params[f"layer{i}.bias"])
    return h @ params["out.weight"] + params["out.bias"]


def predict(params: ParamSet, spec: ModelSpec, X) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lower class
    return np.argmax(logits(params, spec, X), axis=1)
