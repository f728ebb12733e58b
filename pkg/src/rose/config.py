"""Run configuration: a strict, canonical JSON document.

Example::

    {
      "mode": "rose",
      "model": {"hidden_dims": [32], "activation": "tanh", "dropout_rate": 0.1},
      "optimizer": {"lr": 0.01, "beta1": 0.9, "beta2": 0.999, "eps": 1e-08,
                    "weight_decay": 0.0},
      "rose": {"strategy": "ensemble", "c_h_first": 0.6, "c_h_second": 0.6,
               "gamma": 0.5, "granularity": "group", "momentum_floor": 1e-12,
               "hard_ensemble": false},
      "rdrop_weight": 1.0,
      "data": {"kind": "synthetic", "task": {"surface_kind": "indicator", ...}},
      "epochs": 10, "batch_size": 32, "seed": 0
    }

``data`` may instead be ``{"kind": "csv", "train": "train.csv", "eval": "eval.csv"}``
(relative paths resolve against the config file's directory).  The input
width and class count are taken from the data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .estimator import MODES
from .masking import RoseConfig
from .model import ACTIVATIONS
from .probe import ProbeTaskSpec

__all__ = ["ConfigError", "DataSource", "ModelSection", "OptimizerSection", "RunConfig", "load_config"]


class ConfigError(ValueError):
    pass


def _strict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ModelSection:
    hidden_dims: tuple = (32,)
    activation: str = "tanh"
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be a non-empty list of positive integers")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class OptimizerSection:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("invalid AdamW hyperparameters")


@dataclass(frozen=True)
class DataSource:
    kind: str = "synthetic"
    task: Optional[ProbeTaskSpec] = None
    train: Optional[str] = None
    eval: Optional[str] = None

    def __post_init__(self):
        if self.kind == "synthetic":
            if self.train is not None or self.eval is not None:
                raise ValueError("synthetic data takes no csv paths")
            if self.task is None:
                object.__setattr__(self, "task", ProbeTaskSpec())
            elif isinstance(self.task, dict):
                object.__setattr__(self, "task", _strict(ProbeTaskSpec, self.task, "data.task"))
        elif self.kind == "csv":
            if self.task is not None:
                raise ValueError("csv data takes no synthetic task")
            if not self.train:
                raise ValueError("csv data requires a 'train' path")
        else:
            raise ValueError(f"data kind must be 'synthetic' or 'csv', got {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "synthetic":
            return {"kind": "synthetic", "task": self.task.to_dict()}
        out = {"kind": "csv", "train": self.train}
        if self.eval is not None:
            out["eval"] = self.eval
        return out


@dataclass(frozen=True)
class RunConfig:
    mode: str = "vanilla"
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    rose: Optional[RoseConfig] = None
    rdrop_weight: float = 1.0
    data: DataSource = field(default_factory=DataSource)
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        masked = self.mode in ("rose", "rdrop_rose")
        if masked and self.rose is None:
            raise ConfigError(f"mode {self.mode!r} requires a 'rose' section")
        if not masked and self.rose is not None:
            raise ConfigError(f"mode {self.mode!r} does not accept a 'rose' section")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError("epochs must be a non-negative integer")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError("batch_size must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.rdrop_weight < 0:
            raise ConfigError("rdrop_weight must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        kw = dict(data)
        if "model" in kw:
            kw["model"] = _strict(ModelSection, kw["model"], "model")
        if "optimizer" in kw:
            kw["optimizer"] = _strict(OptimizerSection, kw["optimizer"], "optimizer")
        if kw.get("rose") is not None:
            kw["rose"] = _strict(RoseConfig, kw["rose"], "rose")
        if "data" in kw:
            kw["data"] = _strict(DataSource, kw["data"], "data")
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        model = asdict(self.model)
        model["hidden_dims"] = list(self.model.hidden_dims)
        return {
            "mode": self.mode,
            "model": model,
            "optimizer": asdict(self.optimizer),
            "rose": None if self.rose is None else self.rose.to_dict(),
            "rdrop_weight": self.rdrop_weight,
            "data": self.data.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    def estimator_params(self) -> dict:
        """Keyword arguments for :class:`rose.estimator.RoseClassifier`."""
        kw = dict(
            hidden_dims=self.model.hidden_dims,
            activation=self.model.activation,
            dropout_rate=self.model.dropout_rate,
            mode=self.mode,
            rdrop_weight=self.rdrop_weight,
            learning_rate=self.optimizer.lr,
            beta1=self.optimizer.beta1,
            beta2=self.optimizer.beta2,
            eps=self.optimizer.eps,
            weight_decay=self.optimizer.weight_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
            random_state=self.seed,
        )
        if self.rose is not None:
            kw.update(
                strategy=self.rose.strategy,
                c_h_first=self.rose.c_h_first,
                c_h_second=self.rose.c_h_second,
                gamma=self.rose.gamma,
                granularity=self.rose.granularity,
                momentum_floor=self.rose.momentum_floor,
                hard_ensemble=self.rose.hard_ensemble,
            )
        return kw


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_json(text)
