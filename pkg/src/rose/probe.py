"""Synthetic feature-preference probes.

The core signal is the XOR of the signs of the first two coordinates, which
no linear read-out can express.  A surface cue is attached to every example:

* ``indicator``: one extra coordinate holding roughly +1 (flag 1) or -1
  (flag 0);
* ``magnitude``: the whole input vector is inflated by ``INFLATION`` when
  the flag is 1 (a length analog).

In the ambiguous training split the flag always equals the label.  In the
disambiguating test split the flag is a fair coin and only the core signal
predicts the label.

Probe runs follow a fine-tuning protocol: a backbone is first pre-trained on
core-labeled data whose surface cue is uninformative, its classification
head is re-initialized, and only then is it fine-tuned on the ambiguous split
with the strategy under test.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .autograd import RngStream
from .model import ModelSpec, ParamSet, forward, init_params, logits, predict

__all__ = [
    "LabeledSet",
    "ProbeProtocol",
    "ProbeResult",
    "ProbeTaskSpec",
    "dropout_inconsistency_ratio",
    "generate_probe_task",
    "mcc",
    "parse_perturbation",
    "perturb",
    "perturbation_eval",
    "pretrain_backbone",
    "run_probe",
    "surface_baseline",
    "window_inconsistency",
]

SURFACE_KINDS = ("indicator", "magnitude")
INFLATION = 2.0
CORE_LOW, CORE_HIGH = 0.2, 1.0


@dataclass(frozen=True)
class ProbeTaskSpec:
    surface_kind: str = "indicator"
    core_dim: int = 4
    noise_std: float = 0.0
    train_size: int = 512
    test_size: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.surface_kind not in SURFACE_KINDS:
            raise ValueError(f"surface_kind must be one of {SURFACE_KINDS}, got {self.surface_kind!r}")
        if self.core_dim < 2:
            raise ValueError(f"core_dim must be >= 2, got {self.core_dim}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.train_size < 1 or self.test_size < 1:
            raise ValueError("train_size and test_size must be positive")

    @property
    def input_dim(self) -> int:
        return self.core_dim + (1 if self.surface_kind == "indicator" else 0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ProbeProtocol:
    """Hyperparameters of a probe run shared by every strategy."""

    hidden_dims: tuple = (32,)
    activation: str = "tanh"
    dropout_rate: float = 0.1
    pretrain_size: int = 1000
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-2
    learning_rate: float = 3e-3
    epochs: int = 10
    batch_size: int = 32
    c_h_first: float = 0.6
    c_h_second: float = 0.6
    gamma: float = 0.5
    granularity: str = "group"
    gaussian_sigma: float = 0.3


@dataclass
class LabeledSet:
    X: np.ndarray
    y: np.ndarray
    surface: np.ndarray
    kind: str = "indicator"

    def __len__(self):
        return len(self.y)

    @property
    def surface_agreement(self) -> float:
        return float(np.mean(self.surface == self.y))


@dataclass
class ProbeResult:
    mcc: float
    accuracy: float
    per_seed: dict


def _balanced_labels(rng: np.random.Generator, n: int) -> np.ndarray:
    y = np.zeros(n, dtype=np.int64)
    y[: n // 2] = 1
    return rng.permutation(y)


def _make_split(rng, spec: ProbeTaskSpec, n: int, ambiguous: bool) -> LabeledSet:
    y = _balanced_labels(rng, n)
    s0 = rng.choice([-1.0, 1.0], size=n)
    s1 = np.where(y == 1, -s0, s0)
    core = rng.normal(size=(n, spec.core_dim))
    core[:, 0] = s0 * rng.uniform(CORE_LOW, CORE_HIGH, size=n)
    core[:, 1] = s1 * rng.uniform(CORE_LOW, CORE_HIGH, size=n)
    flag = y.copy() if ambiguous else rng.integers(0, 2, size=n)

    if spec.surface_kind == "indicator":
        cue = (2.0 * flag - 1.0) + spec.noise_std * rng.normal(size=n)
        X = np.column_stack([core, cue])
    else:
        scale = np.where(flag == 1, INFLATION, 1.0) * np.exp(spec.noise_std * rng.normal(size=n))
        X = core * scale[:, None]
    return LabeledSet(X=X, y=y, surface=flag.astype(np.int64), kind=spec.surface_kind)


def generate_probe_task(spec: ProbeTaskSpec) -> tuple[LabeledSet, LabeledSet]:
    """Ambiguous training split and disambiguating test split."""
    train_ss, test_ss, _ = np.random.SeedSequence(spec.seed).spawn(3)
    return (
        _make_split(np.random.default_rng(train_ss), spec, spec.train_size, ambiguous=True),
        _make_split(np.random.default_rng(test_ss), spec, spec.test_size, ambiguous=False),
    )


def generate_pretraining_set(spec: ProbeTaskSpec, size: int) -> LabeledSet:
    """Core-labeled examples with a coin-flip surface cue (independent of both splits)."""
    ss = np.random.SeedSequence(spec.seed).spawn(3)[2]
    return _make_split(np.random.default_rng(ss), spec, size, ambiguous=False)


def xor_labels(X: np.ndarray) -> np.ndarray:
    return ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(np.int64)


def mcc(predictions, labels) -> float:
    """Binary Matthews correlation; 0 when any confusion-matrix marginal is empty."""
    p = np.asarray(predictions).astype(bool).ravel()
    t = np.asarray(labels).astype(bool).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and labels must be non-empty and of equal length")
    tp = float(np.sum(p & t))
    tn = float(np.sum(~p & ~t))
    fp = float(np.sum(p & ~t))
    fn = float(np.sum(~p & t))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return float((tp * tn - fp * fn) / np.sqrt(denom))


def parse_perturbation(text: str) -> tuple[str, float]:
    """``"gaussian:<sigma>"`` or ``"surface_flip"``."""
    if text == "surface_flip":
        return "surface_flip", 0.0
    kind, _, value = text.partition(":")
    if kind == "gaussian" and value:
        sigma = float(value)
        if sigma < 0:
            raise ValueError(f"gaussian sigma must be >= 0, got {sigma}")
        return "gaussian", sigma
    raise ValueError(f"unknown perturbation {text!r}; use gaussian:<sigma> or surface_flip")


def perturb(data: LabeledSet, kind: str, sigma: float = 0.0, seed: int = 0) -> LabeledSet:
    """Perturbed copy of ``data``; the original is left untouched."""
    if kind == "gaussian":
        if sigma < 0:
            raise ValueError(f"gaussian sigma must be >= 0, got {sigma}")
        if sigma == 0:
            return replace(data, X=data.X.copy())
        noise = np.random.default_rng(seed).normal(scale=sigma, size=data.X.shape)
        return replace(data, X=data.X + noise)
    if kind == "surface_flip":
        X = data.X.copy()
        if data.kind == "indicator":
            X[:, -1] = -X[:, -1]
        else:
            factor = np.where(data.surface == 1, 1.0 / INFLATION, INFLATION)
            X = X * factor[:, None]
        return replace(data, X=X, surface=1 - data.surface)
    raise ValueError(f"unknown perturbation kind {kind!r}")


def perturbation_eval(params: ParamSet, spec: ModelSpec, data: LabeledSet, kind: str,
                      sigma: float = 0.0, seed: int = 0) -> float:
    perturbed = perturb(data, kind, sigma, seed)
    return float(np.mean(predict(params, spec, perturbed.X) == perturbed.y))


def dropout_inconsistency_ratio(params: ParamSet, spec: ModelSpec, batches: Iterable,
                                seed: int, steps: Optional[Iterable[int]] = None) -> float:
    """Percentage of examples whose two dropout-pass predictions disagree.

    ``batches`` yields input arrays (or ``(X, y)`` pairs); batch ``k`` uses the
    dropout stream of step ``steps[k]`` (default ``1, 2, ...``).
    """
    if spec.dropout_rate <= 0:
        raise ValueError("dropout is disabled; the inconsistency ratio would be identically 0")
    batches = list(batches)
    steps = list(range(1, len(batches) + 1)) if steps is None else list(steps)
    if len(steps) != len(batches):
        raise ValueError("one step index is needed per batch")
    disagree = total = 0
    for step, batch in zip(steps, batches):
        X = batch[0] if isinstance(batch, tuple) else batch
        z0, _ = forward(params, spec, X, RngStream(seed, step, 0))
        z1, _ = forward(params, spec, X, RngStream(seed, step, 1))
        disagree += int(np.sum(np.argmax(z0.value, axis=1) != np.argmax(z1.value, axis=1)))
        total += len(X)
    if total == 0:
        raise ValueError("no examples in the batch stream")
    return 100.0 * disagree / total


def window_inconsistency(history, start: int, stop: int) -> float:
    """Percentage of disagreeing dropout-pass predictions recorded in steps ``[start, stop]``."""
    rows = [r for r in history if start <= r.step <= stop and r.inconsistency is not None]
    if not rows:
        raise ValueError(f"no inconsistency records in steps [{start}, {stop}]")
    weight = sum(r.batch_size for r in rows)
    return 100.0 * sum(r.inconsistency * r.batch_size for r in rows) / weight


PRETRAIN_SEED_OFFSET = 10_000
STRATEGIES = ("vanilla", "first", "second", "ensemble")


def pretrain_backbone(task: ProbeTaskSpec, protocol: ProbeProtocol, seed: int) -> ParamSet:
    """Vanilla-trained backbone with a freshly initialized classification head."""
    from .estimator import RoseClassifier

    data = generate_pretraining_set(task, protocol.pretrain_size)
    est = RoseClassifier(
        hidden_dims=protocol.hidden_dims,
        activation=protocol.activation,
        dropout_rate=protocol.dropout_rate,
        mode="vanilla",
        learning_rate=protocol.pretrain_lr,
        epochs=protocol.pretrain_epochs,
        batch_size=protocol.batch_size,
        random_state=seed + PRETRAIN_SEED_OFFSET,
    ).fit(data.X, data.y)
    params = est.params_.copy()
    fresh = init_params(est.model_spec_, seed)
    params["out.weight"] = fresh["out.weight"]
    params["out.bias"] = fresh["out.bias"]
    return params


def probe_estimator(strategy: str, protocol: ProbeProtocol, seed: int, **overrides):
    from .estimator import RoseClassifier

    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    kw = dict(
        hidden_dims=protocol.hidden_dims,
        activation=protocol.activation,
        dropout_rate=protocol.dropout_rate,
        learning_rate=protocol.learning_rate,
        epochs=protocol.epochs,
        batch_size=protocol.batch_size,
        c_h_first=protocol.c_h_first,
        c_h_second=protocol.c_h_second,
        gamma=protocol.gamma,
        granularity=protocol.granularity,
        random_state=seed,
    )
    if strategy == "vanilla":
        kw["mode"] = "vanilla"
    else:
        kw.update(mode="rose", strategy=strategy)
    kw.update(overrides)
    return RoseClassifier(**kw)


def run_probe(strategy: str, task: ProbeTaskSpec, protocol: ProbeProtocol = ProbeProtocol(),
              backbone: Optional[ParamSet] = None, **overrides) -> dict:
    """Fine-tune one model and score it on the disambiguating split.

    Returns a results row plus the fitted estimator under ``"estimator"``.
    """
    train, test = generate_probe_task(task)
    if backbone is None:
        backbone = pretrain_backbone(task, protocol, task.seed)
    est = probe_estimator(strategy, protocol, task.seed, **overrides).fit(train.X, train.y, init=backbone)
    spec, params = est.model_spec_, est.params_
    pred = predict(params, spec, test.X)
    return {
        "seed": task.seed,
        "strategy": strategy,
        "mcc": mcc(pred, test.y),
        "clean_acc": float(np.mean(pred == test.y)),
        "gaussian_acc": perturbation_eval(params, spec, test, "gaussian", protocol.gaussian_sigma, task.seed),
        "surface_flip_acc": perturbation_eval(params, spec, test, "surface_flip"),
        "estimator": est,
    }


def surface_feature(data: LabeledSet) -> np.ndarray:
    if data.kind == "indicator":
        return data.X[:, -1:]
    return np.linalg.norm(data.X, axis=1, keepdims=True)


def surface_baseline(task: ProbeTaskSpec, protocol: ProbeProtocol = ProbeProtocol()) -> dict:
    """One-feature logistic regression on the surface cue alone."""
    from sklearn.linear_model import LogisticRegression

    train, test = generate_probe_task(task)
    clf = LogisticRegression().fit(surface_feature(train), train.y)
    flipped = perturb(test, "surface_flip")
    noisy = perturb(test, "gaussian", protocol.gaussian_sigma, task.seed)
    pred = clf.predict(surface_feature(test))
    return {
        "seed": task.seed,
        "strategy": "surface_only",
        "mcc": mcc(pred, test.y),
        "clean_acc": float(np.mean(pred == test.y)),
        "gaussian_acc": float(np.mean(clf.predict(surface_feature(noisy)) == noisy.y)),
        "surface_flip_acc": float(np.mean(clf.predict(surface_feature(flipped)) == flipped.y)),
        "train_acc": float(clf.score(surface_feature(train), train.y)),
    }


def surface_only_params(spec: ModelSpec, gain: float = 5.0) -> ParamSet:
    """Network that predicts class 1 iff the indicator coordinate is positive."""
    params = init_params(spec, 0)
    for name in params:
        params[name] = np.zeros_like(params[name])
    params["layer0.weight"][-1, 0] = 1.0
    for i in range(1, len(spec.hidden_dims)):
        params[f"layer{i}.weight"][0, 0] = 1.0
    params["out.weight"][0, 0] = -gain
    params["out.weight"][0, 1] = gain
    return params


def eval_accuracy(params: ParamSet, spec: ModelSpec, data: LabeledSet) -> float:
    return float(np.mean(np.argmax(logits(params, spec, data.X), axis=1) == data.y))
