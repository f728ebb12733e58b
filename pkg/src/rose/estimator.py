"""scikit-learn compatible classifier trained with (selective) AdamW."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .losses import sce_value
from .masking import RoseConfig
from .model import ModelSpec, ParamSet, init_params, logits
from .optimizer import (
    init_state,
    rdrop_rose_step,
    rdrop_step,
    rose_step,
    vanilla_step,
)

__all__ = ["MODES", "RoseClassifier", "batch_order"]

logger = logging.getLogger(__name__)

MODES = ("vanilla", "rose", "rdrop", "rdrop_rose")


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, 1, epoch]).permutation(n)


class RoseClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier fine-tuned with robust selective AdamW.

    ``mode`` picks the training rule: ``"vanilla"`` (AdamW on cross-entropy),
    ``"rose"`` (risk-masked AdamW, see :mod:`rose.optimizer`), ``"rdrop"``
    (AdamW on the dropout-consistency objective) or ``"rdrop_rose"``
    (masked AdamW on that objective).  The ``strategy``/``c_h_*``/``gamma``/
    ``granularity`` parameters only matter for the two masked modes.

    Fitted attributes: ``classes_``, ``params_``, ``state_``, ``history_``
    (one ``StepReport`` per optimizer step) and ``model_spec_``.
    """

    def __init__(
        self,
        hidden_dims=(32,),
        activation="tanh",
        dropout_rate=0.1,
        mode="rose",
        strategy="ensemble",
        c_h_first=0.6,
        c_h_second=0.6,
        gamma=0.5,
        granularity="group",
        momentum_floor=1e-12,
        hard_ensemble=False,
        rdrop_weight=1.0,
        sce_source="pass0",
        learning_rate=1e-3,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        weight_decay=0.0,
        epochs=10,
        batch_size=32,
        random_state=0,
    ):
        self.hidden_dims = hidden_dims
        self.activation = activation
        self.dropout_rate = dropout_rate
        self.mode = mode
        self.strategy = strategy
        self.c_h_first = c_h_first
        self.c_h_second = c_h_second
        self.gamma = gamma
        self.granularity = granularity
        self.momentum_floor = momentum_floor
        self.hard_ensemble = hard_ensemble
        self.rdrop_weight = rdrop_weight
        self.sce_source = sce_source
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def rose_config(self) -> RoseConfig:
        return RoseConfig(
            strategy=self.strategy,
            c_h_first=self.c_h_first,
            c_h_second=self.c_h_second,
            gamma=self.gamma,
            granularity=self.granularity,
            momentum_floor=self.momentum_floor,
            hard_ensemble=self.hard_ensemble,
        )

    def _validate_hyper(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.epochs) < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.rdrop_weight < 0:
            raise ValueError(f"rdrop_weight must be >= 0, got {self.rdrop_weight}")
        if self.random_state is None or int(self.random_state) < 0:
            raise ValueError("random_state must be a non-negative integer")

    def fit(self, X, y, init=None):
        """Train from a fresh initialization, or from ``init`` (a ParamSet) if given."""
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self._validate_hyper()
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes to fit a classifier")
        seed = int(self.random_state)
        spec = ModelSpec(
            input_dim=X.shape[1],
            hidden_dims=tuple(self.hidden_dims),
            classes=len(self.classes_),
            activation=self.activation,
            dropout_rate=self.dropout_rate,
        )
        if init is None:
            params = init_params(spec, seed)
        else:
            params = ParamSet(init).copy()
            if not params.same_structure(init_params(spec, 0)):
                raise ValueError("initial parameters do not match the model structure")
        state = init_state(params, self.learning_rate, self.beta1, self.beta2, self.eps, self.weight_decay)
        config = self.rose_config() if self.mode in ("rose", "rdrop_rose") else None

        history = []
        n, bs = len(y_enc), int(self.batch_size)
        for epoch in range(int(self.epochs)):
            order = batch_order(n, seed, epoch)
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                batch = (X[idx], y_enc[idx])
                if self.mode == "vanilla":
                    params, state, report = vanilla_step(params, state, batch, spec, seed)
                elif self.mode == "rose":
                    params, state, report = rose_step(params, state, batch, spec, config, seed,
                                                      self.sce_source)
                elif self.mode == "rdrop":
                    params, state, report = rdrop_step(params, state, batch, spec,
                                                       self.rdrop_weight, seed)
                else:
                    params, state, report = rdrop_rose_step(params, state, batch, spec, config,
                                                            self.rdrop_weight, seed)
                report.epoch = epoch
                history.append(report)
            logger.debug("epoch %d done at step %d, last loss %.6g", epoch, state.t,
                         history[-1].loss_sce if history else float("nan"))

        self.model_spec_ = spec
        self.params_ = params
        self.state_ = state
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return logits(self.params_, self.model_spec_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def loss(self, X, y) -> float:
        """Dropout-free mean cross-entropy on ``(X, y)``."""
        y = np.asarray(y)
        y_enc = np.searchsorted(self.classes_, y)
        if np.any(y_enc >= len(self.classes_)) or np.any(self.classes_[np.minimum(y_enc, len(self.classes_) - 1)] != y):
            raise ValueError("y contains labels unseen during fit")
        return sce_value(self.decision_function(X), y_enc)

    @classmethod
    def from_params(cls, params: ParamSet, spec: ModelSpec, classes=None, **kwargs) -> "RoseClassifier":
        """Wrap existing parameters as a fitted estimator (no training)."""
        est = cls(hidden_dims=spec.hidden_dims, activation=spec.activation,
                  dropout_rate=spec.dropout_rate, **kwargs)
        est.model_spec_ = spec
        est.params_ = ParamSet(params).copy()
        est.state_ = None
        est.history_ = []
        est.classes_ = np.arange(spec.classes) if classes is None else np.asarray(classes)
        est.n_features_in_ = spec.input_dim
        return est
