"""AdamW with risk-masked selective updates.

``rose_step`` runs one masked AdamW iteration:

1. ``g`` = gradient of cross-entropy at the current parameters;
2. optionally, KL-gradient from a dropout-twice forward (first-order risks);
3. second-order risks from ``g`` against the previous first moment;
4. mask ``M`` from the risks;
5. ``g' = M*g + (1 - M)*m_prev``;
6. AdamW moment updates with ``g'`` and bias correction;
7. ``theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta) * M``.

``adamw_step`` is an independent plain AdamW used as the reference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .autograd import RngStream, Tape, backward
from .losses import rdrop_loss, sce_loss, sym_kl_loss
from .masking import Mask, RoseConfig, build_report, calculate_mask
from .model import ModelSpec, ParamSet, build_logits

__all__ = [
    "NonFiniteGradientError",
    "OptimizerState",
    "StepReport",
    "adamw_step",
    "init_state",
    "masked_adamw_update",
    "rdrop_rose_step",
    "rdrop_step",
    "rose_step",
    "step_gradients",
    "vanilla_step",
]

logger = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    t: int
    m: ParamSet
    v: ParamSet
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def hyper(self) -> dict:
        return dict(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                    eps=self.eps, weight_decay=self.weight_decay)


def init_state(params: ParamSet, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0) -> OptimizerState:
    if lr < 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1) or eps <= 0:
        raise ValueError("invalid AdamW hyperparameters")
    zeros = ParamSet((k, np.zeros_like(v)) for k, v in params.items())
    return OptimizerState(0, zeros, zeros.copy(), lr, beta1, beta2, eps, weight_decay)


@dataclass
class StepReport:
    step: int
    loss_sce: float
    loss_kl: Optional[float] = None
    mask_ones_fraction: float = 1.0
    mean_first_risk: Optional[float] = None
    mean_second_risk: Optional[float] = None
    grad_norm: float = 0.0
    update_norm: float = 0.0
    group_update_norms: dict = field(default_factory=dict)
    inconsistency: Optional[float] = None
    batch_size: int = 0
    epoch: int = 0


def _check_finite(grads: Mapping[str, np.ndarray], what: str):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"{what} gradient for {name!r} is not finite")


def _check_aligned(params: ParamSet, state: OptimizerState, grads: Mapping[str, np.ndarray]):
    for name, p in params.items():
        if state.m[name].shape != p.shape or state.v[name].shape != p.shape:
            raise ValueError(f"optimizer state for {name!r} does not match parameter shape {p.shape}")
        if grads[name].shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {grads[name].shape}, expected {p.shape}")


def adamw_step(params: ParamSet, state: OptimizerState, grads: Mapping[str, np.ndarray]):
    """Plain AdamW with decoupled weight decay. Returns ``(params, state)``."""
    _check_aligned(params, state, grads)
    _check_finite(grads, "loss")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = ParamSet(), ParamSet(), ParamSet()
    for name, theta in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p[name] = theta - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * theta)
        new_m[name], new_v[name] = m, v
    return new_p, replace(state, t=t, m=new_m, v=new_v)


def masked_adamw_update(params: ParamSet, state: OptimizerState, grads: Mapping[str, np.ndarray],
                        gates: Mapping[str, np.ndarray]):
    """Gradient blending plus masked AdamW update for given per-group gates."""
    _check_aligned(params, state, grads)
    _check_finite(grads, "loss")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = ParamSet(), ParamSet(), ParamSet()
    for name, theta in params.items():
        gate = np.broadcast_to(gates[name], theta.shape)
        m_prev = state.m[name]
        blended = gate * grads[name] + (1.0 - gate) * m_prev
        m = b1 * m_prev + (1 - b1) * blended
        v = b2 * state.v[name] + (1 - b2) * blended * blended
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p[name] = theta - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * theta) * gate
        new_m[name], new_v[name] = m, v
    return new_p, replace(state, t=t, m=new_m, v=new_v)


def _norm(arrays) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def _inconsistency(logits_a: np.ndarray, logits_b: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits_a, axis=1) != np.argmax(logits_b, axis=1)))


def _finish(step, old: ParamSet, new: ParamSet, grads, **fields) -> StepReport:
    deltas = {k: new[k] - old[k] for k in old}
    return StepReport(
        step=step,
        grad_norm=_norm(grads.values()),
        update_norm=_norm(deltas.values()),
        group_update_norms={k: _norm([d]) for k, d in deltas.items()},
        **fields,
    )


def _two_pass_tape(params, spec, X, y, rng: RngStream):
    tape = Tape()
    nodes = {k: tape.param(k, v) for k, v in params.items()}
    z0 = build_logits(tape, nodes, spec, X, rng.with_pass(0))
    z1 = build_logits(tape, nodes, spec, X, rng.with_pass(1))
    return tape, z0, z1


def step_gradients(params: ParamSet, spec: ModelSpec, X, y, rng: RngStream, two_pass: bool = False):
    """Cross-entropy gradients on pass 0 and, if requested, KL gradients.

    Returns ``(sce_grads, sce_value, kl_grads, kl_value, z0, z1)``; the KL
    entries are ``None`` when ``two_pass`` is false.
    """
    if not two_pass:
        tape = Tape()
        nodes = {k: tape.param(k, v) for k, v in params.items()}
        z0 = build_logits(tape, nodes, spec, X, rng.with_pass(0))
        sce = sce_loss(tape, z0, y)
        return backward(tape, sce), float(sce.value), None, None, z0.value, None
    tape, z0, z1 = _two_pass_tape(params, spec, X, y, rng)
    sce = sce_loss(tape, z0, y)
    kl = sym_kl_loss(tape, tape.log_softmax(z0), tape.log_softmax(z1))
    # cross-entropy backward first: the second-order risk needs g before anything else
    sce_grads = backward(tape, sce)
    kl_grads = backward(tape, kl)
    return sce_grads, float(sce.value), kl_grads, float(kl.value), z0.value, z1.value


def vanilla_step(params: ParamSet, state: OptimizerState, batch, spec: ModelSpec, seed: int):
    """One AdamW step on pass-0 cross-entropy (dropout on)."""
    X, y = batch
    rng = RngStream(seed, state.t + 1)
    grads, sce, *_ = step_gradients(params, spec, X, y, rng)
    new_params, new_state = adamw_step(params, state, grads)
    return new_params, new_state, _finish(new_state.t, params, new_params, grads,
                                          loss_sce=sce, batch_size=len(y))


def rose_step(params: ParamSet, state: OptimizerState, batch, spec: ModelSpec, config: RoseConfig,
              seed: int, sce_source: str = "pass0"):
    """One masked AdamW step. Returns ``(params, state, StepReport)``.

    ``sce_source`` selects which forward pass drives the weight update:
    ``"pass0"`` reuses the first dropout pass, ``"clean"`` runs an extra
    dropout-free pass.
    """
    X, y = batch
    if len(y) == 0:
        raise ValueError("empty batch")
    rng = RngStream(seed, state.t + 1)
    dropout_active = spec.dropout_rate > 0
    two_pass = config.needs_first_order and dropout_active
    grads, sce, kl_grads, kl, z0, z1 = step_gradients(params, spec, X, y, rng, two_pass)
    if sce_source == "clean":
        tape = Tape()
        nodes = {k: tape.param(k, v) for k, v in params.items()}
        clean = sce_loss(tape, build_logits(tape, nodes, spec, X, None), y)
        grads, sce = backward(tape, clean), float(clean.value)
    elif sce_source != "pass0":
        raise ValueError(f"sce_source must be 'pass0' or 'clean', got {sce_source!r}")
    _check_finite(grads, "cross-entropy")
    if kl_grads is not None:
        _check_finite(kl_grads, "KL")

    report = build_report(config, grads, state.m, state.beta1, kl_grads, dropout_active)
    mask = calculate_mask(config, report, {k: v.shape for k, v in params.items()})
    new_params, new_state = masked_adamw_update(params, state, grads, mask.expand())
    return new_params, new_state, _finish(
        new_state.t, params, new_params, grads,
        loss_sce=sce,
        loss_kl=kl,
        mask_ones_fraction=mask.ones_fraction,
        mean_first_risk=None if report.first is None else float(report.first.mean()),
        mean_second_risk=float(report.second.mean()),
        inconsistency=None if z1 is None else _inconsistency(z0, z1),
        batch_size=len(y),
    )


def _rdrop_gradients(params, spec, X, y, rng, weight):
    tape, z0, z1 = _two_pass_tape(params, spec, X, y, rng)
    sce0, sce1 = sce_loss(tape, z0, y), sce_loss(tape, z1, y)
    kl = sym_kl_loss(tape, tape.log_softmax(z0), tape.log_softmax(z1))
    total = rdrop_loss(tape, sce0, sce1, kl, weight)
    ce = tape.scale(tape.add(sce0, sce1), 0.5)
    return tape, ce, kl, total, z0.value, z1.value


def rdrop_step(params: ParamSet, state: OptimizerState, batch, spec: ModelSpec, weight: float, seed: int):
    """Plain AdamW on the R-Drop objective."""
    X, y = batch
    rng = RngStream(seed, state.t + 1)
    tape, ce, kl, total, z0, z1 = _rdrop_gradients(params, spec, X, y, rng, weight)
    grads = backward(tape, total)
    new_params, new_state = adamw_step(params, state, grads)
    return new_params, new_state, _finish(
        new_state.t, params, new_params, grads,
        loss_sce=float(ce.value), loss_kl=float(kl.value),
        inconsistency=_inconsistency(z0, z1), batch_size=len(y),
    )


def rdrop_rose_step(params: ParamSet, state: OptimizerState, batch, spec: ModelSpec, config: RoseConfig,
                    weight: float, seed: int):
    """R-Drop objective with masks from its decoupled components.

    First-order risks come from the KL component's gradient, second-order
    risks from the cross-entropy component's gradient; the update itself uses
    the gradient of the full weighted objective.
    """
    X, y = batch
    if len(y) == 0:
        raise ValueError("empty batch")
    rng = RngStream(seed, state.t + 1)
    tape, ce, kl, total, z0, z1 = _rdrop_gradients(params, spec, X, y, rng, weight)
    ce_grads = backward(tape, ce)
    kl_grads = backward(tape, kl)
    grads = backward(tape, total)
    for what, gs in (("cross-entropy", ce_grads), ("KL", kl_grads), ("R-Drop", grads)):
        _check_finite(gs, what)

    dropout_active = spec.dropout_rate > 0
    report = build_report(config, ce_grads, state.m, state.beta1,
                          kl_grads if config.needs_first_order else None, dropout_active)
    mask: Mask = calculate_mask(config, report, {k: v.shape for k, v in params.items()})
    new_params, new_state = masked_adamw_update(params, state, grads, mask.expand())
    return new_params, new_state, _finish(
        new_state.t, params, new_params, grads,
        loss_sce=float(ce.value),
        loss_kl=float(kl.value),
        mask_ones_fraction=mask.ones_fraction,
        mean_first_risk=None if report.first is None else float(report.first.mean()),
        mean_second_risk=float(report.second.mean()),
        inconsistency=_inconsistency(z0, z1),
        batch_size=len(y),
    )
