"""Risk scores and update masks for robust selective fine-tuning.

A *unit* is either a whole parameter group (``granularity="group"``) or a
single scalar (``granularity="scalar"``, groups flattened in declaration
order).  Two risks are scored per unit:

* first-order: norm of the unit's gradient of the dropout-twice symmetric KL;
* second-order: ``|(1 - beta1) * ||g|| / ||m_prev|| - 1|``, with units whose
  momentum norm is below ``momentum_floor`` scored 0.

Low-risk units are kept.  The lowest ``floor(c_h * n_units)`` units under a
stable ascending sort (ties broken by declaration order) get gate 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np

__all__ = [
    "Mask",
    "RiskReport",
    "RoseConfig",
    "calculate_mask",
    "ensemble_mask",
    "first_order_risks",
    "rank_threshold_mask",
    "second_order_risk",
    "second_order_risks",
    "selected_count",
]

STRATEGIES = ("first", "second", "ensemble")
GRANULARITIES = ("group", "scalar")
# absorbs binary rounding in c_h * n (e.g. 0.29 * 100 == 28.999999999999996)
_COUNT_SLACK = 1e-9


@dataclass(frozen=True)
class RoseConfig:
    strategy: str = "ensemble"
    c_h_first: float = 0.6
    c_h_second: float = 0.6
    gamma: float = 0.5
    granularity: str = "group"
    momentum_floor: float = 1e-12
    hard_ensemble: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}")
        for name in ("c_h_first", "c_h_second"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if not self.momentum_floor > 0:
            raise ValueError(f"momentum_floor must be positive, got {self.momentum_floor}")

    @property
    def needs_first_order(self) -> bool:
        return self.strategy in ("first", "ensemble")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RiskReport:
    """Per-unit risks in declaration order.

    ``first`` is ``None`` when no dropout-twice pass was run this step.
    """

    unit_ids: list
    second: np.ndarray
    first: Optional[np.ndarray] = None
    granularity: str = "group"
    dropout_active: bool = True

    def __len__(self):
        return len(self.unit_ids)


@dataclass
class Mask:
    """Gate per unit, plus the layout needed to broadcast it onto groups."""

    values: np.ndarray
    granularity: str
    layout: dict  # group name -> shape

    @property
    def ones_fraction(self) -> float:
        """Mean gate per scalar parameter (ones fraction for binary masks)."""
        if self.granularity == "scalar":
            return float(self.values.mean())
        sizes = np.array([math.prod(s) for s in self.layout.values()], dtype=np.float64)
        return float((self.values * sizes).sum() / sizes.sum())

    def expand(self) -> dict[str, np.ndarray]:
        """Per-group gate arrays shaped like the parameters."""
        out = {}
        if self.granularity == "group":
            for gate, (name, shape) in zip(self.values, self.layout.items()):
                out[name] = np.full(shape, gate)
            return out
        offset = 0
        for name, shape in self.layout.items():
            size = math.prod(shape)
            out[name] = self.values[offset:offset + size].reshape(shape)
            offset += size
        return out


def _layout(arrays: Mapping[str, np.ndarray]) -> dict:
    return {name: np.shape(a) for name, a in arrays.items()}


def unit_ids(arrays: Mapping[str, np.ndarray], granularity: str) -> list:
    if granularity == "group":
        return list(arrays)
    return [(name, idx) for name, a in arrays.items() for idx in np.ndindex(np.shape(a))]


def _unit_norms(arrays: Mapping[str, np.ndarray], granularity: str) -> np.ndarray:
    if granularity == "group":
        return np.array([np.sqrt(np.sum(np.square(a))) for a in arrays.values()])
    if granularity == "scalar":
        return np.abs(np.concatenate([np.ravel(a) for a in arrays.values()]))
    raise ValueError(f"unknown granularity {granularity!r}")


def first_order_risks(kl_grads: Mapping[str, np.ndarray], granularity: str = "group") -> np.ndarray:
    """Frobenius norm per group, or absolute value per scalar."""
    return _unit_norms(kl_grads, granularity)


def second_order_risks(
    grads: Mapping[str, np.ndarray],
    momentum: Mapping[str, np.ndarray],
    beta1: float,
    granularity: str = "group",
    momentum_floor: float = 1e-12,
) -> np.ndarray:
    if list(grads) != list(momentum):
        raise ValueError("gradient and momentum groups differ")
    return second_order_risk(_unit_norms(grads, granularity), _unit_norms(momentum, granularity),
                             beta1, momentum_floor)


def second_order_risk(grad_norm, momentum_norm, beta1: float, momentum_floor: float = 1e-12):
    """``|(1 - beta1) * grad_norm / momentum_norm - 1|``, or 0 where the momentum is below the floor.

    Evaluated as ``|r - beta1 * r - 1|`` with ``r = grad_norm / momentum_norm``,
    an ordering that keeps round numbers such as ``(2, 0.4, 0.9) -> 0.5`` exact.
    Accepts scalars or arrays.
    """
    g = np.asarray(grad_norm, dtype=np.float64)
    m = np.asarray(momentum_norm, dtype=np.float64)
    live = m >= momentum_floor
    r = np.divide(g, m, out=np.zeros(np.broadcast(g, m).shape), where=live)
    risks = np.where(live, np.abs(r - beta1 * r - 1.0), 0.0)
    return float(risks) if risks.ndim == 0 else risks


def selected_count(c_h: float, n_units: int) -> int:
    return min(n_units, int(math.floor(c_h * n_units + _COUNT_SLACK)))


def rank_threshold_mask(risks, c_h: float) -> np.ndarray:
    """Binary gates keeping the ``floor(c_h * n)`` lowest-risk units."""
    risks = np.asarray(risks, dtype=np.float64)
    if risks.ndim != 1 or risks.size == 0:
        raise ValueError("risks must be a non-empty 1-D sequence")
    if not 0.0 < c_h <= 1.0:
        raise ValueError(f"c_h must be in (0, 1], got {c_h}")
    if not np.all(np.isfinite(risks)):
        raise ValueError("risks must be finite")
    order = np.argsort(risks, kind="stable")
    gates = np.zeros(risks.size)
    gates[order[: selected_count(c_h, risks.size)]] = 1.0
    return gates


def ensemble_mask(mask_first, mask_second, gamma: float, hard: bool = False) -> np.ndarray:
    """``gamma * mask_first + (1 - gamma) * mask_second``, optionally thresholded at 0.5."""
    mf = np.asarray(mask_first, dtype=np.float64)
    ms = np.asarray(mask_second, dtype=np.float64)
    if mf.shape != ms.shape:
        raise ValueError(f"mask unit sets differ: {mf.shape} vs {ms.shape}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    soft = gamma * mf + (1.0 - gamma) * ms
    if hard:
        return (soft >= 0.5).astype(np.float64)
    return soft


def build_report(
    config: RoseConfig,
    grads: Mapping[str, np.ndarray],
    momentum: Mapping[str, np.ndarray],
    beta1: float,
    kl_grads: Optional[Mapping[str, np.ndarray]] = None,
    dropout_active: bool = True,
) -> RiskReport:
    second = second_order_risks(grads, momentum, beta1, config.granularity, config.momentum_floor)
    first = None if kl_grads is None else first_order_risks(kl_grads, config.granularity)
    return RiskReport(
        unit_ids=unit_ids(grads, config.granularity),
        second=second,
        first=first,
        granularity=config.granularity,
        dropout_active=dropout_active,
    )


def calculate_mask(config: RoseConfig, report: RiskReport, layout: Mapping[str, tuple]) -> Mask:
    if report.granularity != config.granularity:
        raise ValueError("risk report granularity does not match the configuration")
    if config.needs_first_order:
        if not report.dropout_active:
            raise ValueError(
                f"strategy {config.strategy!r} needs dropout: with dropout disabled every "
                "first-order risk is 0 and the selection degenerates to declaration order"
            )
        if report.first is None:
            raise ValueError(f"strategy {config.strategy!r} needs first-order risks")

    if config.strategy == "first":
        values = rank_threshold_mask(report.first, config.c_h_first)
    elif config.strategy == "second":
        values = rank_threshold_mask(report.second, config.c_h_second)
    else:
        values = ensemble_mask(
            rank_threshold_mask(report.first, config.c_h_first),
            rank_threshold_mask(report.second, config.c_h_second),
            config.gamma,
            config.hard_ensemble,
        )
    return Mask(values=values, granularity=config.granularity, layout=dict(layout))
