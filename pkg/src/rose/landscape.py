"""Loss-landscape probes: 1D interpolation and 2D random-direction surfaces.

Random directions are normalized per parameter group ("filter-wise" with a
whole dense tensor as the filter): each group of a direction is rescaled to
the norm of the matching parameter group.  Groups whose parameters have zero
norm get a zero direction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .losses import sce_value
from .model import ModelSpec, ParamSet, logits

__all__ = [
    "DirectionPair",
    "LandscapeGrid1D",
    "LandscapeGrid2D",
    "filter_normalize",
    "flatness_summary",
    "interp_1d",
    "line_point",
    "random_directions",
    "surface_2d",
    "symmetric_axis",
    "write_csv_1d",
    "write_csv_2d",
]

INTERP_RANGE = (-0.5, 1.5)
SURFACE_SPAN = 0.25
N_POINTS = 51


@dataclass
class LandscapeGrid1D:
    alphas: np.ndarray
    losses: np.ndarray
    accuracies: np.ndarray
    loss_a: float
    loss_b: float


@dataclass
class LandscapeGrid2D:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray  # losses[i, j] at (alphas[i], betas[j])


@dataclass
class DirectionPair:
    delta: ParamSet
    eta: ParamSet


def symmetric_axis(span: float = SURFACE_SPAN, n: int = N_POINTS) -> np.ndarray:
    """``n`` uniform points over ``[-span, span]`` with an exact 0 in the middle."""
    if n < 3 or n % 2 == 0:
        raise ValueError(f"need an odd number of points >= 3, got {n}")
    k = n // 2
    return span * (np.arange(-k, k + 1) / k)


def _evaluate(params: ParamSet, spec: ModelSpec, X, y) -> tuple[float, float]:
    z = logits(params, spec, X)
    return sce_value(z, y), float(np.mean(np.argmax(z, axis=1) == y))


def line_point(params_a: ParamSet, params_b: ParamSet, alpha: float) -> ParamSet:
    """``(1 - alpha) * a + alpha * b``."""
    return ParamSet((k, (1.0 - alpha) * params_a[k] + alpha * params_b[k]) for k in params_a)


def interp_1d(params_a: ParamSet, params_b: ParamSet, spec: ModelSpec, X, y,
              alphas: Optional[np.ndarray] = None) -> LandscapeGrid1D:
    """Loss and accuracy along the line from ``params_a`` (0) to ``params_b`` (1).

    The default 51-point grid over [-0.5, 1.5] has spacing 0.04 and does not
    land on 0 or 1, so the endpoint losses are evaluated and stored separately.
    """
    if not ParamSet(params_a).same_structure(params_b):
        raise ValueError("parameter sets have different group structure")
    if alphas is None:
        alphas = np.linspace(*INTERP_RANGE, N_POINTS)
    alphas = np.asarray(alphas, dtype=np.float64)
    losses, accs = [], []
    for alpha in alphas:
        loss, acc = _evaluate(line_point(params_a, params_b, alpha), spec, X, y)
        losses.append(loss)
        accs.append(acc)
    return LandscapeGrid1D(
        alphas=alphas,
        losses=np.array(losses),
        accuracies=np.array(accs),
        loss_a=_evaluate(line_point(params_a, params_b, 0.0), spec, X, y)[0],
        loss_b=_evaluate(line_point(params_a, params_b, 1.0), spec, X, y)[0],
    )


def filter_normalize(direction: ParamSet, params: ParamSet) -> ParamSet:
    out = ParamSet()
    for name, d in direction.items():
        p_norm = np.linalg.norm(params[name])
        d_norm = np.linalg.norm(d)
        if p_norm == 0 or d_norm == 0:
            out[name] = np.zeros_like(d)
        else:
            out[name] = d * (p_norm / d_norm)
    return out


def random_directions(params: ParamSet, seed: int) -> DirectionPair:
    rng = np.random.default_rng([seed, 7])
    delta = ParamSet((k, rng.standard_normal(v.shape)) for k, v in params.items())
    eta = ParamSet((k, rng.standard_normal(v.shape)) for k, v in params.items())
    return DirectionPair(filter_normalize(delta, params), filter_normalize(eta, params))


def surface_2d(params: ParamSet, spec: ModelSpec, X, y, seed: int,
               span: float = SURFACE_SPAN, n: int = N_POINTS) -> tuple[LandscapeGrid2D, DirectionPair]:
    """Loss at ``params + a*delta + b*eta`` on an ``n x n`` grid."""
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    dirs = random_directions(params, seed)
    axis = symmetric_axis(span, n)
    losses = np.empty((n, n))
    for i, a in enumerate(axis):
        for j, b in enumerate(axis):
            point = ParamSet(
                (k, params[k] + a * dirs.delta[k] + b * dirs.eta[k]) for k in params
            )
            losses[i, j] = sce_value(logits(point, spec, X), y)
    return LandscapeGrid2D(alphas=axis, betas=axis.copy(), losses=losses), dirs


def flatness_summary(grid: LandscapeGrid2D) -> dict:
    L = np.asarray(grid.losses)
    if L.ndim != 2 or min(L.shape) < 2:
        raise ValueError("grid must be a 2-D array with at least 2 points per axis")
    center = L[L.shape[0] // 2, L.shape[1] // 2]
    ring = np.concatenate([L[0, :], L[-1, :], L[1:-1, 0], L[1:-1, -1]])
    return {
        "center_loss": float(center),
        "boundary_mean_loss": float(ring.mean()),
        "basin_width": float(np.mean(L <= 2.0 * center)),
    }


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv_1d(grid: LandscapeGrid1D, fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "loss", "accuracy"])
    for a, l, acc in zip(grid.alphas, grid.losses, grid.accuracies):
        w.writerow([_fmt(a), _fmt(l), _fmt(acc)])
    return buf.getvalue() if fh is None else ""


def write_csv_2d(grid: LandscapeGrid2D, fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "beta", "loss"])
    for i, a in enumerate(grid.alphas):
        for j, b in enumerate(grid.betas):
            w.writerow([_fmt(a), _fmt(b), _fmt(grid.losses[i, j])])
    return buf.getvalue() if fh is None else ""
