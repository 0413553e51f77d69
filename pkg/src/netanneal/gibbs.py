"""Gibbs measures proportional to exp(-2 U / eps^2) and their small-eps limit.

These measures are the ground truth that the annealed dynamics target:
as eps shrinks, the measure concentrates on the global minima of U, and
in the limit it becomes atomic with weights proportional to
det(Hessian)^(-1/2) at each nondegenerate minimum. The grid quadrature
here is a test oracle for desk-scale problems (d <= 3), not a production
integrator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .objectives import Objective

Array = np.ndarray

MAX_GRID_DIM = 3
MIN_MARGIN_EPS = 5.0  # bounds must clear every minimum by this many eps


class DomainError(ValueError):
    """A global minimum lies outside (or too close to) the grid bounds."""


class EpsilonTooSmall(ValueError):
    """exp(-2 U / eps^2) underflowed everywhere except at isolated points."""


class DegenerateMinimum(ValueError):
    """The Hessian at a declared minimum is not positive definite."""


@dataclass(frozen=True)
class GibbsMeasure:
    """Grid quadrature of the measure with density prop. to exp(-2 U / eps^2)."""

    objective: Objective
    epsilon: float
    bounds: tuple[tuple[float, float], ...]
    n_points: int
    points: Array  # (M, d)
    weights: Array  # (M,), non-negative, sums to 1
    z_eps: float


@dataclass(frozen=True)
class LimitMeasure:
    """Atomic limit of the Gibbs family: mass on the global minima."""

    objective: Objective
    atoms: tuple[tuple[Array, float], ...]  # (point, mass)


def _normalize_bounds(obj: Objective, bounds) -> tuple[tuple[float, float], ...]:
    arr = np.asarray(bounds, dtype=float)
    if arr.ndim == 1:
        arr = np.tile(arr, (obj.dim, 1))
    if arr.shape != (obj.dim, 2):
        raise ValueError(f"bounds must have shape (d, 2) or (2,), got {arr.shape}")
    if np.any(arr[:, 0] >= arr[:, 1]):
        raise ValueError("each bounds pair must satisfy lo < hi")
    return tuple((float(lo), float(hi)) for lo, hi in arr)


def gibbs_on_grid(obj: Objective, epsilon: float, bounds, n_points: int) -> GibbsMeasure:
    """Tensor-grid trapezoid quadrature of the Gibbs measure.

    ``bounds`` is (lo, hi) shared by all axes or a (d, 2) array. Every
    global minimum must sit inside the bounds with margin >= 5 eps.
    Exponents are taken relative to the grid minimum of U before
    exponentiation, so small eps does not underflow the whole grid.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if obj.dim > MAX_GRID_DIM:
        raise ValueError(f"grid quadrature supports d <= {MAX_GRID_DIM}, got {obj.dim}")
    if n_points < 2:
        raise ValueError("need at least 2 points per axis")
    box = _normalize_bounds(obj, bounds)
    for xstar in obj.global_minima:
        for axis, (lo, hi) in enumerate(box):
            margin = MIN_MARGIN_EPS * epsilon
            if xstar[axis] - lo < margin or hi - xstar[axis] < margin:
                raise DomainError(
                    f"global minimum {xstar} is within {margin:g} of the bounds "
                    f"on axis {axis}; enlarge the box"
                )

    axes = []
    axis_weights = []
    for lo, hi in box:
        grid = np.linspace(lo, hi, n_points)
        h = (hi - lo) / (n_points - 1)
        w = np.full(n_points, h)
        w[0] = w[-1] = h / 2.0  # trapezoid end correction
        axes.append(grid)
        axis_weights.append(w)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    cellw = axis_weights[0]
    for w in axis_weights[1:]:
        cellw = np.multiply.outer(cellw, w)
    cellw = cellw.ravel()

    values = obj.values(points)
    u_min = float(values.min())
    raw = cellw * np.exp(-2.0 * (values - u_min) / epsilon**2)
    total = float(raw.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise EpsilonTooSmall(f"total mass underflowed at epsilon = {epsilon:g}")
    # u_min >= 0 for normalized objectives, so the back-correction factor
    # is <= 1 and cannot overflow.
    z_eps = total * float(np.exp(-2.0 * u_min / epsilon**2))
    return GibbsMeasure(
        objective=obj,
        epsilon=epsilon,
        bounds=box,
        n_points=n_points,
        points=points,
        weights=raw / total,
        z_eps=z_eps,
    )


def limit_measure(obj: Objective) -> LimitMeasure:
    """Atoms at the global minima, weighted by det(Hessian)^(-1/2).

    Requires an objective with a Hessian and finitely many declared,
    nondegenerate global minima. Cross-validated against the grid
    quadrature at small eps in the test suite.
    """
    if obj.hessian is None:
        raise ValueError(f"{obj.name} has no Hessian; cannot weight the atoms")
    raw = []
    for xstar in obj.global_minima:
        hess = np.asarray(obj.hessian(xstar), dtype=float)
        eigs = np.linalg.eigvalsh(hess)
        det = float(np.prod(eigs))
        if eigs[0] <= 1e-10 or det <= 0:
            raise DegenerateMinimum(
                f"Hessian at minimum {xstar} of {obj.name} is not positive definite "
                f"(eigenvalues {eigs})"
            )
        raw.append(det**-0.5)
    total = sum(raw)
    atoms = tuple(
        (np.array(xstar, dtype=float), w / total)
        for xstar, w in zip(obj.global_minima, raw)
    )
    return LimitMeasure(objective=obj, atoms=atoms)


def _apply_f(f: Callable, points: Array) -> Array:
    """Evaluate f on (m, d) points, accepting vectorized or scalar callables."""
    try:
        vals = np.asarray(f(points), dtype=float)
        if vals.shape == (points.shape[0],):
            return vals
    except Exception:
        pass
    return np.array([float(f(p)) for p in points], dtype=float)


def pi_of_f(measure: GibbsMeasure | LimitMeasure, f: Callable) -> float:
    """Integral of f against a grid or atomic measure."""
    if isinstance(measure, GibbsMeasure):
        vals = _apply_f(f, measure.points)
        if not np.all(np.isfinite(vals)):
            raise ValueError("f is not finite on the quadrature grid")
        return float(vals @ measure.weights)
    pts = np.stack([atom for atom, _ in measure.atoms])
    masses = np.array([m for _, m in measure.atoms])
    vals = _apply_f(f, pts)
    if not np.all(np.isfinite(vals)):
        raise ValueError("f is not finite on the atoms")
    return float(vals @ masses)


@dataclass(frozen=True)
class WeakLimitRow:
    f_name: str
    epsilon: float
    value: float
    limit_value: float
    gap: float


@dataclass(frozen=True)
class WeakLimitReport:
    """Gap table |pi_eps(f) - pi(f)| over a decreasing epsilon sweep."""

    rows: tuple[WeakLimitRow, ...]
    monotone: dict[str, bool]  # per f: gaps non-increasing along the sweep

    def gaps(self, f_name: str) -> list[float]:
        return [r.gap for r in self.rows if r.f_name == f_name]


def weak_limit_check(
    obj: Objective,
    epsilons: Sequence[float],
    f_suite: Sequence[tuple[str, Callable]],
    bounds=None,
    n_points: int = 4001,
) -> WeakLimitReport:
    """Tabulate pi_eps(f) against the atomic limit over a decreasing sweep.

    ``epsilons`` must be strictly decreasing. Default bounds cover every
    global minimum with margin 10 * max(eps), at least 1.
    """
    eps = [float(e) for e in epsilons]
    if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    if bounds is None:
        margin = max(1.0, 10.0 * eps[0])
        lo = float(obj.global_minima.min()) - margin
        hi = float(obj.global_minima.max()) + margin
        bounds = (lo, hi)
    limit = limit_measure(obj)
    rows = []
    for e in eps:
        measure = gibbs_on_grid(obj, e, bounds, n_points)
        for name, f in f_suite:
            value = pi_of_f(measure, f)
            target = pi_of_f(limit, f)
            rows.append(
                WeakLimitRow(
                    f_name=name,
                    epsilon=e,
                    value=value,
                    limit_value=target,
                    gap=abs(value - target),
                )
            )
    monotone = {}
    for name, _ in f_suite:
        gaps = [r.gap for r in rows if r.f_name == name]
        monotone[name] = all(g2 <= g1 + 1e-15 for g1, g2 in zip(gaps, gaps[1:]))
    return WeakLimitReport(rows=tuple(rows), monotone=monotone)
