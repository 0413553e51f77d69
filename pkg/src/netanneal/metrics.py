"""Diagnostics computed from run records.

All functions are pure: they read records (live or deserialized) and
return plain values, so recomputation from serialized artifacts
reproduces stored results bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .engine import RunRecord
from .gibbs import GibbsMeasure, LimitMeasure, pi_of_f
from .objectives import Objective

Array = np.ndarray


def network_average(x: Array, n_agents: int) -> Array:
    """Coordinate-wise mean over agents of a stacked vector in R^(N*d)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if n_agents < 1 or x.size % n_agents != 0:
        raise ValueError(f"length {x.size} is not a stacking over {n_agents} agents")
    return x.reshape(n_agents, -1).mean(axis=0)


def consensus_error(x: Array, n_agents: int) -> tuple[float, float]:
    """(max_n ||x_n - xbar||, ||x - 1 kron xbar||) for a stacked vector.

    The first output is the worst per-agent deviation from the network
    average; the second is the Euclidean norm of the full disagreement
    vector. They satisfy max_dev <= breve_norm <= sqrt(N) * max_dev.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if n_agents < 1 or x.size % n_agents != 0:
        raise ValueError(f"length {x.size} is not a stacking over {n_agents} agents")
    blocks = x.reshape(n_agents, -1)
    dev = blocks - blocks.mean(axis=0)
    per_agent = np.linalg.norm(dev, axis=1)
    return float(per_agent.max()), float(np.linalg.norm(dev))


def consensus_decay_fit(times: Array, errors: Array, t_lo: float, t_hi: float) -> float:
    """Least-squares slope of log error vs log t over a time window.

    Rows with non-positive error are dropped (the fit is over the
    positive subset). Fewer than 10 usable points is an error.
    """
    times = np.asarray(times, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if times.shape != errors.shape:
        raise ValueError("times and errors must have matching shapes")
    mask = (times >= t_lo) & (times <= t_hi) & (errors > 0) & (times > 0)
    if mask.sum() < 10:
        raise ValueError(
            f"need at least 10 positive samples in [{t_lo:g}, {t_hi:g}], "
            f"got {int(mask.sum())}"
        )
    slope, _ = np.polyfit(np.log(times[mask]), np.log(errors[mask]), 1)
    return float(slope)


def success_rate(records: Sequence[RunRecord], radius: float, t_final: int) -> float:
    """Fraction of runs whose averaged state is within ``radius`` of a minimum.

    Uses the recorded distance-to-minima series at time ``t_final``.
    Diverged runs that never reached ``t_final`` count as failures.
    """
    if not records:
        raise ValueError("success_rate needs at least one record")
    hits = 0
    for rec in records:
        try:
            k = rec.row_at(t_final)
        except KeyError:
            if rec.final_t < t_final:
                continue  # diverged before the horizon: failure
            raise
        if rec.dist_to_minima[k] <= radius:
            hits += 1
    return hits / len(records)


@dataclass(frozen=True)
class ConvergenceRow:
    """One Monte-Carlo comparison of E[f(state_t)] against the target measure."""

    f_name: str
    t: int
    kind: str  # "mean" for f(xbar_t), "agent" for f(x_n(t))
    estimate: float
    stderr: float
    target: float
    gap: float
    n_runs: int


def weak_convergence_stat(
    records: Sequence[RunRecord],
    f_suite: Sequence[tuple[str, Callable[[Array], Array]]],
    t_checkpoints: Sequence[int],
    target: GibbsMeasure | LimitMeasure,
    agent: int | None = None,
) -> list[ConvergenceRow]:
    """Monte-Carlo estimates of E[f(xbar_t)] with their gaps to the target.

    For each test function and checkpoint, the estimate averages f over
    runs (records must store the checkpoint; records that diverged before
    it are skipped). When ``agent`` is given and snapshots of the full
    state exist at a checkpoint, a per-agent row for that agent is added.
    """
    if len(records) < 1:
        raise ValueError("need at least one record")
    d = records[0].dim
    if records[0].xbar.shape[1] < d:
        raise ValueError(
            "records do not store all averaged coordinates "
            f"(dim {d} > stored {records[0].xbar.shape[1]})"
        )
    rows: list[ConvergenceRow] = []
    for name, f in f_suite:
        target_value = pi_of_f(target, f)
        for t in t_checkpoints:
            means = []
            agent_vals = []
            for rec in records:
                try:
                    k = rec.row_at(int(t))
                except KeyError:
                    if rec.final_t < t:
                        continue
                    raise
                means.append(rec.xbar[k, :d])
                if agent is not None and int(t) in rec.snapshots:
                    state = rec.snapshots[int(t)].reshape(rec.n_agents, d)
                    agent_vals.append(state[agent])
            for kind, pts in (("mean", means), ("agent", agent_vals)):
                if not pts:
                    continue
                vals = np.asarray(f(np.asarray(pts)), dtype=float).reshape(-1)
                est = float(vals.mean())
                se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
                rows.append(
                    ConvergenceRow(
                        f_name=name,
                        t=int(t),
                        kind=kind,
                        estimate=est,
                        stderr=se,
                        target=target_value,
                        gap=abs(est - target_value),
                        n_runs=len(vals),
                    )
                )
    return rows


def make_f_suite(obj: Objective) -> list[tuple[str, Callable[[Array], Array]]]:
    """Bounded continuous test functions: constant, Gaussian bumps at the
    global minima, and a clamped first coordinate. All operate on (m, d)
    arrays of points."""

    def constant(points: Array) -> Array:
        points = np.atleast_2d(points)
        return np.ones(points.shape[0])

    suite: list[tuple[str, Callable[[Array], Array]]] = [("one", constant)]

    def make_bump(center: Array):
        center = np.asarray(center, dtype=float)

        def bump(points: Array) -> Array:
            points = np.atleast_2d(np.asarray(points, dtype=float))
            diff = points - center
            return np.exp(-np.einsum("md,md->m", diff, diff))

        return bump

    for idx, xstar in enumerate(obj.global_minima):
        suite.append((f"bump_{idx}", make_bump(xstar)))

    def clamp(points: Array) -> Array:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.clip(points[:, 0], -1.0, 1.0)

    suite.append(("clamp_0", clamp))
    return suite
