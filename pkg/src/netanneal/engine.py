"""Step-by-step execution of the annealed consensus + gradient recursion.

The distributed recursion on the stacked state x in R^(N*d) is

    x(t+1) = x(t) - beta_t (L_t kron I_d) x(t)
             - alpha_t (stacked local gradients + zeta_t) + gamma_t w_t

and the centralized baseline on z in R^d is

    z(t+1) = z(t) - a_t (grad U(z(t)) + xi_t) + b_t w_t.

Randomness is organized into three independent sub-streams per run
(topology, gradient noise, annealing), each derived from
(master_seed, run_index, stream tag) by a 64-bit mix, so any run is
reproducible in isolation and batches are independent of batching order.
The per-step draw order is fixed: graph sample, then gradient noise,
then annealing noise. Within one stream, a block of m draws equals m
successive single draws, which is what makes chunked execution
bit-identical to single stepping.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .objectives import LocalObjectiveFamily, Objective
from .schedules import CentralizedSchedule, ScheduleSet, alpha, beta, centralized_a_b, gamma
from .topology import GraphModel, LaplacianSample

Array = np.ndarray

CHUNK = 1024


class ConfigError(ValueError):
    """Raised before any stepping when a run configuration is inconsistent."""


class DivergenceError(RuntimeError):
    """Raised by single-step APIs when the state contains non-finite values."""

    def __init__(self, t: int):
        super().__init__(f"non-finite state at iteration {t}")
        self.t = t


# ---------------------------------------------------------------------------
# Seed derivation

_M64 = (1 << 64) - 1
_RUN_STRIDE = 0x9E3779B97F4A7C15

STREAM_TOPOLOGY = 1
STREAM_GRADIENT = 2
STREAM_ANNEALING = 3


def mix64(z: int) -> int:
    """SplitMix64 finalizer; bijective 64-bit scramble."""
    z &= _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def stream_seed(master_seed: int, run_index: int, tag: int) -> int:
    """Sub-stream seed as a pure function of (master seed, run index, tag)."""
    return mix64((master_seed ^ (run_index * _RUN_STRIDE) ^ tag) & _M64)


@dataclass
class RngPlan:
    """Three independent generator streams for one run."""

    master_seed: int
    run_index: int = 0
    topology: np.random.Generator = field(init=False, repr=False)
    gradient_noise: np.random.Generator = field(init=False, repr=False)
    annealing: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.topology = np.random.default_rng(
            stream_seed(self.master_seed, self.run_index, STREAM_TOPOLOGY)
        )
        self.gradient_noise = np.random.default_rng(
            stream_seed(self.master_seed, self.run_index, STREAM_GRADIENT)
        )
        self.annealing = np.random.default_rng(
            stream_seed(self.master_seed, self.run_index, STREAM_ANNEALING)
        )


# ---------------------------------------------------------------------------
# Gradient noise models


@dataclass(frozen=True)
class NoiseModel:
    """Conditionally centered gradient-noise model with bounded second moment.

    Kinds: ``none`` (zero noise, consumes no randomness), ``gaussian``
    (i.i.d. N(0, sigma^2) coordinates), and ``bounded_mixture`` (per step,
    with probability ``spike_prob`` all coordinates are independent signs
    times ``spike_amp``, otherwise uniform on [-uniform_amp, uniform_amp];
    the support is bounded, so the second-moment bound is hard).
    """

    kind: str
    sigma: float = 1.0
    uniform_amp: float = 1.0
    spike_amp: float = 1.0
    spike_prob: float = 0.5

    @staticmethod
    def none() -> "NoiseModel":
        return NoiseModel(kind="none")

    @staticmethod
    def gaussian(sigma: float) -> "NoiseModel":
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        return NoiseModel(kind="gaussian", sigma=sigma)

    @staticmethod
    def bounded_mixture(
        uniform_amp: float = 1.0, spike_amp: float = 1.0, spike_prob: float = 0.5
    ) -> "NoiseModel":
        if uniform_amp < 0 or spike_amp < 0:
            raise ValueError("amplitudes must be non-negative")
        if not 0.0 <= spike_prob <= 1.0:
            raise ValueError("spike_prob must lie in [0, 1]")
        return NoiseModel(
            kind="bounded_mixture",
            uniform_amp=uniform_amp,
            spike_amp=spike_amp,
            spike_prob=spike_prob,
        )

    def sample_block(self, rng: np.random.Generator, steps: int, width: int) -> Array:
        """(steps, width) noise block; row i is the draw for step i."""
        if self.kind == "none":
            return np.zeros((steps, width))
        if self.kind == "gaussian":
            return self.sigma * rng.standard_normal((steps, width))
        if self.kind == "bounded_mixture":
            branch = rng.random(steps) < self.spike_prob
            uniform = rng.uniform(-self.uniform_amp, self.uniform_amp, (steps, width))
            signs = np.where(rng.random((steps, width)) < 0.5, 1.0, -1.0)
            return np.where(branch[:, None], self.spike_amp * signs, uniform)
        raise ValueError(f"unknown noise kind {self.kind!r}")

    def second_moment_bound(self, width: int) -> float:
        """A declared constant bounding E ||zeta_t||^2 for the stacked vector."""
        if self.kind == "none":
            return 0.0
        if self.kind == "gaussian":
            # Exact moment is sigma^2 * width; 5% headroom keeps the
            # declared constant a strict bound under empirical estimates.
            return 1.05 * self.sigma**2 * width
        return max(self.uniform_amp, self.spike_amp) ** 2 * width


def parse_noise(spec: str) -> NoiseModel:
    """Build a noise model from a spec like ``"gaussian:sigma=1"``."""
    name, _, paramstr = spec.partition(":")
    name = name.strip()
    params = {}
    for item in paramstr.split(","):
        if item.strip():
            key, _, value = item.partition("=")
            params[key.strip()] = float(value)
    if name == "none":
        return NoiseModel.none()
    if name == "gaussian":
        return NoiseModel.gaussian(params.get("sigma", 1.0))
    if name == "bounded_mixture":
        return NoiseModel.bounded_mixture(
            params.get("uniform", 1.0), params.get("spike", 1.0), params.get("p", 0.5)
        )
    raise ValueError(f"unknown noise model {name!r}")


# ---------------------------------------------------------------------------
# States and records


@dataclass
class NetworkState:
    """Stacked iterate of the network at iteration t."""

    t: int
    x: Array
    n_agents: int
    dim: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        if self.x.size != self.n_agents * self.dim:
            raise ConfigError(
                f"state length {self.x.size} != n_agents * dim = "
                f"{self.n_agents * self.dim}"
            )


@dataclass
class RunRecord:
    """Time series of diagnostics plus provenance for one run."""

    config_hash: str
    master_seed: int
    run_index: int
    mode: str
    n_agents: int
    dim: int
    steps: int
    stride: int
    tau: float
    times: Array
    consensus_error: Array
    breve_norm: Array
    scaled_consensus_error: Array
    u_of_mean: Array
    dist_to_minima: Array
    xbar: Array  # (rows, min(dim, 4))
    final_t: int
    final_state: Array
    diverged: bool
    first_bad_t: int | None
    snapshots: dict[int, Array]
    wall_time: float

    def row_at(self, t: int) -> int:
        """Index of the recorded row with time exactly t."""
        hits = np.nonzero(self.times == t)[0]
        if hits.size == 0:
            raise KeyError(f"time {t} was not recorded (stride {self.stride})")
        return int(hits[0])

    def to_json_payload(self) -> dict:
        """Metadata dict for serialization. Wall time is excluded so that
        artifacts are byte-identical across reruns; store timings separately."""
        return {
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "run_index": self.run_index,
            "mode": self.mode,
            "n_agents": self.n_agents,
            "dim": self.dim,
            "steps": self.steps,
            "stride": self.stride,
            "tau": self.tau,
            "final_t": self.final_t,
            "final_state": [float(v) for v in self.final_state],
            "diverged": self.diverged,
            "first_bad_t": self.first_bad_t,
            "snapshots": {str(t): [float(v) for v in x] for t, x in sorted(self.snapshots.items())},
        }


CSV_COLUMNS = (
    "t",
    "consensus_error",
    "scaled_consensus_error",
    "dist_to_minima",
    "u_of_mean",
    "breve_norm",
)


def record_csv_header(record: RunRecord) -> list[str]:
    xbar_cols = [f"xbar_{i}" for i in range(record.xbar.shape[1])]
    return list(CSV_COLUMNS) + xbar_cols


def record_csv_rows(record: RunRecord):
    """Yield CSV rows (lists of Python scalars) for the recorded series."""
    for k in range(len(record.times)):
        row = [
            int(record.times[k]),
            float(record.consensus_error[k]),
            float(record.scaled_consensus_error[k]),
            float(record.dist_to_minima[k]),
            float(record.u_of_mean[k]),
            float(record.breve_norm[k]),
        ]
        row.extend(float(v) for v in record.xbar[k])
        yield row


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    """Materialized inputs for a run; see the config module for parsing."""

    mode: str  # "distributed" | "centralized"
    steps: int
    objective: Objective
    noise: NoiseModel
    initial: Array  # stacked (N*d,) for distributed, (d,) for centralized
    family: LocalObjectiveFamily | None = None
    graph: GraphModel | None = None
    schedule: ScheduleSet | None = None
    centralized: CentralizedSchedule | None = None
    stride: int = 100
    dense_until: int = 100
    snapshot_ts: tuple[int, ...] = ()
    tau: float = 0.15
    master_seed: int = 0
    config_hash: str = ""

    @property
    def n_agents(self) -> int:
        return self.family.n_agents if self.mode == "distributed" else 1

    @property
    def dim(self) -> int:
        return self.objective.dim


def _check_config(config: RunConfig) -> None:
    if config.mode not in ("distributed", "centralized"):
        raise ConfigError(f"unknown mode {config.mode!r}")
    if config.steps < 0:
        raise ConfigError("steps must be non-negative")
    if config.stride < 1:
        raise ConfigError("stride must be >= 1")
    if config.mode == "distributed":
        if config.family is None or config.graph is None or config.schedule is None:
            raise ConfigError("distributed mode needs family, graph, and schedule")
        if config.family.base.dim != config.objective.dim:
            raise ConfigError("family and objective dimensions disagree")
        if config.graph.n != config.family.n_agents:
            raise ConfigError(
                f"graph has {config.graph.n} nodes but family has "
                f"{config.family.n_agents} agents"
            )
    else:
        if config.centralized is None:
            raise ConfigError("centralized mode needs a centralized schedule")
    expected = config.n_agents * config.dim
    initial = np.asarray(config.initial, dtype=float).reshape(-1)
    if initial.size != expected:
        raise ConfigError(
            f"initial state has length {initial.size}, expected {expected}"
        )


def recorded_times(steps: int, stride: int, dense_until: int) -> Array:
    """Times at which metrics are stored: 0, a dense head, stride multiples, T."""
    ts = {0, steps}
    ts.update(range(1, min(dense_until, steps) + 1))
    ts.update(range(stride, steps + 1, stride))
    return np.array(sorted(ts), dtype=np.int64)


# ---------------------------------------------------------------------------
# Single-step API


def _laplacian_action(lap_matrix: Array, states: Array) -> Array:
    """(L kron I_d) applied to per-agent states of shape (N, d)."""
    return np.einsum("ij,jd->id", lap_matrix, states)


def step_distributed(
    state: NetworkState,
    family: LocalObjectiveFamily,
    lap: LaplacianSample,
    sched: ScheduleSet,
    noise: NoiseModel,
    plan: RngPlan,
) -> NetworkState:
    """One step of the distributed recursion at iteration state.t + 1.

    The caller supplies the graph sample (the topology stream draw);
    gradient noise and annealing noise are then drawn from the plan's
    streams, in that order.
    """
    n, d = state.n_agents, state.dim
    if family.n_agents != n or family.base.dim != d:
        raise ConfigError("family does not match the state dimensions")
    if lap.n != n:
        raise ConfigError(f"Laplacian is {lap.n}x{lap.n} but the state has {n} agents")
    if not np.isfinite(state.x).all():
        raise DivergenceError(state.t)
    t = state.t + 1
    al = float(alpha(sched, t))
    be = float(beta(sched, t))
    ga = float(gamma(sched, t))
    zeta = noise.sample_block(plan.gradient_noise, 1, n * d)[0]
    w = plan.annealing.standard_normal((1, n * d))[0]
    xm = state.x.reshape(n, d)
    tmp = state.x - be * _laplacian_action(lap.matrix, xm).reshape(-1)
    grads = family.grad_stacked(xm).reshape(-1)
    x_next = tmp - al * (grads + zeta) + ga * w
    return NetworkState(t=t, x=x_next, n_agents=n, dim=d)


def step_centralized(
    z: Array,
    t: int,
    obj: Objective,
    cs: CentralizedSchedule,
    noise: NoiseModel,
    plan: RngPlan,
) -> Array:
    """One Euler step of the centralized annealed recursion at iteration t + 1.

    Same draw-order convention as the distributed step: gradient noise
    first, then annealing noise.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != obj.dim:
        raise ConfigError(f"state has dimension {z.size}, expected {obj.dim}")
    if not np.isfinite(z).all():
        raise DivergenceError(t)
    a, b = centralized_a_b(cs, t + 1)
    xi = noise.sample_block(plan.gradient_noise, 1, obj.dim)[0]
    w = plan.annealing.standard_normal((1, obj.dim))[0]
    grad = np.asarray(obj.grad(z), dtype=float)
    return z - float(a) * (grad + xi) + float(b) * w


# ---------------------------------------------------------------------------
# Batched runner


def run(config: RunConfig, run_index: int = 0) -> RunRecord:
    """Execute one run; equivalent to the batch runner with a single run."""
    return _run_block(config, [run_index])[0]


def run_batch(config: RunConfig, n_runs: int, parallelism: int = 1) -> list[RunRecord]:
    """Execute runs 0..n_runs-1; run r uses RngPlan(master_seed, r).

    ``parallelism`` is the number of runs advanced together in one
    vectorized block. Per-run results are bit-identical for any value
    because every run consumes only its own streams and all array
    reductions are along per-run axes.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    records: list[RunRecord] = []
    for start in range(0, n_runs, parallelism):
        indices = list(range(start, min(start + parallelism, n_runs)))
        records.extend(_run_block(config, indices))
    return records


def _run_block(config: RunConfig, run_indices: Sequence[int]) -> list[RunRecord]:
    _check_config(config)
    t_start = time.perf_counter()
    distributed = config.mode == "distributed"
    n = config.n_agents
    d = config.dim
    nd = n * d
    steps = config.steps
    big_r = len(run_indices)
    obj = config.objective
    minima = obj.global_minima
    xbar_cols = min(d, 4)

    plans = [RngPlan(config.master_seed, r) for r in run_indices]
    rec_ts = recorded_times(steps, config.stride, config.dense_until)
    row_of_t = {int(t): k for k, t in enumerate(rec_ts)}
    n_rows = len(rec_ts)
    snapshot_set = set(int(t) for t in config.snapshot_ts)

    cons = np.zeros((n_rows, big_r))
    breve = np.zeros((n_rows, big_r))
    scaled = np.zeros((n_rows, big_r))
    u_mean = np.zeros((n_rows, big_r))
    dist = np.zeros((n_rows, big_r))
    xbars = np.zeros((n_rows, big_r, xbar_cols))
    rows_done = np.full(big_r, -1, dtype=np.int64)  # last row index written
    first_bad = np.full(big_r, -1, dtype=np.int64)
    snapshots: list[dict[int, Array]] = [dict() for _ in range(big_r)]
    last_finite = np.zeros((big_r, n, d))

    x = np.broadcast_to(
        np.asarray(config.initial, dtype=float).reshape(n, d), (big_r, n, d)
    ).copy()

    def record_row(t: int, states: Array) -> None:
        k = row_of_t[t]
        mean = states.mean(axis=1)  # (R, d)
        dev = states - mean[:, None, :]
        per_agent = np.sqrt(np.einsum("rnd,rnd->rn", dev, dev))
        ce = per_agent.max(axis=1)
        bn = np.sqrt(np.einsum("rnd,rnd->r", dev, dev))
        cons[k] = ce
        breve[k] = bn
        scaled[k] = (t + 1.0) ** config.tau * ce
        u_mean[k] = obj.values(mean)
        diffs = mean[:, None, :] - minima[None, :, :]
        dist[k] = np.sqrt(np.einsum("rkd,rkd->rk", diffs, diffs)).min(axis=1)
        xbars[k] = mean[:, :xbar_cols]
        alive = first_bad < 0
        rows_done[alive] = k

    record_row(0, x)
    if 0 in snapshot_set:
        for ridx in range(big_r):
            snapshots[ridx][0] = x[ridx].reshape(-1).copy()
    last_finite[:] = x

    if distributed:
        sched = config.schedule
        graph = config.graph
        static_lap = None
        if graph.kind == "static":
            deg = graph.base_adjacency.sum(axis=1)
            static_lap = np.diag(deg) - graph.base_adjacency
        else:
            e_rows, e_cols = graph.edge_index()
        grad_shifts = config.family.shifts
        a_buf = np.zeros((big_r, n, n))
        l_buf = np.zeros((big_r, n, n))
        diag_idx = np.arange(n)
    else:
        cs = config.centralized

    with np.errstate(over="ignore", invalid="ignore"):
        for chunk_lo in range(1, steps + 1, CHUNK):
            chunk_hi = min(chunk_lo + CHUNK - 1, steps)
            ts = np.arange(chunk_lo, chunk_hi + 1, dtype=np.int64)
            m = len(ts)
            if distributed:
                al = alpha(sched, ts)
                be = beta(sched, ts)
                ga = gamma(sched, ts)
                if graph.kind != "static":
                    masks = np.stack(
                        [graph.sample_edge_masks(p.topology, m) for p in plans]
                    )
            else:
                al, ga = centralized_a_b(cs, ts)
            zeta_blk = np.stack(
                [config.noise.sample_block(p.gradient_noise, m, nd) for p in plans]
            )
            w_blk = np.stack([p.annealing.standard_normal((m, nd)) for p in plans])

            for i in range(m):
                t = int(ts[i])
                if distributed:
                    if static_lap is not None:
                        lap_x = np.einsum("ij,rjd->rid", static_lap, x)
                    else:
                        a_buf.fill(0.0)
                        mk = masks[:, i, :]
                        a_buf[:, e_rows, e_cols] = mk
                        a_buf[:, e_cols, e_rows] = mk
                        np.negative(a_buf, out=l_buf)
                        l_buf[:, diag_idx, diag_idx] = a_buf.sum(axis=2)
                        lap_x = np.einsum("rij,rjd->rid", l_buf, x)
                    tmp = x - be[i] * lap_x
                    grads = obj.gradients(x.reshape(-1, d)).reshape(big_r, n, d) + grad_shifts
                else:
                    tmp = x
                    grads = obj.gradients(x.reshape(-1, d)).reshape(big_r, n, d)
                zeta = zeta_blk[:, i, :].reshape(big_r, n, d)
                w = w_blk[:, i, :].reshape(big_r, n, d)
                x = tmp - al[i] * (grads + zeta) + ga[i] * w

                finite = np.isfinite(x.reshape(big_r, -1)).all(axis=1)
                alive = first_bad < 0
                newly_bad = alive & ~finite
                if newly_bad.any():
                    first_bad[newly_bad] = t
                still = alive & finite
                if still.any():
                    last_finite[still] = x[still]
                if t in row_of_t:
                    record_row(t, x)
                if t in snapshot_set:
                    for ridx in np.nonzero(still)[0]:
                        snapshots[ridx][t] = x[ridx].reshape(-1).copy()
                if not (first_bad < 0).any():
                    break
            if not (first_bad < 0).any():
                break

    elapsed = time.perf_counter() - t_start
    records = []
    for ridx, run_index in enumerate(run_indices):
        diverged = first_bad[ridx] >= 0
        n_keep = rows_done[ridx] + 1
        records.append(
            RunRecord(
                config_hash=config.config_hash,
                master_seed=config.master_seed,
                run_index=run_index,
                mode=config.mode,
                n_agents=n,
                dim=d,
                steps=steps,
                stride=config.stride,
                tau=config.tau,
                times=rec_ts[:n_keep].copy(),
                consensus_error=cons[:n_keep, ridx].copy(),
                breve_norm=breve[:n_keep, ridx].copy(),
                scaled_consensus_error=scaled[:n_keep, ridx].copy(),
                u_of_mean=u_mean[:n_keep, ridx].copy(),
                dist_to_minima=dist[:n_keep, ridx].copy(),
                xbar=xbars[:n_keep, ridx].copy(),
                final_t=int(first_bad[ridx] - 1) if diverged else steps,
                final_state=last_finite[ridx].reshape(-1).copy(),
                diverged=bool(diverged),
                first_bad_t=int(first_bad[ridx]) if diverged else None,
                snapshots=snapshots[ridx],
                wall_time=elapsed / big_r,
            )
        )
    return records
