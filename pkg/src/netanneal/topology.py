"""Random undirected graph Laplacians and their spectral diagnostics.

Graphs are simple and undirected; the Laplacian is L = D - A with D the
degree matrix. Three sampling models are provided: per-step Erdos-Renyi,
per-edge subsampling of a fixed base graph, and a static graph. All
models expose their mean Laplacian analytically so the
connected-in-the-mean condition lambda_2(mean L) > 0 can be checked
without Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Array = np.ndarray

LAMBDA2_TOL = 1e-12


@dataclass(frozen=True)
class LaplacianSample:
    """A single undirected graph Laplacian on n nodes."""

    n: int
    matrix: Array

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))

    def lambda_max(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[-1])


def _check_adjacency(adjacency) -> Array:
    adj = np.asarray(adjacency, dtype=float)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise ValueError("adjacency must have a zero diagonal (no self-loops)")
    if not np.all((adj == 0) | (adj == 1)):
        raise ValueError("adjacency entries must be 0 or 1")
    return adj


def laplacian(adjacency) -> LaplacianSample:
    """L = D - A for a symmetric hollow 0/1 adjacency matrix."""
    adj = _check_adjacency(adjacency)
    deg = adj.sum(axis=1)
    return LaplacianSample(n=adj.shape[0], matrix=np.diag(deg) - adj)


def lambda2(lap: LaplacianSample | Array) -> float:
    """Second-smallest Laplacian eigenvalue (algebraic connectivity).

    Zero exactly when the graph is disconnected. A single-node graph has
    no disagreement mode; it is treated as connected and inf is returned.
    """
    matrix = lap.matrix if isinstance(lap, LaplacianSample) else np.asarray(lap, dtype=float)
    if matrix.shape[0] == 1:
        return math.inf
    eigs = np.linalg.eigvalsh(matrix)
    return float(eigs[1])


def complete_adjacency(n: int) -> Array:
    return np.ones((n, n)) - np.eye(n)


def path_adjacency(n: int) -> Array:
    adj = np.zeros((n, n))
    idx = np.arange(n - 1)
    adj[idx, idx + 1] = 1.0
    adj[idx + 1, idx] = 1.0
    return adj


def ring_adjacency(n: int) -> Array:
    if n < 3:
        return path_adjacency(n)
    adj = path_adjacency(n)
    adj[0, n - 1] = adj[n - 1, 0] = 1.0
    return adj


def star_adjacency(n: int) -> Array:
    adj = np.zeros((n, n))
    adj[0, 1:] = 1.0
    adj[1:, 0] = 1.0
    return adj


_BASE_GRAPHS = {
    "complete": complete_adjacency,
    "path": path_adjacency,
    "ring": ring_adjacency,
    "star": star_adjacency,
}


def named_adjacency(name: str, n: int) -> Array:
    if name not in _BASE_GRAPHS:
        raise ValueError(f"unknown base graph {name!r}; known: {sorted(_BASE_GRAPHS)}")
    return _BASE_GRAPHS[name](n)


@dataclass(frozen=True)
class GraphModel:
    """A distribution over graph Laplacians, i.i.d. across time steps.

    ``kind`` is one of ``erdos_renyi`` (each pair connected independently
    with probability p), ``edge_subsample`` (each edge of ``base_adjacency``
    kept independently with probability p), or ``static`` (a fixed graph).
    ``mean_laplacian`` is exact: p * L_complete, p * L_base, or L itself.
    """

    kind: str
    n: int
    p: float
    base_adjacency: Array
    mean_laplacian: Array
    lambda2_mean: float

    def sample(self, rng: np.random.Generator) -> LaplacianSample:
        """Draw one Laplacian, consuming only the given RNG stream."""
        adj = self.sample_adjacency_block(rng, 1)[0]
        deg = adj.sum(axis=1)
        return LaplacianSample(n=self.n, matrix=np.diag(deg) - adj)

    # Block sampling consumes the stream in step order; a block of m draws
    # equals m successive single draws.
    def sample_edge_masks(self, rng: np.random.Generator, m: int) -> Array | None:
        if self.kind == "static":
            return None
        iu = np.triu_indices(self.n, 1)
        if self.kind == "erdos_renyi":
            return rng.random((m, len(iu[0]))) < self.p
        rows, cols = np.nonzero(np.triu(self.base_adjacency, 1))
        return rng.random((m, len(rows))) < self.p

    def sample_adjacency_block(self, rng: np.random.Generator, m: int) -> Array:
        masks = self.sample_edge_masks(rng, m)
        adj = np.zeros((m, self.n, self.n))
        if masks is None:
            adj[:] = self.base_adjacency
            return adj
        if self.kind == "erdos_renyi":
            rows, cols = np.triu_indices(self.n, 1)
        else:
            rows, cols = np.nonzero(np.triu(self.base_adjacency, 1))
        adj[:, rows, cols] = masks
        adj[:, cols, rows] = masks
        return adj

    def edge_index(self) -> tuple[Array, Array]:
        """Upper-triangular (row, col) indices the edge masks refer to."""
        if self.kind == "erdos_renyi":
            return np.triu_indices(self.n, 1)
        rows, cols = np.nonzero(np.triu(self.base_adjacency, 1))
        return rows, cols


def erdos_renyi(n: int, p: float) -> GraphModel:
    if n < 1:
        raise ValueError("need at least one node")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must be in [0, 1], got {p}")
    mean_lap = p * (np.diag(np.full(n, n - 1.0)) - complete_adjacency(n))
    return GraphModel(
        kind="erdos_renyi",
        n=n,
        p=p,
        base_adjacency=complete_adjacency(n),
        mean_laplacian=mean_lap,
        lambda2_mean=lambda2(mean_lap) if n > 1 else math.inf,
    )


def edge_subsample(base_adjacency, p: float) -> GraphModel:
    adj = _check_adjacency(base_adjacency)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must be in [0, 1], got {p}")
    base_lap = laplacian(adj).matrix
    mean_lap = p * base_lap
    n = adj.shape[0]
    return GraphModel(
        kind="edge_subsample",
        n=n,
        p=p,
        base_adjacency=adj,
        mean_laplacian=mean_lap,
        lambda2_mean=lambda2(mean_lap) if n > 1 else math.inf,
    )


def static(adjacency) -> GraphModel:
    adj = _check_adjacency(adjacency)
    lap = laplacian(adj).matrix
    n = adj.shape[0]
    return GraphModel(
        kind="static",
        n=n,
        p=1.0,
        base_adjacency=adj,
        mean_laplacian=lap,
        lambda2_mean=lambda2(lap) if n > 1 else math.inf,
    )


def parse_graph(spec: str, n: int) -> GraphModel:
    """Build a graph model from a spec like ``"erdos_renyi:p=0.5"``.

    Supported: ``erdos_renyi:p=P``, ``edge_subsample:base=NAME,p=P``,
    ``static:NAME`` with NAME one of complete/path/ring/star.
    """
    name, _, paramstr = spec.partition(":")
    name = name.strip()
    params = {}
    if name == "static":
        base = paramstr.strip() or "complete"
        return static(named_adjacency(base, n))
    for item in paramstr.split(","):
        if not item.strip():
            continue
        key, _, value = item.partition("=")
        params[key.strip()] = value.strip()
    if name == "erdos_renyi":
        return erdos_renyi(n, float(params.get("p", 0.5)))
    if name == "edge_subsample":
        base = params.get("base", "complete")
        return edge_subsample(named_adjacency(base, n), float(params.get("p", 1.0)))
    raise ValueError(f"unknown graph model {name!r}")


def check_connected_in_mean(model: GraphModel) -> tuple[bool, float]:
    """Whether lambda_2 of the analytic mean Laplacian exceeds 1e-12."""
    lam = model.lambda2_mean
    return (lam > LAMBDA2_TOL, lam)


def consensus_contraction_check(lap: LaplacianSample, beta: float, z: Array) -> bool:
    """Whether one consensus step is non-expansive on a disagreement vector.

    ``z`` must be orthogonal to the consensus subspace (its per-agent
    mean must vanish, within 1e-10). Returns whether
    ||(I - beta * L (x) I_d) z|| <= ||z||, with a 1e-12 relative slack for
    rounding; the inequality is guaranteed whenever
    beta * lambda_max(L) <= 2.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    z = np.asarray(z, dtype=float)
    n = lap.n
    if z.size % n != 0:
        raise ValueError(f"vector of length {z.size} is not a stacking over {n} agents")
    d = z.size // n
    blocks = z.reshape(n, d)
    mean = blocks.mean(axis=0)
    if np.linalg.norm(np.broadcast_to(mean, (n, d))) > 1e-10 * (1.0 + np.linalg.norm(z)):
        raise ValueError("z is not orthogonal to the consensus subspace")
    moved = blocks - beta * (lap.matrix @ blocks)
    return float(np.linalg.norm(moved)) <= float(np.linalg.norm(z)) * (1.0 + 1e-12)
