"""Nonconvex test objectives with analytic gradients.

Every shipped objective is normalized so its global minimum value is 0,
carries the full list of global minimizers, a Lipschitz constant for the
gradient, and (where cheap) an analytic Hessian. The module also builds
per-agent local objectives whose average recovers the base objective
exactly, and provides numerical validators that guard an objective before
it is used in a simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

# Construction-time tolerances on declared minimizers.
MIN_VALUE_TOL = 1e-12
MIN_GRAD_TOL = 1e-8


def _as_points(points) -> Array:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return pts


@dataclass(frozen=True)
class Objective:
    """A smooth scalar objective on R^d.

    Parameters
    ----------
    name : str
        Registry-style identifier, e.g. ``"cosine_well:a=1,b=1,d=2"``.
    dim : int
        Dimension d of the domain.
    eval : callable
        Maps a point of shape (d,) to a float. Minimum value must be 0.
    grad : callable
        Analytic gradient, (d,) -> (d,).
    lipschitz_grad : float
        Constant L with ||grad(x) - grad(y)|| <= L ||x - y|| on the
        region of interest (global for the quadratic and cosine wells).
    global_minima : ndarray, shape (k, d)
        All global minimizers; eval must vanish at each of them.
    hessian : callable, optional
        (d,) -> (d, d). Needed for limiting-measure atom weights and for
        the drift-condition check in the admissibility validator.
    eval_many, grad_many : callable, optional
        Vectorized variants acting on (m, d) arrays. Defaults fall back
        to per-point loops.
    """

    name: str
    dim: int
    eval: Callable[[Array], float]
    grad: Callable[[Array], Array]
    lipschitz_grad: float
    global_minima: Array
    hessian: Callable[[Array], Array] | None = None
    eval_many: Callable[[Array], Array] | None = field(default=None, repr=False)
    grad_many: Callable[[Array], Array] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"objective dimension must be >= 1, got {self.dim}")
        minima = _as_points(self.global_minima)
        if minima.shape[1] != self.dim:
            raise ValueError(
                f"global minima have dimension {minima.shape[1]}, expected {self.dim}"
            )
        object.__setattr__(self, "global_minima", minima)
        if self.lipschitz_grad <= 0:
            raise ValueError("lipschitz_grad must be positive")
        for xstar in minima:
            val = float(self.eval(xstar))
            if abs(val) > MIN_VALUE_TOL:
                raise ValueError(
                    f"{self.name}: value at declared minimum {xstar} is {val:.3e}, "
                    f"expected 0 within {MIN_VALUE_TOL:g}"
                )
            gnorm = float(np.linalg.norm(self.grad(xstar)))
            if gnorm > MIN_GRAD_TOL:
                raise ValueError(
                    f"{self.name}: gradient norm at declared minimum {xstar} is "
                    f"{gnorm:.3e}, expected <= {MIN_GRAD_TOL:g}"
                )

    def values(self, points: Array) -> Array:
        """Evaluate on an (m, d) array, vectorized when available."""
        pts = _as_points(points)
        if self.eval_many is not None:
            return np.asarray(self.eval_many(pts), dtype=float)
        return np.array([self.eval(p) for p in pts], dtype=float)

    def gradients(self, points: Array) -> Array:
        """Gradient at each row of an (m, d) array."""
        pts = _as_points(points)
        if self.grad_many is not None:
            return np.asarray(self.grad_many(pts), dtype=float)
        return np.stack([np.asarray(self.grad(p), dtype=float) for p in pts])


@dataclass(frozen=True)
class LocalObjectiveFamily:
    """N per-agent objectives U_n whose average equals the base objective.

    The locals are linear tilts ``U_n(x) = U(x) + shifts[n] . x`` with
    zero-sum shifts, so the average is exact and the gradient
    dissimilarity ``sup_x ||grad U_n(x) - grad U(x)|| = ||shifts[n]||`` is
    a constant known by construction.
    """

    base: Objective
    n_agents: int
    shifts: Array  # (N, d)
    dissimilarity_bound: float

    def __post_init__(self):
        shifts = np.asarray(self.shifts, dtype=float)
        if shifts.shape != (self.n_agents, self.base.dim):
            raise ValueError(
                f"shifts shape {shifts.shape} does not match "
                f"(n_agents, dim) = ({self.n_agents}, {self.base.dim})"
            )
        object.__setattr__(self, "shifts", shifts)

    @property
    def dim(self) -> int:
        return self.base.dim

    def local_eval(self, n: int, x: Array) -> float:
        return float(self.base.eval(x) + self.shifts[n] @ np.asarray(x, dtype=float))

    def local_grad(self, n: int, x: Array) -> Array:
        return np.asarray(self.base.grad(x), dtype=float) + self.shifts[n]

    def grad_stacked(self, states: Array) -> Array:
        """Per-agent gradients grad U_n(x_n) for states of shape (..., N, d)."""
        states = np.asarray(states, dtype=float)
        flat = states.reshape(-1, self.base.dim)
        grads = self.base.gradients(flat).reshape(states.shape)
        return grads + self.shifts

    def mean_eval(self, x: Array) -> float:
        """(1/N) sum_n U_n(x); equals the base objective up to rounding."""
        return float(self.base.eval(x) + self.shifts.mean(axis=0) @ np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Built-in objectives


def make_quadratic(dim: int) -> Objective:
    """U(x) = ||x||^2 with gradient 2x; unique minimum at the origin."""
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")

    def ev(x):
        x = np.asarray(x, dtype=float)
        return float(x @ x)

    def gr(x):
        return 2.0 * np.asarray(x, dtype=float)

    def hess(x):
        return 2.0 * np.eye(dim)

    return Objective(
        name=f"quadratic:d={dim}",
        dim=dim,
        eval=ev,
        grad=gr,
        lipschitz_grad=2.0,
        global_minima=np.zeros((1, dim)),
        hessian=hess,
        eval_many=lambda pts: np.einsum("md,md->m", pts, pts),
        grad_many=lambda pts: 2.0 * pts,
    )


def make_cosine_well(dim: int, a: float, b: float) -> Objective:
    """U(x) = ||x||^2 + a * sum_i (1 - cos(b x_i)).

    Quadratic growth keeps |grad U(x)| / |x| in [2 - eps, 2 + eps] at
    large radius and the radial alignment tends to 1, so the function
    satisfies the growth and alignment conditions checked by
    :func:`validate_admissibility`. Non-global local minima exist exactly
    when a * b^2 > 2; below that threshold the function is unimodal.
    """
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    if a <= 0 or b <= 0:
        raise ValueError(f"cosine well requires a > 0 and b > 0, got a={a}, b={b}")

    def ev(x):
        x = np.asarray(x, dtype=float)
        return float(x @ x + a * np.sum(1.0 - np.cos(b * x)))

    def gr(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x + a * b * np.sin(b * x)

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.diag(2.0 + a * b * b * np.cos(b * x))

    return Objective(
        name=f"cosine_well:a={a:g},b={b:g},d={dim}",
        dim=dim,
        eval=ev,
        grad=gr,
        lipschitz_grad=2.0 + a * b * b,
        global_minima=np.zeros((1, dim)),
        hessian=hess,
        eval_many=lambda pts: np.einsum("md,md->m", pts, pts)
        + a * np.sum(1.0 - np.cos(b * pts), axis=1),
        grad_many=lambda pts: 2.0 * pts + a * b * np.sin(b * pts),
    )


def make_double_well(skew: float = 0.0) -> Objective:
    """One-dimensional two-minimum objective (x^2-1)^2 (x^2 + skew*x + 1).

    Both minima sit at x = -1 and x = +1 with value 0. The curvatures are
    8*(2 - skew) and 8*(2 + skew), so ``skew`` controls the asymmetry of
    the limiting-measure atom weights; skew = 0 is fully symmetric and
    skew = 1.2 makes the curvature ratio exactly 4. Quartic growth
    violates the linear-gradient-growth condition at infinity, so this
    objective is a measure-oracle fixture, not a simulation preset; the
    admissibility validator flags it.
    """
    if abs(skew) >= 2.0:
        raise ValueError(f"|skew| must be < 2 to keep the polynomial factor positive, got {skew}")

    def _q(x):
        return x * x + skew * x + 1.0

    def ev(x):
        x = float(np.asarray(x, dtype=float).reshape(()))
        p = (x * x - 1.0) ** 2
        return p * _q(x)

    def gr(x):
        x = float(np.asarray(x, dtype=float).reshape(()))
        p = (x * x - 1.0) ** 2
        dp = 4.0 * x * (x * x - 1.0)
        return np.array([dp * _q(x) + p * (2.0 * x + skew)])

    def hess(x):
        x = float(np.asarray(x, dtype=float).reshape(()))
        p = (x * x - 1.0) ** 2
        dp = 4.0 * x * (x * x - 1.0)
        d2p = 12.0 * x * x - 4.0
        return np.array([[d2p * _q(x) + 2.0 * dp * (2.0 * x + skew) + 2.0 * p]])

    # Effective gradient-Lipschitz constant on [-3, 3], where the fixture
    # is intended to be used; the true global constant does not exist.
    xs = np.linspace(-3.0, 3.0, 4001)
    lip = 1.05 * max(abs(float(hess(x)[0, 0])) for x in (-3.0, 3.0, *xs[:: 100]))
    curv = np.array([float(hess(np.array([-1.0]))[0, 0]), float(hess(np.array([1.0]))[0, 0])])
    if np.any(curv <= 0):
        raise ValueError("double well construction produced a degenerate minimum")

    def ev_many(pts):
        x = pts[:, 0]
        return (x * x - 1.0) ** 2 * (x * x + skew * x + 1.0)

    def gr_many(pts):
        x = pts[:, 0]
        p = (x * x - 1.0) ** 2
        dp = 4.0 * x * (x * x - 1.0)
        return (dp * (x * x + skew * x + 1.0) + p * (2.0 * x + skew))[:, None]

    return Objective(
        name=f"double_well:skew={skew:g}",
        dim=1,
        eval=ev,
        grad=gr,
        lipschitz_grad=lip,
        global_minima=np.array([[-1.0], [1.0]]),
        hessian=hess,
        eval_many=ev_many,
        grad_many=gr_many,
    )


_REGISTRY = {
    "quadratic": (make_quadratic, {"d": 1}),
    "cosine_well": (make_cosine_well, {"a": 1.0, "b": 1.0, "d": 1}),
    "double_well": (make_double_well, {"skew": 0.0}),
}


def parse_objective(spec: str) -> Objective:
    """Build an objective from a registry spec like ``"cosine_well:a=1,b=1,d=2"``."""
    name, _, paramstr = spec.partition(":")
    name = name.strip()
    if name not in _REGISTRY:
        raise ValueError(f"unknown objective {name!r}; known: {sorted(_REGISTRY)}")
    factory, defaults = _REGISTRY[name]
    params = dict(defaults)
    if paramstr.strip():
        for item in paramstr.split(","):
            key, _, value = item.partition("=")
            key = key.strip()
            if key not in params:
                raise ValueError(f"unknown parameter {key!r} for objective {name!r}")
            params[key] = float(value)
    if name == "quadratic":
        return factory(int(params["d"]))
    if name == "cosine_well":
        return factory(int(params["d"]), params["a"], params["b"])
    return factory(params["skew"])


# ---------------------------------------------------------------------------
# Local objective construction


def split_linear(base: Objective, n_agents: int, spread: float, seed: int) -> LocalObjectiveFamily:
    """Split an objective into ``n_agents`` linearly tilted local objectives.

    Draws N-1 shift vectors uniformly in the ball of radius
    spread*(N-1)/N, sets the last shift to minus their sum, and rescales
    all shifts if any norm exceeds ``spread``. The zero-sum construction
    makes the average of the locals equal the base objective and makes
    the gradient dissimilarity bound exact.
    """
    if n_agents < 1:
        raise ValueError(f"n_agents must be >= 1, got {n_agents}")
    if spread < 0:
        raise ValueError(f"spread must be non-negative, got {spread}")
    d = base.dim
    shifts = np.zeros((n_agents, d))
    if n_agents > 1 and spread > 0:
        rng = np.random.default_rng(seed)
        radius = spread * (n_agents - 1) / n_agents
        for n in range(n_agents - 1):
            direction = rng.standard_normal(d)
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                continue
            r = radius * rng.random() ** (1.0 / d)
            shifts[n] = (r / norm) * direction
        shifts[n_agents - 1] = -np.sum(shifts[: n_agents - 1], axis=0)
        max_norm = float(np.linalg.norm(shifts, axis=1).max())
        if max_norm > spread:
            shifts *= spread / max_norm
    bound = float(np.linalg.norm(shifts, axis=1).max()) if n_agents > 1 else 0.0
    return LocalObjectiveFamily(
        base=base, n_agents=n_agents, shifts=shifts, dissimilarity_bound=bound
    )


# ---------------------------------------------------------------------------
# Validators


def check_gradient(obj: Objective, points, h: float = 1e-5) -> float:
    """Max relative error between central differences and the analytic gradient.

    The error at point x and coordinate i is
    |fd_i - grad_i| / (1 + |grad_i|); the maximum over all points and
    coordinates is returned. ``h`` must lie in (1e-8, 1e-2).
    """
    if not (1e-8 < h < 1e-2):
        raise ValueError(f"step h must lie in (1e-8, 1e-2), got {h}")
    pts = _as_points(points)
    if pts.size == 0:
        raise ValueError("check_gradient needs at least one point")
    if pts.shape[1] != obj.dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, expected {obj.dim}")
    worst = 0.0
    for x in pts:
        g = np.asarray(obj.grad(x), dtype=float)
        for i in range(obj.dim):
            e = np.zeros(obj.dim)
            e[i] = h
            fd = (obj.eval(x + e) - obj.eval(x - e)) / (2.0 * h)
            worst = max(worst, abs(fd - g[i]) / (1.0 + abs(g[i])))
    return worst


def radial_alignment_threshold(dim: int) -> float:
    """The dimensional constant ((4d-4)/(4d-3))^(1/2); 0 for d = 1."""
    return math.sqrt((4.0 * dim - 4.0) / (4.0 * dim - 3.0))


def _sphere_points(dim: int, radius: float, count: int) -> Array:
    if dim == 1:
        return np.array([[-radius], [radius]])
    if dim == 2:
        angles = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if dim == 3:
        # Fibonacci sphere: deterministic, near-uniform.
        k = np.arange(count, dtype=float)
        z = 1.0 - 2.0 * (k + 0.5) / count
        phi = np.pi * (1.0 + math.sqrt(5.0)) * k
        rho = np.sqrt(1.0 - z * z)
        return radius * np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(0)
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v


def _box_points(dim: int, radius: float, per_axis: int) -> Array:
    if dim <= 3 and per_axis**dim <= 200_000:
        axes = [np.linspace(-radius, radius, per_axis)] * dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    rng = np.random.default_rng(1)
    return rng.uniform(-radius, radius, size=(per_axis * per_axis, dim))


@dataclass(frozen=True)
class AdmissibilityReport:
    """Sampled proxies for the objective conditions behind the annealing theory.

    The growth and alignment conditions are asymptotic; they are checked
    on the sphere of radius ``box_radius``, which is recorded so the
    proxy is explicit.
    """

    objective: str
    dim: int
    box_radius: float
    min_value_sampled: float
    minima_values_ok: bool
    grad_ratio_min: float
    grad_ratio_max: float
    alignment_min: float
    alignment_threshold: float
    drift_inf: float | None
    flags: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.flags


def validate_admissibility(obj: Objective, box_radius: float, grid: int = 201) -> AdmissibilityReport:
    """Sample the value, growth, and alignment conditions for an objective.

    Checks, on a finite box/sphere of radius ``box_radius``:

    * min sampled value >= 0 and value 0 attained at the declared minima;
    * min and max of |grad U(x)| / |x| on the sphere (linear growth
      proxies, should be positive and finite);
    * min radial alignment <grad U/|grad U|, x/|x|> on the sphere against
      the dimensional threshold ((4d-4)/(4d-3))^(1/2);
    * when a Hessian is available, the sampled infimum of
      |grad U|^2 - laplacian U (drift condition, should be > -inf).

    Violations are reported as flags; nothing is raised.
    """
    if box_radius <= 0:
        raise ValueError("box_radius must be positive")
    flags = []

    box = _box_points(obj.dim, box_radius, grid)
    values = obj.values(box)
    min_val = float(values.min())
    if min_val < -1e-9:
        flags.append(f"negative value {min_val:.3e} sampled inside the box")
    minima_vals = obj.values(obj.global_minima)
    minima_ok = bool(np.all(np.abs(minima_vals) <= MIN_VALUE_TOL))
    if not minima_ok:
        flags.append("declared minima do not attain value 0")

    sphere = _sphere_points(obj.dim, box_radius, max(grid, 16))
    grads = obj.gradients(sphere)
    gnorms = np.linalg.norm(grads, axis=1)
    ratios = gnorms / box_radius
    ratio_min = float(ratios.min())
    ratio_max = float(ratios.max())
    if ratio_min <= 1e-12:
        flags.append("gradient growth ratio |grad U|/|x| vanishes on the sphere")

    threshold = radial_alignment_threshold(obj.dim)
    unit = sphere / box_radius
    with np.errstate(invalid="ignore", divide="ignore"):
        align = np.einsum("md,md->m", grads, unit) / np.where(gnorms > 0, gnorms, 1.0)
    align_min = float(align.min())
    if align_min < threshold:
        flags.append(
            f"radial alignment {align_min:.4f} below threshold {threshold:.4f} "
            f"at radius {box_radius:g}"
        )

    drift_inf = None
    if obj.hessian is not None:
        sub = box[:: max(1, len(box) // 4096)]
        gsub = obj.gradients(sub)
        lap = np.array([np.trace(obj.hessian(x)) for x in sub])
        drift_inf = float((np.einsum("md,md->m", gsub, gsub) - lap).min())

    return AdmissibilityReport(
        objective=obj.name,
        dim=obj.dim,
        box_radius=box_radius,
        min_value_sampled=min_val,
        minima_values_ok=minima_ok,
        grad_ratio_min=ratio_min,
        grad_ratio_max=ratio_max,
        alignment_min=align_min,
        alignment_threshold=threshold,
        drift_inf=drift_inf,
        flags=tuple(flags),
    )


def critical_points_1d(obj: Objective, lo: float, hi: float, n: int = 4001) -> list[float]:
    """Locate the zeros of the gradient of a 1-d objective on [lo, hi].

    Dense grid sign-change scan followed by bisection refinement. Used to
    verify multimodality and to pick certified local minima as starting
    points for escape experiments.
    """
    if obj.dim != 1:
        raise ValueError("critical_points_1d only supports 1-d objectives")
    xs = np.linspace(lo, hi, n)
    gs = obj.gradients(xs[:, None])[:, 0]
    roots = []
    for i in range(n - 1):
        g0, g1 = gs[i], gs[i + 1]
        if g0 == 0.0:
            roots.append(float(xs[i]))
            continue
        if g0 * g1 < 0:
            a, b = float(xs[i]), float(xs[i + 1])
            fa = g0
            for _ in range(200):
                m = 0.5 * (a + b)
                fm = float(obj.grad(np.array([m]))[0])
                if fm == 0.0 or (b - a) < 1e-14:
                    break
                if fa * fm < 0:
                    b = m
                else:
                    a, fa = m, fm
            roots.append(0.5 * (a + b))
    if gs[-1] == 0.0:
        roots.append(float(xs[-1]))
    return roots
