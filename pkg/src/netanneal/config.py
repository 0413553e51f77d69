"""Experiment configuration: INI parsing, validation, and materialization.

The on-disk format is flat sectioned key = value text (INI), chosen to be
diff-friendly for sweeps. Sections: objective, split, graph, schedule,
noise, run, metrics, seeds, and optionally gibbs. Overrides are applied
as repeated ``section.key=value`` strings. The config hash is a sha256
over the canonical (sorted) rendering and is embedded in every artifact.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from . import engine, schedules, topology
from .objectives import (
    Objective,
    LocalObjectiveFamily,
    check_gradient,
    parse_objective,
    split_linear,
    validate_admissibility,
)

DEFAULTS = {
    "split": {"n_agents": "1", "spread": "0.0", "seed": "0"},
    "run": {
        "mode": "distributed",
        "stride": "100",
        "dense_until": "100",
        "initial": "0.0",
        "snapshot_ts": "",
    },
    "metrics": {
        "tau": "0.15",
        "success_radius": "0.5",
        "slope_t_lo": "1000",
    },
    "seeds": {"master_seed": "0", "n_runs": "1"},
}


@dataclass
class ExperimentConfig:
    """Raw section -> key -> value mapping with typed accessors."""

    sections: dict[str, dict[str, str]] = field(default_factory=dict)

    # -- raw access -------------------------------------------------------
    def get(self, section: str, key: str, fallback: str | None = None) -> str:
        value = self.sections.get(section, {}).get(key)
        if value is None:
            value = DEFAULTS.get(section, {}).get(key)
        if value is None:
            if fallback is None:
                raise KeyError(f"missing config key {section}.{key}")
            return fallback
        return value

    def has(self, section: str, key: str | None = None) -> bool:
        if key is None:
            return section in self.sections
        return key in self.sections.get(section, {})

    def set(self, section: str, key: str, value: str) -> None:
        self.sections.setdefault(section, {})[key] = value

    # -- canonical form ---------------------------------------------------
    def canonical_text(self) -> str:
        out = io.StringIO()
        for section in sorted(self.sections):
            out.write(f"[{section}]\n")
            for key in sorted(self.sections[section]):
                out.write(f"{key} = {self.sections[section][key]}\n")
            out.write("\n")
        return out.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    # -- materialization --------------------------------------------------
    def objective(self) -> Objective:
        return parse_objective(self.get("objective", "spec"))

    def n_agents(self) -> int:
        if self.get("run", "mode") == "centralized":
            return 1
        return int(self.get("split", "n_agents"))

    def family(self, obj: Objective | None = None) -> LocalObjectiveFamily:
        obj = obj or self.objective()
        return split_linear(
            obj,
            int(self.get("split", "n_agents")),
            float(self.get("split", "spread")),
            int(self.get("split", "seed")),
        )

    def graph(self) -> topology.GraphModel:
        return topology.parse_graph(self.get("graph", "spec", "static:complete"), self.n_agents())

    def schedule(self) -> schedules.ScheduleSet:
        threshold = None
        if self.has("schedule", "c0_threshold"):
            threshold = float(self.get("schedule", "c0_threshold"))
        return schedules.ScheduleSet(
            c_alpha=float(self.get("schedule", "c_alpha")),
            c_beta=float(self.get("schedule", "c_beta", "1.0")),
            tau_beta=float(self.get("schedule", "tau_beta")),
            c_gamma=float(self.get("schedule", "c_gamma", "0.0")),
            t_offset=int(self.get("schedule", "t_offset", "16")),
            c0_threshold=threshold,
        )

    def centralized_schedule(self) -> schedules.CentralizedSchedule:
        c_alpha = float(self.get("schedule", "c_alpha"))
        c_gamma = float(self.get("schedule", "c_gamma", "0.0"))
        a_val = float(self.get("schedule", "A", str(c_alpha)))
        b_val = float(self.get("schedule", "B", str(c_gamma**2)))
        return schedules.CentralizedSchedule(
            A=a_val, B=b_val, t_offset=int(self.get("schedule", "t_offset", "16"))
        )

    def noise(self) -> engine.NoiseModel:
        return engine.parse_noise(self.get("noise", "spec", "none"))

    def initial_state(self, obj: Objective, n_agents: int) -> np.ndarray:
        spec = self.get("run", "initial")
        groups = [g for g in spec.split(";") if g.strip()]
        points = [np.array([float(v) for v in g.split(",")], dtype=float) for g in groups]
        for p in points:
            if p.size != obj.dim:
                raise engine.ConfigError(
                    f"initial point of dimension {p.size} does not match d = {obj.dim}"
                )
        if len(points) == 1:
            stacked = np.tile(points[0], n_agents)
        elif len(points) == n_agents:
            stacked = np.concatenate(points)
        else:
            raise engine.ConfigError(
                f"initial condition lists {len(points)} points for {n_agents} agents"
            )
        return stacked

    def snapshot_ts(self) -> tuple[int, ...]:
        raw = self.get("run", "snapshot_ts")
        return tuple(int(v) for v in raw.split(",") if v.strip())

    def run_config(self) -> engine.RunConfig:
        obj = self.objective()
        mode = self.get("run", "mode")
        n = self.n_agents()
        common = dict(
            mode=mode,
            steps=int(self.get("run", "steps")),
            objective=obj,
            noise=self.noise(),
            initial=self.initial_state(obj, n),
            stride=int(self.get("run", "stride")),
            dense_until=int(self.get("run", "dense_until")),
            snapshot_ts=self.snapshot_ts(),
            tau=float(self.get("metrics", "tau")),
            master_seed=int(self.get("seeds", "master_seed")),
            config_hash=self.config_hash(),
        )
        if mode == "centralized":
            return engine.RunConfig(centralized=self.centralized_schedule(), **common)
        return engine.RunConfig(
            family=self.family(obj),
            graph=self.graph(),
            schedule=self.schedule(),
            **common,
        )


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as handle:
        parser.read_file(handle, source=str(path))
    sections = {
        name: {k: v for k, v in parser.items(name)} for name in parser.sections()
    }
    return ExperimentConfig(sections=sections)


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(text)
    sections = {
        name: {k: v for k, v in parser.items(name)} for name in parser.sections()
    }
    return ExperimentConfig(sections=sections)


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply repeated ``section.key=value`` strings to a copy of the config."""
    out = ExperimentConfig(sections={s: dict(kv) for s, kv in cfg.sections.items()})
    for item in overrides or []:
        target, _, value = item.partition("=")
        section, _, key = target.partition(".")
        if not section or not key or not _:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        out.set(section.strip(), key.strip(), value.strip())
    return out


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    status: str  # ok | warn | fail
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ValidationCheck, ...]

    @property
    def hard_failures(self) -> list[ValidationCheck]:
        return [c for c in self.checks if c.status == "fail"]

    @property
    def ok(self) -> bool:
        return not self.hard_failures


def validate_experiment(cfg: ExperimentConfig) -> ValidationReport:
    """Run the pre-flight checks a configuration must clear before running.

    Hard failures: unparseable components, the consensus-decay exponent
    leaving its open interval, dimension mismatches, and (when a gibbs
    section is present) minima outside the quadrature bounds. Everything
    else (connectivity of the mean graph, admissibility proxies, the
    annealing-ratio threshold) is advisory.
    """
    checks: list[ValidationCheck] = []

    def ok(name, detail=""):
        checks.append(ValidationCheck(name, "ok", detail))

    def warn(name, detail):
        checks.append(ValidationCheck(name, "warn", detail))

    def fail(name, detail):
        checks.append(ValidationCheck(name, "fail", detail))

    obj = None
    try:
        obj = cfg.objective()
        ok("objective", obj.name)
    except (ValueError, KeyError) as exc:
        fail("objective", str(exc))

    if obj is not None:
        rng = np.random.default_rng(0)
        pts = rng.uniform(-3.0, 3.0, size=(20, obj.dim))
        err = check_gradient(obj, pts, 1e-5)
        if err <= 1e-6:
            ok("gradient_consistency", f"max relative error {err:.2e}")
        else:
            warn("gradient_consistency", f"max relative error {err:.2e} > 1e-6")
        report = validate_admissibility(obj, box_radius=50.0, grid=101)
        if report.ok:
            ok("objective_admissibility", f"alignment {report.alignment_min:.3f}")
        else:
            for flag in report.flags:
                warn("objective_admissibility", flag)

    mode = cfg.get("run", "mode")
    if mode not in ("distributed", "centralized"):
        fail("run_mode", f"unknown mode {mode!r}")
    else:
        ok("run_mode", mode)

    n_agents = None
    try:
        n_agents = cfg.n_agents()
        if n_agents < 1:
            fail("split", "n_agents must be >= 1")
        else:
            ok("split", f"{n_agents} agents, spread {cfg.get('split', 'spread')}")
    except ValueError as exc:
        fail("split", str(exc))

    if mode == "distributed" and n_agents:
        try:
            graph = cfg.graph()
            connected, lam = topology.check_connected_in_mean(graph)
            if connected:
                ok("graph_connectivity", f"lambda2(mean Laplacian) = {lam:g}")
            else:
                warn("graph_connectivity", f"mean graph disconnected (lambda2 = {lam:g})")
        except ValueError as exc:
            fail("graph", str(exc))

    sched = None
    try:
        if mode == "distributed":
            sched = cfg.schedule()
            report = schedules.validate(sched)
            ok(
                "schedule",
                f"tau_max = {report.tau_max:g}, annealing ratio = {report.annealing_ratio:g}",
            )
            for message in report.warnings:
                warn("schedule", message)
            if report.ratio_ok is False:
                pass  # already warned through report.warnings
        else:
            cfg.centralized_schedule()
            ok("schedule", "centralized weights valid")
    except ValueError as exc:
        fail("schedule", str(exc))

    if sched is not None:
        tau = float(cfg.get("metrics", "tau"))
        if not 0.0 <= tau < 0.5 - sched.tau_beta:
            warn(
                "metrics_tau",
                f"tau = {tau:g} is outside [0, 1/2 - tau_beta) = "
                f"[0, {0.5 - sched.tau_beta:g}); the scaled consensus error "
                "need not vanish",
            )
        else:
            ok("metrics_tau", f"tau = {tau:g}")

    try:
        cfg.noise()
        ok("noise", cfg.get("noise", "spec", "none"))
    except ValueError as exc:
        fail("noise", str(exc))

    if obj is not None and n_agents:
        try:
            cfg.initial_state(obj, n_agents)
            ok("initial_state", "")
        except (ValueError, engine.ConfigError) as exc:
            fail("initial_state", str(exc))

    try:
        steps = int(cfg.get("run", "steps"))
        if steps < 0:
            fail("run_steps", "steps must be non-negative")
        else:
            ok("run_steps", str(steps))
    except (KeyError, ValueError) as exc:
        fail("run_steps", str(exc))

    if cfg.has("gibbs") and obj is not None:
        try:
            lo = float(cfg.get("gibbs", "lo"))
            hi = float(cfg.get("gibbs", "hi"))
            eps = [float(v) for v in cfg.get("gibbs", "epsilons").split(",")]
            margin = 5.0 * max(eps)
            bad = [
                xstar
                for xstar in obj.global_minima
                if np.any(xstar - lo < margin) or np.any(hi - xstar < margin)
            ]
            if bad:
                fail(
                    "gibbs_bounds",
                    f"minima {bad} are within 5*eps of the bounds [{lo:g}, {hi:g}]",
                )
            else:
                ok("gibbs_bounds", f"[{lo:g}, {hi:g}] clears all minima")
        except (KeyError, ValueError) as exc:
            fail("gibbs_bounds", str(exc))

    return ValidationReport(checks=tuple(checks))
