"""Decaying weight schedules for the distributed and centralized recursions.

The distributed recursion uses three sequences: the gradient step weight
c_alpha / t', the consensus weight c_beta / t'^tau_beta, and the annealing
weight c_gamma / sqrt(t' * log log t'), all in effective time
t' = t + t_offset. The centralized baseline uses a_t = A / t' and
b_t = sqrt(B) / sqrt(t' * log log t'), which coincide bit-for-bit with the
distributed pair when A = c_alpha and B = c_gamma^2 (for c_gamma whose
square is exactly representable).

Natural logarithms throughout. The default offset 16 keeps
log log t' > 0 from the first step (t counts from 1); an offset below 15
would make the annealing weight undefined early, so it is rejected
whenever annealing is enabled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_ANNEAL_OFFSET = 15  # smallest offset with log log (1 + offset) > 0


def _loglog(tprime):
    return np.log(np.log(tprime))


@dataclass(frozen=True)
class ScheduleSet:
    """Weight constants for the distributed recursion."""

    c_alpha: float
    c_beta: float
    tau_beta: float
    c_gamma: float = 0.0
    t_offset: int = 16
    c0_threshold: float | None = None

    def __post_init__(self):
        if self.c_alpha <= 0:
            raise ValueError(f"c_alpha must be positive, got {self.c_alpha}")
        if self.c_beta <= 0:
            raise ValueError(f"c_beta must be positive, got {self.c_beta}")
        if not 0.0 < self.tau_beta < 0.5:
            raise ValueError(
                f"tau_beta must lie strictly inside (0, 1/2), got {self.tau_beta}"
            )
        if self.c_gamma < 0:
            raise ValueError(f"c_gamma must be non-negative, got {self.c_gamma}")
        if self.t_offset < 0:
            raise ValueError(f"t_offset must be non-negative, got {self.t_offset}")
        if self.c_gamma > 0 and self.t_offset < MIN_ANNEAL_OFFSET:
            raise ValueError(
                f"annealing needs t_offset >= {MIN_ANNEAL_OFFSET} so that "
                f"log log(t + t_offset) > 0 from t = 1, got {self.t_offset}"
            )


def alpha(s: ScheduleSet, t):
    """Gradient step weight c_alpha / (t + t_offset); accepts arrays."""
    tprime = np.asarray(t, dtype=float) + s.t_offset
    return s.c_alpha / tprime


def beta(s: ScheduleSet, t):
    """Consensus weight c_beta / (t + t_offset)^tau_beta; accepts arrays."""
    tprime = np.asarray(t, dtype=float) + s.t_offset
    return s.c_beta / tprime**s.tau_beta


def gamma(s: ScheduleSet, t):
    """Annealing weight c_gamma / sqrt((t + t_offset) log log (t + t_offset)).

    Identically zero when c_gamma = 0 (annealing disabled). NaN where the
    iterated logarithm is undefined (only reachable with a small offset
    and annealing disabled at construction time).
    """
    tprime = np.asarray(t, dtype=float) + s.t_offset
    if s.c_gamma == 0.0:
        return np.zeros_like(tprime)
    with np.errstate(invalid="ignore"):
        return s.c_gamma / (np.sqrt(tprime) * np.sqrt(_loglog(tprime)))


@dataclass(frozen=True)
class CentralizedSchedule:
    """Weights a_t = A / t' and b_t^2 = B / (t' log log t') for the baseline."""

    A: float
    B: float = 0.0
    t_offset: int = 16

    def __post_init__(self):
        if self.A <= 0:
            raise ValueError(f"A must be positive, got {self.A}")
        if self.B < 0:
            raise ValueError(f"B must be non-negative, got {self.B}")
        if self.t_offset < 0:
            raise ValueError(f"t_offset must be non-negative, got {self.t_offset}")
        if self.B > 0 and self.t_offset < MIN_ANNEAL_OFFSET:
            raise ValueError(
                f"annealing needs t_offset >= {MIN_ANNEAL_OFFSET}, got {self.t_offset}"
            )


def centralized_a_b(cs: CentralizedSchedule, t):
    """(a_t, b_t) for the centralized recursion; accepts arrays.

    b_t is computed as sqrt(B) / (sqrt(t') sqrt(log log t')), the same
    expression tree as the distributed annealing weight, so the two
    recursions match bit-for-bit when A = c_alpha and sqrt(B) = c_gamma.
    """
    tprime = np.asarray(t, dtype=float) + cs.t_offset
    a = cs.A / tprime
    if cs.B == 0.0:
        return a, np.zeros_like(tprime)
    sqrt_b = np.sqrt(cs.B)
    with np.errstate(invalid="ignore"):
        b = sqrt_b / (np.sqrt(tprime) * np.sqrt(_loglog(tprime)))
    return a, b


@dataclass(frozen=True)
class ScheduleReport:
    """Validation summary for a schedule set."""

    tau_max: float
    annealing_ratio: float
    ratio_ok: bool | None
    warnings: tuple[str, ...]

    @property
    def ok(self) -> bool:
        # Hard constraints are enforced at construction; remaining checks
        # are advisory.
        return True


def validate(s: ScheduleSet) -> ScheduleReport:
    """Advisory checks on a constructed schedule set.

    Construction already enforces positivity and the open-interval
    constraint on tau_beta. This reports the largest consensus-decay
    exponent tau_max = 1/2 - tau_beta and, when a critical-ratio
    threshold is configured, whether c_gamma^2 / c_alpha clears it.
    """
    warnings = []
    ratio = s.c_gamma**2 / s.c_alpha
    ratio_ok: bool | None = None
    if s.c0_threshold is not None and s.c_gamma > 0:
        ratio_ok = ratio > s.c0_threshold
        if not ratio_ok:
            warnings.append(
                f"annealing ratio c_gamma^2/c_alpha = {ratio:g} does not exceed "
                f"the configured threshold {s.c0_threshold:g}"
            )
    if s.c_gamma == 0:
        warnings.append("annealing disabled (c_gamma = 0): noise-free control arm")
    return ScheduleReport(
        tau_max=0.5 - s.tau_beta,
        annealing_ratio=ratio,
        ratio_ok=ratio_ok,
        warnings=tuple(warnings),
    )
