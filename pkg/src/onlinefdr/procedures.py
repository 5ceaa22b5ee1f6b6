"""Threshold rules for geometric LORD, SAFFRON, alpha-investing and their planned variants.

Two routes run a whole stream:

* :func:`run_streams` sends many streams at once through the compiled
  kernels in :mod:`onlinefdr.kernels`. It handles fixed stopping caps and
  caps that are affine in the rejection count (:class:`AffineCap`).
* :func:`run_reference` steps a :class:`~onlinefdr.core.ProcedureState`
  through :func:`~onlinefdr.core.advance` one hypothesis at a time, calling
  the per-step threshold functions below. It accepts arbitrary stopping
  callables and is the route used when a rule cannot be compiled.

With ``spend_fraction = pi`` the geometric allocation ``gamma_i = pi (1 - pi)^(i-1)``
makes LORD spend a fraction ``pi`` of the current wealth at each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import kernels
from .core import (
    ConfigurationError,
    InvariantError,
    ParameterDomainError,
    ProcedureState,
    ScheduleError,
    ScheduleSpec,
    advance,
)

PROCEDURES = ("lord", "saffron", "alpha-investing", "planned-lord", "planned-saffron")
LORD_FAMILY = frozenset({"lord", "planned-lord"})
SAFFRON_FAMILY = frozenset({"saffron", "alpha-investing", "planned-saffron"})

WEALTH_TOL = 1e-12


def family(procedure: str) -> str:
    if procedure in LORD_FAMILY:
        return "lord"
    if procedure in SAFFRON_FAMILY:
        return "saffron"
    raise ConfigurationError(f"unknown procedure {procedure!r}; choose from {PROCEDURES}")


@dataclass(frozen=True)
class AffineCap:
    """Stopping cap ``base + per_rejection * |R_{t-1}|``.

    With ``per_rejection >= 0`` the cap can only grow as p-values shrink,
    which is the direction stopping rules need. A negative slope gives a
    horizon that shrinks with each discovery; that breaks relaxed
    monotonicity and is kept for negative controls.
    """

    base: float
    per_rejection: float = 0.0

    def __call__(self, state: ProcedureState) -> float:
        return self.base + self.per_rejection * state.rejection_count


@dataclass(frozen=True)
class StoppingRule:
    """Halts testing after too many rejections or too many stages.

    A stage ``t`` is tested only while ``|R_{t-1}| < cap_R`` and
    ``t <= cap_stage``, where each cap is the fixed value, the adaptive
    function of the current state, or the smaller of the two when both
    are given. Once a stage fails, all later stages get threshold 0.
    """

    max_rejections: float = math.inf
    max_stage: float = math.inf
    adaptive_max_rejections: Optional[Callable[[ProcedureState], float]] = None
    adaptive_max_stage: Optional[Callable[[ProcedureState], float]] = None

    def __post_init__(self):
        for name in ("max_rejections", "max_stage"):
            v = getattr(self, name)
            if not (v >= 1):
                raise ParameterDomainError(f"{name} must be a positive integer or inf, got {v!r}")

    def rejection_cap(self, state: ProcedureState) -> float:
        cap = self.max_rejections
        if self.adaptive_max_rejections is not None:
            cap = min(cap, self.adaptive_max_rejections(state))
        return cap

    def stage_cap(self, state: ProcedureState) -> float:
        cap = self.max_stage
        if self.adaptive_max_stage is not None:
            cap = min(cap, self.adaptive_max_stage(state))
        return cap

    def halts(self, state: ProcedureState, t: int) -> bool:
        return state.rejection_count >= self.rejection_cap(state) or t > self.stage_cap(state)

    def kernel_caps(self) -> Optional[np.ndarray]:
        """``(max_r, r_slope, max_stage, stage_slope)`` or None if not compilable."""
        out = []
        for fixed, adaptive in ((self.max_rejections, self.adaptive_max_rejections),
                                (self.max_stage, self.adaptive_max_stage)):
            if adaptive is None:
                out += [fixed, 0.0]
            elif isinstance(adaptive, AffineCap) and math.isinf(fixed):
                out += [adaptive.base, adaptive.per_rejection]
            else:
                return None
        return np.array(out, dtype=np.float64)


def apply_stopping(rule: Optional[StoppingRule], state: ProcedureState, base_threshold: float,
                   t: int) -> float:
    if rule is None:
        return 0.0 if state.stopped else base_threshold
    if state.stopped or rule.halts(state, t):
        return 0.0
    return base_threshold


@dataclass(frozen=True)
class ProcedureConfig:
    """Tuning for every rule in this module.

    ``spend_fraction`` is either a constant ``pi`` or a per-specification-time
    sequence/mapping ``s -> pi_s`` (base rules use ``s = t - 1``).
    ``lambda_sequence``, when given, supplies ``lambda_i`` for the planned
    SAFFRON rule (index ``i`` at position ``i - 1``); otherwise the constant
    ``lam`` is used. ``penalize_alpha`` makes base SAFFRON charge the
    clamped ``alpha_i`` instead of ``alpha_bar_i`` for p-values above lambda.
    """

    level: float = 0.05
    spend_fraction: Union[float, Sequence[float], Mapping[int, float]] = 0.1
    lam: float = 0.5
    lambda_sequence: Optional[Sequence[float]] = None
    schedule: Optional[ScheduleSpec] = None
    stopping: Optional[StoppingRule] = None
    penalize_alpha: bool = False

    def __post_init__(self):
        if not (0.0 < self.level <= 1.0):
            raise ParameterDomainError(f"level must lie in (0, 1], got {self.level!r}")
        if not (0.0 < self.lam < 1.0):
            raise ParameterDomainError(f"lambda must lie in (0, 1), got {self.lam!r}")
        sf = self.spend_fraction
        values = sf.values() if isinstance(sf, Mapping) else ([sf] if np.isscalar(sf) else sf)
        for v in values:
            if not (0.0 <= float(v) <= 1.0):
                raise ParameterDomainError(f"spend fraction must lie in [0, 1], got {v!r}")
        if self.lambda_sequence is not None:
            seq = tuple(float(v) for v in self.lambda_sequence)
            if any(not (0.0 < v < 1.0) for v in seq):
                raise ParameterDomainError("every lambda_i must lie in (0, 1)")
            object.__setattr__(self, "lambda_sequence", seq)

    def pi_at(self, s: int) -> float:
        sf = self.spend_fraction
        if np.isscalar(sf):
            return float(sf)
        try:
            return float(sf[s])
        except (KeyError, IndexError):
            raise ConfigurationError(f"no spend fraction given for specification time {s}") from None

    def pi_array(self, n: int, times=None) -> np.ndarray:
        """Spend fractions indexed by specification time; unused times are NaN."""
        if np.isscalar(self.spend_fraction):
            return np.full(n, float(self.spend_fraction))
        out = np.full(n, np.nan)
        for s in (range(n) if times is None else times):
            out[s] = self.pi_at(s)
        return out

    def lambda_at(self, i: int) -> float:
        if self.lambda_sequence is None:
            return self.lam
        if not 1 <= i <= len(self.lambda_sequence):
            raise ConfigurationError(f"no lambda_{i} in the prespecified sequence")
        return self.lambda_sequence[i - 1]

    def lambda_array(self, n: int) -> np.ndarray:
        return np.array([self.lambda_at(i) for i in range(1, n + 1)], dtype=np.float64)

    def schedule_for(self, n: int) -> ScheduleSpec:
        if self.schedule is None:
            return ScheduleSpec.online(n)
        if len(self.schedule) != n:
            raise ScheduleError(f"schedule covers {len(self.schedule)} indices, stream has {n}")
        return self.schedule


def _nonnegative(wealth: float) -> float:
    if wealth < -WEALTH_TOL:
        raise InvariantError(f"alpha wealth went negative: {wealth!r}")
    return max(wealth, 0.0)


# -- per-step threshold rules ------------------------------------------------

def lord_threshold(state: ProcedureState, config: ProcedureConfig) -> float:
    wealth = config.level * max(1, state.rejection_count) - state.spent_sum
    return _nonnegative(wealth) * config.pi_at(state.t)


def saffron_threshold(state: ProcedureState, config: ProcedureConfig) -> tuple:
    """Candidate ``alpha_bar_t`` and threshold ``min(lam, alpha_bar_t)``."""
    charged = state.lambda_spent_sum if config.penalize_alpha else state.penalty_sum
    wealth = config.level * max(1, state.rejection_count) - charged
    lam = config.lam
    alpha_bar = _nonnegative(wealth) * (1.0 - lam) * config.pi_at(state.t)
    return alpha_bar, min(lam, alpha_bar)


def alpha_investing_threshold(state: ProcedureState, config: ProcedureConfig) -> tuple:
    """SAFFRON step with ``lambda_t`` tied to the candidate itself.

    ``a = W pi (1 - a)`` is affine in ``a``, so ``a = c / (1 + c)`` with
    ``c = W pi``. The charge for a non-rejection is then exactly ``c``.
    """
    wealth = config.level * max(1, state.rejection_count) - state.penalty_sum
    c = _nonnegative(wealth) * config.pi_at(state.t)
    alpha_bar = c / (1.0 + c)
    return alpha_bar, alpha_bar


def _check_schedule_step(schedule: ScheduleSpec, t: int, state_at_s: ProcedureState):
    if not 1 <= t <= len(schedule):
        raise ScheduleError(f"index {t} outside the schedule (1..{len(schedule)})")
    s = schedule.s(t)
    if state_at_s.t != s:
        raise ScheduleError(f"alpha_{t} is specified at time {s}, but state holds {state_at_s.t} tests")
    return s


def planned_lord_threshold(state_at_s: ProcedureState, schedule: ScheduleSpec,
                           config: ProcedureConfig, t: int, assigned: Mapping[int, float]) -> float:
    """Threshold for index ``t`` fixed at time ``s_t`` from the first ``s_t`` results.

    ``assigned`` maps every index already planned (all ``i`` with
    ``s_i < s_t``) to its threshold.
    """
    s = _check_schedule_step(schedule, t, state_at_s)
    earlier = []
    for i, s_i in enumerate(schedule.spec_time, start=1):
        if s_i < s:
            if i not in assigned:
                raise ScheduleError(f"alpha_{i} (s_i={s_i}) must be planned before time {s}")
            earlier.append(assigned[i])
    wealth = config.level * max(1, state_at_s.rejection_count) - math.fsum(earlier)
    return _nonnegative(wealth) * config.pi_at(s) / schedule.group_size(s)


def planned_saffron_threshold(state_at_s: ProcedureState, schedule: ScheduleSpec,
                              config: ProcedureConfig, t: int,
                              assigned: Mapping[int, float]) -> tuple:
    """``(alpha_bar_prime_t, alpha_t)`` for index ``t`` under a prespecified lambda sequence.

    Indices not yet observed at ``s_t`` are charged as if their p-value
    exceeded ``lambda_i``.
    """
    s = _check_schedule_step(schedule, t, state_at_s)
    charged = []
    for i, s_i in enumerate(schedule.spec_time, start=1):
        if s_i < s:
            if i not in assigned:
                raise ScheduleError(f"alpha_{i} (s_i={s_i}) must be planned before time {s}")
            lam_i = config.lambda_at(i)
            unseen = i > s
            if unseen or lam_i < state_at_s.records[i - 1].p:
                charged.append(assigned[i] / (1.0 - lam_i))
    wealth = config.level * max(1, state_at_s.rejection_count) - math.fsum(charged)
    lam_t = config.lambda_at(t)
    alpha_bar = _nonnegative(wealth) * (1.0 - lam_t) * config.pi_at(s) / schedule.group_size(s)
    return alpha_bar, min(lam_t, alpha_bar)


# -- whole-stream runners ----------------------------------------------------

@dataclass
class StreamResult:
    """Per-stage outputs for one or many streams (arrays shaped like ``p``)."""

    procedure: str
    level: float
    p: np.ndarray
    alpha: np.ndarray
    rejected: np.ndarray
    wealth: np.ndarray
    spec_time: np.ndarray
    alpha_bar: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def family(self) -> str:
        return family(self.procedure)

    def stream(self, j: int) -> "StreamResult":
        pick = lambda a: None if a is None else a[j]
        return replace(self, p=self.p[j], alpha=self.alpha[j], rejected=self.rejected[j],
                       wealth=self.wealth[j], alpha_bar=pick(self.alpha_bar), lam=pick(self.lam))

    def to_state(self, is_null=None, batch=None) -> ProcedureState:
        """Replay a single stream into a :class:`ProcedureState`."""
        if self.p.ndim != 1:
            raise ValueError("to_state needs a single stream; use .stream(j)")
        state = ProcedureState(level=self.level)
        halted = self.extras.get("halted")
        for k in range(self.p.shape[0]):
            state = advance(
                state, float(self.p[k]), float(self.alpha[k]),
                lam=None if self.lam is None else float(self.lam[k]),
                alpha_bar=None if self.alpha_bar is None else float(self.alpha_bar[k]),
                specified_at=int(self.spec_time[k]),
                batch=None if batch is None else int(batch[k]),
                is_null=None if is_null is None else bool(is_null[k]),
                stopped=halted is not None and bool(halted[k]),
            )
        return state


def _validate_stream(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.size and (np.isnan(p).any() or p.min() < 0.0 or p.max() > 1.0):
        raise ParameterDomainError("p-values must lie in [0, 1]")
    return p


def supports_kernels(config: ProcedureConfig) -> bool:
    return config.stopping is None or config.stopping.kernel_caps() is not None


def run_streams(procedure: str, p, config: ProcedureConfig, backend: Optional[str] = None
                ) -> StreamResult:
    """Run every row of ``p`` through ``procedure`` with the compiled kernels."""
    family(procedure)
    p = _validate_stream(p)
    squeeze = p.ndim == 1
    p2 = np.atleast_2d(p)
    n = p2.shape[1]
    caps = None
    if config.stopping is not None:
        caps = config.stopping.kernel_caps()
        if caps is None:
            raise ConfigurationError("stopping rule has arbitrary callables; use run_reference")
    level = config.level

    if procedure in ("lord", "saffron", "alpha-investing"):
        pi = config.pi_array(n)
    else:
        schedule = config.schedule_for(n)
        pi = config.pi_array(n, times=schedule.group_sizes)
    if procedure == "lord":
        spec = np.arange(n)
        out = kernels.lord(p2, level, pi, caps, backend)
    elif procedure == "saffron":
        spec = np.arange(n)
        out = kernels.saffron(p2, level, pi, config.lam, config.penalize_alpha, caps, backend)
    elif procedure == "alpha-investing":
        spec = np.arange(n)
        out = kernels.alpha_investing(p2, level, pi, caps, backend)
    else:
        spec = np.asarray(schedule.spec_time, dtype=np.int64)
        if procedure == "planned-lord":
            out = kernels.planned_lord(p2, spec, level, pi, caps, backend)
        else:
            out = kernels.planned_saffron(p2, spec, level, pi, config.lambda_array(n), caps, backend)

    if (out["wealth"] < -WEALTH_TOL).any():
        raise InvariantError(f"alpha wealth went negative: {out['wealth'].min()!r}")
    halted = _halted_mask(p2, out, caps)
    pick = (lambda a: a[0]) if squeeze else (lambda a: a)
    return StreamResult(
        procedure=procedure, level=level, p=pick(p2), alpha=pick(out["alpha"]),
        rejected=pick(out["rejected"]), wealth=pick(out["wealth"]), spec_time=spec,
        alpha_bar=None if "alpha_bar" not in out else pick(out["alpha_bar"]),
        lam=None if "lam" not in out else pick(out["lam"]),
        extras={"halted": pick(halted)},
    )


def _halted_mask(p, out, caps):
    if caps is None:
        return np.zeros(p.shape, dtype=bool)
    R_before = np.cumsum(out["rejected"], axis=1) - out["rejected"]
    t = np.arange(1, p.shape[1] + 1)
    max_r, r_slope, max_stage, stage_slope = caps
    fails = (R_before >= max_r + r_slope * R_before) | (t > max_stage + stage_slope * R_before)
    return np.logical_or.accumulate(fails, axis=1)


def run_reference(procedure: str, p, config: ProcedureConfig, is_null=None, batch=None
                  ) -> ProcedureState:
    """Run one stream through the per-step rules and :func:`advance`."""
    family(procedure)
    p = _validate_stream(p)
    if p.ndim != 1:
        raise ValueError("run_reference takes a single stream")
    n = p.shape[0]
    rule = config.stopping
    state = ProcedureState(level=config.level)

    def label(k, key):
        src = is_null if key == "is_null" else batch
        if src is None:
            return None
        return bool(src[k]) if key == "is_null" else int(src[k])

    if procedure in ("lord", "saffron", "alpha-investing"):
        for k in range(n):
            t = k + 1
            halt = state.stopped or (rule is not None and rule.halts(state, t))
            lam = alpha_bar = None
            if procedure == "lord":
                alpha = lord_threshold(state, config)
            elif procedure == "saffron":
                alpha_bar, alpha = saffron_threshold(state, config)
                lam = config.lam
            else:
                alpha_bar, alpha = alpha_investing_threshold(state, config)
                lam = alpha_bar
            if halt:
                alpha = 0.0
                alpha_bar = None if alpha_bar is None else 0.0
                lam = 0.0 if procedure == "alpha-investing" else lam
            state = advance(state, p[k], alpha, lam=lam, alpha_bar=alpha_bar,
                            batch=label(k, "batch"), is_null=label(k, "is_null"), stopped=halt)
        return state

    schedule = config.schedule_for(n)
    members = {}
    for i, s_i in enumerate(schedule.spec_time, start=1):
        members.setdefault(s_i, []).append(i)
    assigned, planned_bar = {}, {}
    for s in range(n + 1):
        if s >= 1:
            k = s - 1
            halt = state.stopped or (rule is not None and rule.halts(state, s))
            alpha = 0.0 if halt else assigned[s]
            lam = alpha_bar = None
            if procedure == "planned-saffron":
                lam = config.lambda_at(s)
                alpha_bar = 0.0 if halt else planned_bar[s]
            state = advance(state, p[k], alpha, lam=lam, alpha_bar=alpha_bar,
                            specified_at=schedule.s(s), batch=label(k, "batch"),
                            is_null=label(k, "is_null"), stopped=halt)
        # thresholds of one group depend only on earlier groups, so compute
        # them all before recording any of them
        group = members.get(s, [])
        if procedure == "planned-lord":
            planned = {t: planned_lord_threshold(state, schedule, config, t, assigned) for t in group}
            assigned.update(planned)
        else:
            planned = {t: planned_saffron_threshold(state, schedule, config, t, assigned)
                       for t in group}
            for t, (ab, a) in planned.items():
                planned_bar[t] = ab
                assigned[t] = a
    return state
