"""Audits: relaxed-monotonicity perturbation tests, constraint checks, oracle cross-checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import oracle
from .core import ProcedureState, ScheduleSpec, replay
from .estimators import fdp_hat_0_path, fdp_hat_lambda_path
from .procedures import (
    PROCEDURES,
    ProcedureConfig,
    StoppingRule,
    run_reference,
    run_streams,
    supports_kernels,
)
from .simulate import normal_cdf

CONSTRAINT_TOL = 1e-12


def sample_streams(rng, count: int, length: int, signal_fraction: float = 0.3,
                   signal_mean: float = 3.0) -> np.ndarray:
    """Uniform null p-values mixed with one-sided Gaussian signals."""
    signal = rng.random((count, length)) < signal_fraction
    z = rng.standard_normal((count, length)) + np.where(signal, signal_mean, 0.0)
    return np.where(signal, normal_cdf(-z), rng.random((count, length)))


# -- relaxed monotonicity --------------------------------------------------------

@dataclass(frozen=True)
class PerturbationTrial:
    trial: int
    base_stream: np.ndarray = field(repr=False)
    perturbed_stream: np.ndarray = field(repr=False)
    rejections_base: int
    rejections_perturbed: int

    def __post_init__(self):
        if np.any(self.perturbed_stream > self.base_stream):
            raise ValueError("perturbed stream must be coordinatewise <= base stream")

    @property
    def violated(self) -> bool:
        return self.rejections_perturbed < self.rejections_base

    @property
    def changed(self) -> np.ndarray:
        return np.flatnonzero(self.perturbed_stream != self.base_stream)


@dataclass
class Condition1Report:
    procedure: str
    trials: int
    length: int
    seed: int
    counterexamples: list

    @property
    def violations(self) -> int:
        return len(self.counterexamples)

    def summary(self) -> str:
        lines = [f"{self.procedure}: {self.trials} trials of length {self.length} (seed {self.seed}), "
                 f"{self.violations} violation(s)"]
        for ce in self.counterexamples[:10]:
            idx = ", ".join(
                f"p[{i + 1}] {ce.base_stream[i]:.4g}->{ce.perturbed_stream[i]:.4g}" for i in ce.changed)
            lines.append(f"  trial {ce.trial}: rejections {ce.rejections_base} -> "
                         f"{ce.rejections_perturbed} after lowering {idx}")
        if self.violations > 10:
            lines.append(f"  ... {self.violations - 10} more")
        return "\n".join(lines)


def total_rejections(procedure: str, p: np.ndarray, config: ProcedureConfig) -> np.ndarray:
    """Rejection totals for each row of ``p`` under the composed rule."""
    p = np.atleast_2d(p)
    if supports_kernels(config):
        return run_streams(procedure, p, config).rejected.sum(axis=1)
    return np.array([run_reference(procedure, row, config).rejection_count for row in p])


def _minimize(procedure, config, base, perturbed):
    """Undo perturbed coordinates one at a time while the violation persists."""
    current = perturbed.copy()
    r_base = int(total_rejections(procedure, base, config)[0])
    for i in np.flatnonzero(perturbed != base):
        trial = current.copy()
        trial[i] = base[i]
        if int(total_rejections(procedure, trial, config)[0]) < r_base:
            current = trial
    return current


def perturb(rng, base: np.ndarray) -> np.ndarray:
    """Scale a random nonempty subset of each row by independent U(0, 1) factors."""
    m, n = base.shape
    rate = rng.random((m, 1))
    chosen = rng.random((m, n)) < rate
    chosen[np.arange(m), rng.integers(0, n, size=m)] = True
    return np.where(chosen, base * rng.random((m, n)), base)


def check_condition_1(procedure: str, config: Optional[ProcedureConfig] = None, trials: int = 1000,
                      length: int = 100, seed: int = 0, signal_fraction: float = 0.3,
                      signal_mean: float = 3.0, minimize: bool = True) -> Condition1Report:
    """Lower p-values at random and look for a drop in total rejections.

    Deterministic for a given seed. Counterexamples are sorted by trial
    index and, if ``minimize``, reduced to a minimal set of lowered
    coordinates.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    config = config or ProcedureConfig()
    if config.schedule is not None and len(config.schedule) != length:
        raise ValueError("schedule length must match the stream length")
    rng = np.random.default_rng(seed)
    base = sample_streams(rng, trials, length, signal_fraction, signal_mean)
    perturbed = perturb(rng, base)
    r_base = total_rejections(procedure, base, config)
    r_pert = total_rejections(procedure, perturbed, config)
    out = []
    for j in np.flatnonzero(r_pert < r_base):
        pert = _minimize(procedure, config, base[j], perturbed[j]) if minimize else perturbed[j]
        out.append(PerturbationTrial(
            trial=int(j), base_stream=base[j], perturbed_stream=pert,
            rejections_base=int(r_base[j]),
            rejections_perturbed=int(total_rejections(procedure, pert, config)[0]),
        ))
    return Condition1Report(procedure, trials, length, seed, out)


class FirstRejectionWindow:
    """Stage cap ``first rejection time + window``; infinite before any rejection.

    Lowering an early p-value moves the first rejection, and with it the
    cap, earlier. That is the wrong direction for a stopping trigger.
    """

    def __init__(self, window: int):
        self.window = int(window)

    def __call__(self, state: ProcedureState) -> float:
        for r in state.records:
            if r.rejected:
                return r.index + self.window
        return math.inf

    def __repr__(self):
        return f"FirstRejectionWindow({self.window})"


def strawman_config(length: int, level: float = 0.05, spend_fraction: float = 0.1
                    ) -> ProcedureConfig:
    """LORD that stops a short, fixed window after its first rejection."""
    window = FirstRejectionWindow(max(1, length // 10))
    return ProcedureConfig(level=level, spend_fraction=spend_fraction,
                           stopping=StoppingRule(adaptive_max_stage=window))


def first_rejection_stop_config(level: float = 0.05, spend_fraction: float = 0.1) -> ProcedureConfig:
    """LORD that zeroes every threshold after the first rejection.

    The thresholds are not monotone in the p-values, but the total
    rejection count (one if any rejection happens, else zero) is.
    """
    return ProcedureConfig(level=level, spend_fraction=spend_fraction,
                           stopping=StoppingRule(max_rejections=1))


def check_cap_monotonicity(cap: Callable[[ProcedureState], float], procedure: str = "lord",
                           config: Optional[ProcedureConfig] = None, trials: int = 200,
                           length: int = 50, seed: int = 0) -> int:
    """Count stages where lowering p-values lowered an adaptive stopping cap.

    The cap is evaluated on the uncapped base rule's history. A valid cap
    (nonincreasing in the p-values) returns 0.
    """
    config = replace(config or ProcedureConfig(), stopping=None)
    rng = np.random.default_rng(seed)
    base = sample_streams(rng, trials, length)
    perturbed = perturb(rng, base)
    bad = 0
    for b, q in zip(base, perturbed):
        sb = run_reference(procedure, b, config)
        sq = run_reference(procedure, q, config)
        hb, hq = ProcedureState(level=config.level), ProcedureState(level=config.level)
        for t in range(length + 1):
            if cap(hq) < cap(hb):
                bad += 1
            if t < length:
                hb = replay(config.level, sb.records[: t + 1])
                hq = replay(config.level, sq.records[: t + 1])
    return bad


# -- constraint audits -----------------------------------------------------------

def estimator_path(result, fam: Optional[str] = None) -> np.ndarray:
    """The family's FDP estimate at every prefix (LORD: spend-based, SAFFRON: lambda-adjusted)."""
    if isinstance(result, ProcedureState):
        recs = result.records
        alpha = np.array([r.alpha for r in recs])
        rej = np.array([r.rejected for r in recs])
        if fam == "lord":
            return fdp_hat_0_path(alpha, rej)
        p = np.array([r.p for r in recs])
        lam = np.array([r.lam for r in recs], dtype=np.float64)
        return fdp_hat_lambda_path(p, alpha, lam, rej)
    fam = fam or result.family
    if fam == "lord":
        return fdp_hat_0_path(result.alpha, result.rejected)
    return fdp_hat_lambda_path(result.p, result.alpha, result.lam, result.rejected)


def audit_constraints(result, fam: Optional[str] = None, tol: float = CONSTRAINT_TOL) -> bool:
    """True iff the family's FDP estimate stays within ``level + tol`` at every prefix."""
    if isinstance(result, ProcedureState):
        if fam not in ("lord", "saffron"):
            raise ValueError("auditing a bare state needs fam='lord' or fam='saffron'")
        level = result.level
        if len(result) == 0:
            return True
    else:
        level = result.level
    return bool(np.all(estimator_path(result, fam) <= level + tol))


# -- oracle cross-check ------------------------------------------------------------

def random_schedule(rng, n: int) -> ScheduleSpec:
    """Specification times drawn uniformly from ``0..i-1``; rarely monotone."""
    return ScheduleSpec(tuple(int(rng.integers(0, i)) for i in range(1, n + 1)))


def direct_thresholds(procedure: str, p: np.ndarray, config: ProcedureConfig) -> np.ndarray:
    n = p.shape[0]
    if procedure == "lord":
        return oracle.direct_lord(p, config.level, config.pi_at(0))
    if procedure == "saffron":
        return oracle.direct_saffron(p, config.level, config.pi_at(0), config.lam,
                                     config.penalize_alpha)[1]
    if procedure == "alpha-investing":
        return oracle.direct_alpha_investing(p, config.level, config.pi_at(0))
    sched = config.schedule_for(n)
    pis = [config.pi_at(s) if sched.group_size(s) else 0.0 for s in range(n)]
    if procedure == "planned-lord":
        return oracle.direct_planned_lord(p, sched.spec_time, config.level, pis)
    return oracle.direct_planned_saffron(p, sched.spec_time, config.level, pis,
                                         config.lambda_array(n))[1]


def oracle_crosscheck(procedure: str, config: Optional[ProcedureConfig] = None, streams: int = 100,
                      length: int = 200, seed: int = 0,
                      schedules: Optional[Sequence[ScheduleSpec]] = None) -> float:
    """Largest ``|alpha_fast - alpha_direct|`` over all streams and stages.

    Planned rules use ``config.schedule`` when set; otherwise each stream
    gets its own random non-monotone schedule (or one from ``schedules``).
    Constant spend fractions only.
    """
    config = config or ProcedureConfig()
    if config.stopping is not None:
        raise ValueError("the direct evaluators do not model stopping rules")
    rng = np.random.default_rng(seed)
    worst = 0.0
    planned = procedure.startswith("planned")
    for j in range(streams):
        p = sample_streams(rng, 1, length)[0]
        cfg = config
        if planned and config.schedule is None:
            sched = schedules[j % len(schedules)] if schedules else random_schedule(rng, length)
            cfg = replace(config, schedule=sched)
        fast = run_streams(procedure, p, cfg).alpha
        direct = direct_thresholds(procedure, p, cfg)
        worst = max(worst, float(np.max(np.abs(fast - direct))) if length else 0.0)
    return worst


def resolve_named(name: str, length: int, config: Optional[ProcedureConfig] = None):
    """Map a CLI name to ``(procedure, config, expect_violations)``."""
    if name == "nonmono-strawman":
        base = config or ProcedureConfig()
        return "lord", strawman_config(length, base.level, base.pi_at(0)), True
    if name not in PROCEDURES:
        raise ValueError(f"unknown procedure {name!r}")
    return name, config or ProcedureConfig(), False
