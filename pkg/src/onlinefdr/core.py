"""Domain types and the append-only testing state machine.

A procedure decides thresholds; this module only records what happened.
``advance`` performs one reject-then-update cycle and returns a new
:class:`ProcedureState`, leaving the old one untouched.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence


class ParameterDomainError(ValueError):
    """A numeric parameter lies outside its admissible range."""


class ScheduleError(ValueError):
    """Specification times are inconsistent (s_i >= i, bad group sizes, ...)."""


class ConfigurationError(ValueError):
    """A procedure was configured without something it needs."""


class InvariantError(RuntimeError):
    """Internal bookkeeping broke an invariant that should hold by construction."""


class PValue(float):
    """A float restricted to [0, 1]."""

    def __new__(cls, value):
        v = float(value)
        if not (0.0 <= v <= 1.0):
            raise ParameterDomainError(f"p-value must lie in [0, 1], got {value!r}")
        return super().__new__(cls, v)


@dataclass(frozen=True)
class HypothesisRecord:
    index: int
    p: float
    alpha: float
    rejected: bool
    specified_at: int
    batch: int
    alpha_bar: Optional[float] = None
    lam: Optional[float] = None
    is_null: Optional[bool] = None
    stopped: bool = False

    def __post_init__(self):
        if self.index < 1:
            raise ParameterDomainError("index must be a positive integer")
        if not (0 <= self.specified_at < self.index):
            raise ScheduleError(
                f"specification time {self.specified_at} must satisfy 0 <= s < {self.index}"
            )
        if self.rejected != (self.p <= self.alpha):
            raise InvariantError("rejected must equal (p <= alpha)")
        if self.alpha_bar is not None and self.alpha != min(self.lam, self.alpha_bar):
            raise InvariantError("alpha must equal min(lambda, alpha_bar)")

    @property
    def lambda_penalty(self) -> float:
        """``alpha * 1(p > lam) / (1 - lam)``: this record's share of the lambda-estimator numerator."""
        if self.lam is None or self.p <= self.lam:
            return 0.0
        return self.alpha / (1.0 - self.lam)


@dataclass(frozen=True)
class ProcedureState:
    """Sequential wealth-accounting state after ``len(records)`` tests.

    ``penalty_sum`` accumulates ``alpha_bar * 1(p > lam) / (1 - lam)`` (the
    candidate-threshold convention), while ``lambda_spent_sum`` accumulates
    the same term with the realised threshold ``alpha``; the latter is the
    numerator of the lambda-adjusted FDP estimate.
    """

    level: float
    records: tuple = ()
    rejection_count: int = 0
    spent_sum: float = 0.0
    penalty_sum: float = 0.0
    lambda_spent_sum: float = 0.0
    stopped: bool = False

    def __post_init__(self):
        if not (0.0 < self.level <= 1.0):
            raise ParameterDomainError(f"level must lie in (0, 1], got {self.level!r}")

    def __len__(self):
        return len(self.records)

    @property
    def t(self) -> int:
        return len(self.records)

    def prefix(self, t: int) -> "ProcedureState":
        """State after the first ``t`` tests, rebuilt by replay."""
        if not 0 <= t <= len(self.records):
            raise IndexError(f"prefix length {t} out of range 0..{len(self.records)}")
        return replay(self.level, self.records[:t])


def effective_denominator(state: ProcedureState) -> int:
    return max(1, state.rejection_count)


def advance(
    state: ProcedureState,
    p: float,
    alpha: float,
    lam: Optional[float] = None,
    alpha_bar: Optional[float] = None,
    specified_at: Optional[int] = None,
    batch: Optional[int] = None,
    is_null: Optional[bool] = None,
    stopped: bool = False,
) -> ProcedureState:
    """Test one hypothesis at threshold ``alpha`` and return the updated state.

    Rejection is inclusive: ``p <= alpha`` rejects. ``specified_at`` defaults
    to ``t - 1`` and ``batch`` to ``t`` (the canonical online setting).
    ``stopped=True`` latches the stopping flag; once latched, only zero
    thresholds are accepted.
    """
    p = PValue(p)
    alpha = float(alpha)
    if not (alpha >= 0.0) or math.isinf(alpha):
        raise ParameterDomainError(f"alpha must be a finite nonnegative number, got {alpha!r}")
    if lam is not None and not (0.0 <= lam < 1.0):
        # lam == 0 only arises from alpha-investing with exhausted wealth
        raise ParameterDomainError(f"lambda must lie in [0, 1), got {lam!r}")
    if alpha_bar is not None:
        if lam is None:
            raise ParameterDomainError("alpha_bar requires lambda")
        if not (alpha_bar >= 0.0):
            raise ParameterDomainError(f"alpha_bar must be nonnegative, got {alpha_bar!r}")
    latched = state.stopped or stopped
    if latched and alpha != 0.0:
        raise InvariantError("a stopped procedure can only record zero thresholds")

    index = state.t + 1
    record = HypothesisRecord(
        index=index,
        p=p,
        alpha=alpha,
        rejected=p <= alpha,
        specified_at=index - 1 if specified_at is None else int(specified_at),
        batch=index if batch is None else int(batch),
        alpha_bar=None if alpha_bar is None else float(alpha_bar),
        lam=None if lam is None else float(lam),
        is_null=is_null,
        stopped=latched,
    )
    penalty = state.penalty_sum
    lambda_spent = state.lambda_spent_sum
    if lam is not None and p > lam:
        candidate = alpha if alpha_bar is None else alpha_bar
        penalty += candidate / (1.0 - lam)
        lambda_spent += alpha / (1.0 - lam)
    return replace(
        state,
        records=state.records + (record,),
        rejection_count=state.rejection_count + int(record.rejected),
        spent_sum=state.spent_sum + alpha,
        penalty_sum=penalty,
        lambda_spent_sum=lambda_spent,
        stopped=latched,
    )


def replay(level: float, records: Iterable[HypothesisRecord]) -> ProcedureState:
    state = ProcedureState(level=level)
    for r in records:
        state = advance(
            state, r.p, r.alpha, lam=r.lam, alpha_bar=r.alpha_bar,
            specified_at=r.specified_at, batch=r.batch, is_null=r.is_null,
            stopped=r.stopped,
        )
    return state


def recompute_sums(state: ProcedureState) -> dict:
    """Recompute every running sum from the records, for drift audits."""
    records = state.records
    penalty = []
    for r in records:
        if r.lam is not None and r.p > r.lam:
            penalty.append((r.alpha if r.alpha_bar is None else r.alpha_bar) / (1.0 - r.lam))
    return {
        "rejection_count": sum(r.rejected for r in records),
        "spent_sum": math.fsum(r.alpha for r in records),
        "penalty_sum": math.fsum(penalty),
        "lambda_spent_sum": math.fsum(r.lambda_penalty for r in records),
    }


def audit_running_sums(state: ProcedureState, tol: Optional[float] = None) -> None:
    """Raise :class:`InvariantError` if the incremental sums drifted.

    The default tolerance scales as 1e-10 per million steps.
    """
    if tol is None:
        tol = 1e-10 * max(1.0, len(state) / 1e6)
    fresh = recompute_sums(state)
    if fresh["rejection_count"] != state.rejection_count:
        raise InvariantError("rejection_count does not match the records")
    for key in ("spent_sum", "penalty_sum", "lambda_spent_sum"):
        if abs(fresh[key] - getattr(state, key)) > tol:
            raise InvariantError(f"{key} drifted: {getattr(state, key)!r} vs {fresh[key]!r}")


@dataclass(frozen=True)
class ScheduleSpec:
    """Specification times ``s_i`` for indices ``i = 1..n`` (stored 0-based by position).

    ``spec_time[i - 1]`` is ``s_i``. Times need not be monotone in ``i``.
    """

    spec_time: tuple
    group_sizes: Mapping[int, int] = field(default=None, compare=False)

    def __post_init__(self):
        st = tuple(int(s) for s in self.spec_time)
        object.__setattr__(self, "spec_time", st)
        for i, s in enumerate(st, start=1):
            if not 0 <= s < i:
                raise ScheduleError(f"s_{i} = {s} violates 0 <= s_i < i")
        counts = dict(sorted(Counter(st).items()))
        if self.group_sizes is not None:
            given = {int(k): int(v) for k, v in self.group_sizes.items() if int(v) != 0}
            if given != counts:
                raise ScheduleError(f"group sizes {given} disagree with spec times {counts}")
        object.__setattr__(self, "group_sizes", counts)

    def __len__(self):
        return len(self.spec_time)

    def s(self, i: int) -> int:
        return self.spec_time[i - 1]

    def group_size(self, s: int) -> int:
        return self.group_sizes.get(s, 0)

    @classmethod
    def online(cls, n: int) -> "ScheduleSpec":
        return cls(tuple(range(n)))

    @classmethod
    def alpha_spending(cls, n: int) -> "ScheduleSpec":
        return cls((0,) * n)

    @classmethod
    def from_batches(cls, labels: Sequence[int]) -> "ScheduleSpec":
        """``s_i = max{i' : b_i' < b_i}`` (0 when no earlier batch exists)."""
        labels = [int(b) for b in labels]
        last = {}
        for i, b in enumerate(labels, start=1):
            last[b] = i
        before, running = {}, 0
        for b in sorted(last):
            before[b] = running
            running = max(running, last[b])
        return cls(tuple(before[b] for b in labels))
