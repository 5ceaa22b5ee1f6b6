"""FDP estimates, realised error metrics, and Monte Carlo aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import ProcedureState


class EstimatorError(ValueError):
    """The estimator needs information the records do not carry."""


class InsufficientDataError(ValueError):
    pass


def _check_t(state: ProcedureState, t: int) -> None:
    if not 0 <= t <= len(state.records):
        raise IndexError(f"t={t} out of range 0..{len(state.records)}")


def fdp_hat_0(state: ProcedureState, t: int) -> float:
    """Spent thresholds over ``1 v |R_t|``."""
    _check_t(state, t)
    records = state.records[:t]
    spent = math.fsum(r.alpha for r in records)
    return spent / max(1, sum(r.rejected for r in records))


def fdp_hat_lambda(state: ProcedureState, t: int) -> float:
    """``sum alpha_i 1(P_i > lambda_i) / (1 - lambda_i)`` over ``1 v |R_t|``."""
    _check_t(state, t)
    records = state.records[:t]
    if any(r.lam is None for r in records):
        raise EstimatorError("every record needs a lambda for the lambda-adjusted estimate")
    numer = math.fsum(r.lambda_penalty for r in records)
    return numer / max(1, sum(r.rejected for r in records))


def realized_fdp(state: ProcedureState, t: int) -> float:
    _check_t(state, t)
    records = state.records[:t]
    if any(r.is_null is None for r in records):
        raise EstimatorError("realised FDP needs ground-truth null labels")
    false = sum(1 for r in records if r.rejected and r.is_null)
    return false / max(1, sum(r.rejected for r in records))


# Trajectory versions over arrays shaped (..., t_max); used by the audits
# and the simulation, where replaying records would be too slow.

def fdp_hat_0_path(alpha, rejected) -> np.ndarray:
    return np.cumsum(alpha, axis=-1) / np.maximum(1, np.cumsum(rejected, axis=-1))


def fdp_hat_lambda_path(p, alpha, lam, rejected) -> np.ndarray:
    lam = np.broadcast_to(lam, np.shape(alpha))
    charged = np.where(np.asarray(p) > lam, alpha / (1.0 - lam), 0.0)
    return np.cumsum(charged, axis=-1) / np.maximum(1, np.cumsum(rejected, axis=-1))


@dataclass(frozen=True)
class StreamMetrics:
    t: int
    fdp_hat_0: float
    fdp_hat_lambda: float
    fdp: float
    rejections: int
    true_discoveries: int
    power: float

    @property
    def false_discoveries(self) -> int:
        return self.rejections - self.true_discoveries


def stream_metrics(state: ProcedureState, t: int) -> StreamMetrics:
    """Metrics at stage ``t``; power is 0 when no false nulls exist yet.

    ``fdp_hat_lambda`` is NaN when the records carry no lambda.
    """
    records = state.records[:t]
    try:
        fl = fdp_hat_lambda(state, t)
    except EstimatorError:
        fl = math.nan
    rejections = sum(r.rejected for r in records)
    true_disc = sum(1 for r in records if r.rejected and r.is_null is False)
    alternatives = sum(1 for r in records if r.is_null is False)
    return StreamMetrics(
        t=t,
        fdp_hat_0=fdp_hat_0(state, t),
        fdp_hat_lambda=fl,
        fdp=realized_fdp(state, t),
        rejections=rejections,
        true_discoveries=true_disc,
        power=true_disc / alternatives if alternatives else 0.0,
    )


class FDRSummary(NamedTuple):
    fdr: float
    mcse: float
    mfdr: float


def aggregate_arrays(fdp, false_discoveries, rejections) -> FDRSummary:
    fdp = np.asarray(fdp, dtype=np.float64)
    if fdp.shape[0] < 2:
        raise InsufficientDataError("at least two replications are needed")
    mcse = math.sqrt(np.var(fdp, ddof=1) / fdp.shape[0])
    denom = np.maximum(1, np.asarray(rejections, dtype=np.float64))
    mfdr = float(np.mean(false_discoveries)) / float(np.mean(denom))
    return FDRSummary(float(np.mean(fdp)), mcse, mfdr)


def aggregate_fdr(runs: Sequence[StreamMetrics]) -> FDRSummary:
    """FDR (mean FDP), its Monte Carlo standard error, and the modified FDR."""
    if len(runs) < 2:
        raise InsufficientDataError("at least two replications are needed")
    if len({r.t for r in runs}) != 1:
        raise ValueError("all runs must be measured at the same t")
    return aggregate_arrays([r.fdp for r in runs], [r.false_discoveries for r in runs],
                            [r.rejections for r in runs])
