"""Monte Carlo study of FDR under block-correlated Gaussian statistics.

Each replication draws ``Z ~ N(mu, Sigma)`` with unit variances,
covariance ``rho`` inside blocks of ``n_batch`` consecutive indices and 0
across blocks, then forms one-sided p-values ``Phi(-Z)``. Thresholds for
LORD and SAFFRON are planned one block ahead (``s_i`` is the last index of
the previous block), so each threshold only uses statistics that are
independent of the one it tests.

Seeding: the iteration seed is the first 64-bit word of
``numpy.random.SeedSequence(master_seed, spawn_key=(scenario_index, iteration))``,
and each stream is drawn from ``numpy.random.default_rng(iteration_seed)``
(PCG64). The same seed feeds every procedure in a cell.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .core import ParameterDomainError, ScheduleSpec
from .estimators import aggregate_arrays
from .procedures import ProcedureConfig, StoppingRule, run_streams

RESULT_COLUMNS = ("procedure", "n_batch", "rho", "pi1", "iterations", "fdr", "mcse", "mfdr", "power")

DESK_GRID = {"n_batch": (1, 10), "rho": (0.3, 0.6), "pi1": (0.0, 0.1, 0.5)}
FULL_GRID = {
    "n_batch": (1, 5, 10, 50),
    "rho": (0.3, 0.6),
    "pi1": (0.0, 0.02, 0.04, 0.06, 0.08, 0.1, 0.2, 0.3, 0.4, 0.5),
}

# Grid procedure labels and the batch-aware rule that implements each.
GRID_PROCEDURES = {"lord": "planned-lord", "saffron": "planned-saffron",
                   "alpha-investing": "alpha-investing"}


def normal_cdf(z):
    """Standard normal CDF (scalar or array)."""
    out = ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ScenarioConfig:
    t_max: int = 500
    pi1: float = 0.1
    rho: float = 0.3
    n_batch: int = 1
    mu_alt: float = 3.0
    iterations: int = 200
    master_seed: int = 0
    level: float = 0.05
    spend_fraction: Optional[float] = None
    lam: float = 0.5
    null_assignment: str = "bernoulli"

    def __post_init__(self):
        if self.t_max < 1 or self.n_batch < 1 or self.iterations < 1:
            raise ParameterDomainError("t_max, n_batch and iterations must be positive")
        if not 0.0 <= self.pi1 <= 1.0:
            raise ParameterDomainError(f"pi1 must lie in [0, 1], got {self.pi1!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ParameterDomainError(
                f"rho must lie in [0, 1) (nonnegative block correlation), got {self.rho!r}")
        if not 0.0 < self.level <= 1.0:
            raise ParameterDomainError(f"level must lie in (0, 1], got {self.level!r}")
        if self.null_assignment not in ("bernoulli", "exact"):
            raise ParameterDomainError("null_assignment must be 'bernoulli' or 'exact'")

    @property
    def pi(self) -> float:
        if self.spend_fraction is not None:
            return self.spend_fraction
        return min(1.0, self.n_batch * 0.01)


def iteration_seed(master_seed: int, scenario_index: int, iteration: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(scenario_index, iteration))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_block_normals(rng, draws, t_max, n_batch, rho, mu=None):
    """``draws`` rows of block-equicorrelated standard normals plus ``mu``.

    Uses one shared factor per block: ``Z_i = mu_i + sqrt(rho) G_b + sqrt(1 - rho) e_i``.
    """
    if not 0.0 <= rho < 1.0:
        raise ParameterDomainError(f"rho must lie in [0, 1), got {rho!r}")
    n_blocks = -(-t_max // n_batch)
    shared = rng.standard_normal((draws, n_blocks))
    own = rng.standard_normal((draws, t_max))
    block = np.arange(t_max) // n_batch
    z = math.sqrt(rho) * shared[:, block] + math.sqrt(1.0 - rho) * own
    if mu is not None:
        z = z + mu
    return z


def _alternative_mask(rng, scenario: ScenarioConfig) -> np.ndarray:
    t = scenario.t_max
    if scenario.null_assignment == "bernoulli":
        return rng.random(t) < scenario.pi1
    k = int(round(scenario.pi1 * t))
    mask = np.zeros(t, dtype=bool)
    mask[rng.choice(t, size=k, replace=False)] = True
    return mask


def generate_stream(scenario: ScenarioConfig, iteration_seed: int):
    """One replication: ``(p_values, is_null)``."""
    rng = np.random.default_rng(iteration_seed)
    alternative = _alternative_mask(rng, scenario)
    mu = np.where(alternative, scenario.mu_alt, 0.0)
    z = sample_block_normals(rng, 1, scenario.t_max, scenario.n_batch, scenario.rho, mu)[0]
    return normal_cdf(-z), ~alternative


def batch_schedule(t_max: int, n_batch: int) -> ScheduleSpec:
    """Thresholds for a block are planned once the previous block is fully observed."""
    if t_max < 1 or n_batch < 1:
        raise ParameterDomainError("t_max and n_batch must be positive")
    i = np.arange(1, t_max + 1)
    block = -(-i // n_batch)
    return ScheduleSpec(tuple(int(s) for s in (block - 1) * n_batch))


def procedure_config(scenario: ScenarioConfig, stopping: Optional[StoppingRule] = None
                     ) -> ProcedureConfig:
    return ProcedureConfig(
        level=scenario.level,
        spend_fraction=scenario.pi,
        lam=scenario.lam,
        schedule=batch_schedule(scenario.t_max, scenario.n_batch),
        stopping=stopping,
    )


def simulate_cell(scenario: ScenarioConfig, scenario_index: int, procedures: Sequence[str],
                  stopping: Optional[StoppingRule] = None, backend: Optional[str] = None):
    """All iterations of one scenario; returns one row per procedure.

    Also returns the raw per-iteration arrays under ``"_runs"`` for callers
    that want more than the summary.
    """
    draws = [generate_stream(scenario, iteration_seed(scenario.master_seed, scenario_index, it))
             for it in range(scenario.iterations)]
    p = np.stack([d[0] for d in draws])
    is_null = np.stack([d[1] for d in draws])
    config = procedure_config(scenario, stopping)
    rows = []
    for label in procedures:
        result = run_streams(GRID_PROCEDURES[label], p, config, backend=backend)
        rej = result.rejected
        rejections = rej.sum(axis=1)
        false = (rej & is_null).sum(axis=1)
        fdp = false / np.maximum(1, rejections)
        alternatives = (~is_null).sum(axis=1)
        power = np.where(alternatives > 0, (rej & ~is_null).sum(axis=1) / np.maximum(1, alternatives), 0.0)
        summary = aggregate_arrays(fdp, false, rejections)
        rows.append({
            "procedure": label,
            "n_batch": scenario.n_batch,
            "rho": scenario.rho,
            "pi1": scenario.pi1,
            "iterations": scenario.iterations,
            "fdr": summary.fdr,
            "mcse": summary.mcse,
            "mfdr": summary.mfdr,
            "power": float(power.mean()),
            "_runs": {"p": p, "is_null": is_null, "alpha": result.alpha, "rejected": rej, "fdp": fdp},
        })
    return rows


def _cell_task(args):
    scenario, index, procedures, stopping, backend = args
    rows = simulate_cell(scenario, index, procedures, stopping, backend)
    for r in rows:
        r.pop("_runs")
    return index, rows


def run_grid(scenarios: Sequence[ScenarioConfig], procedures: Sequence[str] = ("lord", "saffron"),
             stopping: Optional[StoppingRule] = None, jobs: int = 1,
             backend: Optional[str] = None) -> list:
    """Summary rows for every (scenario, procedure) cell, in scenario order.

    Results do not depend on ``jobs``: each cell seeds itself from its index.
    """
    for label in procedures:
        if label not in GRID_PROCEDURES:
            raise ParameterDomainError(f"unknown grid procedure {label!r}")
    tasks = [(sc, i, tuple(procedures), stopping, backend) for i, sc in enumerate(scenarios)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = dict(pool.map(_cell_task, tasks))
    else:
        done = dict(map(_cell_task, tasks))
    return [row for i in range(len(scenarios)) for row in done[i]]


def grid_scenarios(n_batch: Iterable[int] = DESK_GRID["n_batch"],
                   rho: Iterable[float] = DESK_GRID["rho"],
                   pi1: Iterable[float] = DESK_GRID["pi1"], **common) -> list:
    return [ScenarioConfig(n_batch=b, rho=r, pi1=q, **common)
            for b, r, q in product(n_batch, rho, pi1)]


def format_float(x: float) -> str:
    return repr(float(x))


def results_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in rows:
        writer.writerow([
            r["procedure"], int(r["n_batch"]), format_float(r["rho"]), format_float(r["pi1"]),
            int(r["iterations"]), format_float(r["fdr"]), format_float(r["mcse"]),
            format_float(r["mfdr"]), format_float(r["power"]),
        ])
    return buf.getvalue()


def read_results_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({
            "procedure": r["procedure"], "n_batch": int(r["n_batch"]), "rho": float(r["rho"]),
            "pi1": float(r["pi1"]), "iterations": int(r["iterations"]), "fdr": float(r["fdr"]),
            "mcse": float(r["mcse"]), "mfdr": float(r["mfdr"]), "power": float(r["power"]),
        })
    return out


def plot_results(csv_path, svg_path, level: float = 0.05) -> None:
    """FDR against pi1, one panel per (n_batch, rho), with +-2 MCSE ribbons.

    Reads only the results CSV, so a figure can be redrawn without rerunning.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_results_csv(csv_path)
    batches = sorted({r["n_batch"] for r in rows})
    rhos = sorted({r["rho"] for r in rows})
    procs = list(dict.fromkeys(r["procedure"] for r in rows))
    with matplotlib.rc_context({"svg.hashsalt": "onlinefdr", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(len(rhos), len(batches), squeeze=False, sharex=True, sharey=True,
                                 figsize=(3.2 * len(batches), 2.8 * len(rhos)))
        for (ri, rho), (bi, nb) in product(enumerate(rhos), enumerate(batches)):
            ax = axes[ri][bi]
            for proc in procs:
                cell = sorted((r for r in rows if r["procedure"] == proc and r["n_batch"] == nb
                               and r["rho"] == rho), key=lambda r: r["pi1"])
                if not cell:
                    continue
                x = np.array([r["pi1"] for r in cell])
                y = np.array([r["fdr"] for r in cell])
                se = np.array([r["mcse"] for r in cell])
                line, = ax.plot(x, y, marker="o", ms=3, label=proc)
                ax.fill_between(x, y - 2 * se, y + 2 * se, color=line.get_color(), alpha=0.2, lw=0)
            ax.axhline(level, ls="--", color="black", lw=1)
            ax.set_title(f"n_batch={nb}, rho={rho:g}", fontsize=9)
            if ri == len(rhos) - 1:
                ax.set_xlabel("proportion of false nulls")
            if bi == 0:
                ax.set_ylabel("FDR(t_max)")
        axes[0][0].legend(fontsize=8)
        fig.suptitle("Simulated false discovery rates")
        fig.tight_layout()
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)


def null_rejection_excess(alpha, rejected, is_null) -> float:
    """Null rejections minus their expected count, in binomial standard errors.

    Under super-uniformity the excess should rarely exceed about 3.
    """
    a = np.asarray(alpha)[np.asarray(is_null)]
    r = np.asarray(rejected)[np.asarray(is_null)]
    expected = a.sum()
    sd = math.sqrt(max((a * (1 - a)).sum(), 1e-300))
    return float((r.sum() - expected) / sd)
