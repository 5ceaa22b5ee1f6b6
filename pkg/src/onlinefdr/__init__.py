"""Online false discovery rate control: LORD, SAFFRON, alpha-investing and planned variants."""

from .core import (
    ConfigurationError,
    HypothesisRecord,
    InvariantError,
    ParameterDomainError,
    ProcedureState,
    PValue,
    ScheduleError,
    ScheduleSpec,
    advance,
)
from .estimators import (
    FDRSummary,
    aggregate_fdr,
    fdp_hat_0,
    fdp_hat_lambda,
    realized_fdp,
    stream_metrics,
)
from .kernels import BACKEND
from .procedures import (
    PROCEDURES,
    AffineCap,
    ProcedureConfig,
    StoppingRule,
    StreamResult,
    run_reference,
    run_streams,
)
from .simulate import ScenarioConfig, batch_schedule, generate_stream, normal_cdf, run_grid
from .verifier import audit_constraints, check_condition_1, oracle_crosscheck

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "PROCEDURES",
    "AffineCap", "ConfigurationError", "FDRSummary", "HypothesisRecord", "InvariantError",
    "PValue", "ParameterDomainError", "ProcedureConfig", "ProcedureState", "ScenarioConfig",
    "ScheduleError", "ScheduleSpec", "StoppingRule", "StreamResult",
    "advance", "aggregate_fdr", "audit_constraints", "batch_schedule", "check_condition_1",
    "fdp_hat_0", "fdp_hat_lambda", "generate_stream", "normal_cdf", "oracle_crosscheck",
    "realized_fdp", "run_grid", "run_reference", "run_streams", "stream_metrics",
]
