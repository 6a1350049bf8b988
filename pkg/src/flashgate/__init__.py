"""flashgate: visual-token selection, action-reuse gating, and transformer
cost modeling for robot-policy inference traces."""

from .analyzer import AttentionDump, LayerSparsity, last_query_scores, sparsity_csv, sparsity_profile
from .errors import (
    DegenerateVectorError,
    FlashgateError,
    InvalidInputError,
    TensorFormatError,
    TraceParseError,
)
from .flops import (
    FlopsParams,
    SavingsBreakdown,
    estimate_flops,
    implied_reuse_rate,
    layer_cost,
    savings_breakdown,
)
from .gate import (
    DecisionReason,
    GateConfig,
    GateDecision,
    GateState,
    ReplayResult,
    ReuseGate,
    Verdict,
    epsilon2_from_delta,
    gate_step,
    replay,
    token_overlap,
    trigger_decide,
)
from .linalg import (
    DEFAULT_RANK_TOLERANCE,
    NORM_EPSILON,
    SvdFactors,
    frobenius_norm,
    svd_decompose,
    vector_angle_deg,
)
from .selection import (
    ContributionScores,
    TokenSelector,
    TokenSet,
    cauchy_schwarz_margin,
    contribution_scores,
    expected_random_retention,
    information_retention,
    select_top_k,
)
from .traceio import (
    SynthSpec,
    TensorRef,
    TraceStep,
    read_tensor,
    read_trace,
    resolve_token_sets,
    synthesize_trace,
    write_tensor,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionDump",
    "ContributionScores",
    "DecisionReason",
    "DegenerateVectorError",
    "DEFAULT_RANK_TOLERANCE",
    "FlashgateError",
    "FlopsParams",
    "GateConfig",
    "GateDecision",
    "GateState",
    "InvalidInputError",
    "LayerSparsity",
    "NORM_EPSILON",
    "ReplayResult",
    "ReuseGate",
    "SavingsBreakdown",
    "SvdFactors",
    "SynthSpec",
    "TensorFormatError",
    "TensorRef",
    "TokenSelector",
    "TokenSet",
    "TraceParseError",
    "TraceStep",
    "Verdict",
    "cauchy_schwarz_margin",
    "contribution_scores",
    "epsilon2_from_delta",
    "estimate_flops",
    "expected_random_retention",
    "frobenius_norm",
    "gate_step",
    "implied_reuse_rate",
    "information_retention",
    "last_query_scores",
    "layer_cost",
    "read_tensor",
    "read_trace",
    "replay",
    "resolve_token_sets",
    "savings_breakdown",
    "select_top_k",
    "sparsity_csv",
    "sparsity_profile",
    "svd_decompose",
    "synthesize_trace",
    "token_overlap",
    "trigger_decide",
    "vector_angle_deg",
    "write_tensor",
    "write_trace",
]
