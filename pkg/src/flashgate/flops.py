"""Closed-form transformer cost model over attention plus feed-forward
layers, with pruning applied from a configurable layer onward and an
action-reuse rate scaling the whole budget.

Token counts here follow the convention that only visual tokens enter the
estimate; prompt-length variation is deliberately excluded so numbers are
comparable across tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import InvalidInputError

# LLaMA-7B-class backbone constants; these reproduce the reference cost
# tables and are the CLI defaults.
DEFAULT_HIDDEN_DIM = 4096
DEFAULT_FFN_DIM = 11008
DEFAULT_LAYERS = 32
DEFAULT_PRUNE_START = 2


@dataclass(frozen=True)
class FlopsParams:
    """Inputs to the cost model.

    ``prune_start`` layers run at the full ``n`` tokens; the remaining
    layers run at ``n_pruned``. ``reuse_rate`` is the fraction of steps
    whose computation is skipped entirely.
    """

    n: int
    n_pruned: int
    reuse_rate: float = 0.0
    d: int = DEFAULT_HIDDEN_DIM
    m: int = DEFAULT_FFN_DIM
    layers: int = DEFAULT_LAYERS
    prune_start: int = DEFAULT_PRUNE_START

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.m < 1 or self.layers < 1:
            raise InvalidInputError("token counts and dimensions must be >= 1")
        if not 1 <= self.n_pruned <= self.n:
            raise InvalidInputError(f"n_pruned must be in [1, {self.n}], got {self.n_pruned}")
        if not 0 <= self.prune_start <= self.layers:
            raise InvalidInputError(
                f"prune_start must be in [0, {self.layers}], got {self.prune_start}"
            )
        if not 0.0 <= self.reuse_rate <= 1.0:
            raise InvalidInputError(f"reuse_rate must be in [0, 1], got {self.reuse_rate}")


def layer_cost(tokens: int, d: int, m: int) -> int:
    """FLOPs of one transformer layer at a given token count.

    Attention projections cost 4*t*d^2, the attention map 2*t^2*d, and the
    feed-forward block 2*t*d*m. Exact integer arithmetic.
    """
    if tokens < 1 or d < 1 or m < 1:
        raise InvalidInputError("layer_cost arguments must be >= 1")
    return 4 * tokens * d * d + 2 * tokens * tokens * d + 2 * tokens * d * m


def estimate_flops(params: FlopsParams) -> float:
    """Total estimated FLOPs of one inference step under pruning and reuse."""
    full = layer_cost(params.n, params.d, params.m)
    pruned = layer_cost(params.n_pruned, params.d, params.m)
    total = params.prune_start * full + (params.layers - params.prune_start) * pruned
    return (1.0 - params.reuse_rate) * total


@dataclass(frozen=True)
class SavingsBreakdown:
    """Staged cost reduction attributing savings to pruning versus reuse.

    The two shares partition the gap between ``baseline`` and
    ``after_pruning_and_reuse``, summing to 1 when any saving exists.
    """

    baseline: float
    after_pruning: float
    after_pruning_and_reuse: float
    pruning_share: float
    reuse_share: float


def savings_breakdown(params: FlopsParams) -> SavingsBreakdown:
    """Split the total saving into its pruning and reuse contributions."""
    baseline = estimate_flops(replace(params, n_pruned=params.n, reuse_rate=0.0))
    after_pruning = estimate_flops(replace(params, reuse_rate=0.0))
    final = estimate_flops(params)
    saved = baseline - final
    if saved > 0.0:
        pruning_share = (baseline - after_pruning) / saved
        reuse_share = (after_pruning - final) / saved
    else:
        pruning_share = reuse_share = 0.0
    return SavingsBreakdown(
        baseline=baseline,
        after_pruning=after_pruning,
        after_pruning_and_reuse=final,
        pruning_share=pruning_share,
        reuse_share=reuse_share,
    )


def implied_reuse_rate(observed: float, params_at_r0: FlopsParams) -> float:
    """Invert the cost model: the reuse rate that explains an observed cost.

    ``params_at_r0`` describes the configuration without reuse; its
    ``reuse_rate`` field is ignored.
    """
    base = estimate_flops(replace(params_at_r0, reuse_rate=0.0))
    if not 0.0 < observed <= base:
        raise InvalidInputError(
            f"observed FLOPs must be in (0, {base:.6g}], got {observed:.6g}"
        )
    return 1.0 - observed / base
