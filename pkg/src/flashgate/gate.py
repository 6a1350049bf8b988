"""Action-reuse gate: a sequential state machine that watches the last two
emitted actions and token selections and decides, before each step, whether
the previous action can be replayed instead of running a fresh inference.

Rules enforced regardless of configuration:

* no reuse during the first two steps (memories are still filling),
* never two reuse decisions in a row,
* memories hold the last two *fresh-inference* outputs only; a reused
  step leaves them untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError
from .linalg import NORM_EPSILON, check_vector, vector_angle_deg
from .selection import TokenSet

if TYPE_CHECKING:  # pragma: no cover
    from .traceio import TraceStep

#: Default angle threshold, in degrees.
DEFAULT_EPSILON1 = 2.0

#: Reuse-gate predicate variants. "default" grants reuse when the action
#: direction is stable (small angle) and the token set is stable (high
#: overlap); "literal" flips both comparisons to strict greater-than, which
#: is useful for auditing but reuses on *unstable* angles.
GATE_MODES = ("default", "literal")


class Verdict(Enum):
    REUSE_ACTION = "ReuseAction"
    PRUNED_INFERENCE = "PrunedInference"


class DecisionReason(Enum):
    WARMUP = "warmup"
    CONSECUTIVE_BLOCK = "consecutive-block"
    PREDICATE_PASS = "predicate-pass"
    PREDICATE_FAIL = "predicate-fail"
    DEGENERATE_ACTION = "degenerate-action"


@dataclass(frozen=True)
class GateConfig:
    """Thresholds and mode for the reuse predicate.

    ``delta`` is the tolerated number of token-set changes between the two
    remembered steps; it is converted to an overlap threshold by
    :func:`epsilon2_from_delta` unless ``epsilon2_override`` pins the
    overlap threshold directly.
    """

    epsilon1: float = DEFAULT_EPSILON1
    delta: float = 3.0
    mode: str = "default"
    epsilon2_override: float | None = None

    def __post_init__(self):
        if self.epsilon1 < 0.0:
            raise InvalidInputError("epsilon1 must be >= 0")
        if self.delta < 0.0:
            raise InvalidInputError("delta must be >= 0")
        if self.mode not in GATE_MODES:
            raise InvalidInputError(f"mode must be one of {GATE_MODES}, got {self.mode!r}")
        if self.epsilon2_override is not None and not 0.0 <= self.epsilon2_override <= 1.0:
            raise InvalidInputError("epsilon2_override must be in [0, 1]")


@dataclass(frozen=True)
class GateState:
    """Gate memory before processing step ``step`` (1-based).

    ``action_memory`` and ``token_memory`` hold at most the last two
    fresh-inference outputs, oldest first.
    """

    step: int = 1
    action_memory: tuple[np.ndarray, ...] = ()
    token_memory: tuple[TokenSet, ...] = ()
    last_reuse: bool = False

    def __post_init__(self):
        if self.step < 1:
            raise InvalidInputError("step counter is 1-based")
        if len(self.action_memory) > 2 or len(self.token_memory) > 2:
            raise InvalidInputError("memories hold at most two entries")
        if self.step <= 2 and self.last_reuse:
            raise InvalidInputError("last_reuse cannot be set during warm-up steps")


@dataclass(frozen=True)
class GateDecision:
    verdict: Verdict
    reason: DecisionReason
    alpha_deg: float | None = None
    phi: float | None = None
    epsilon2: float | None = None

    @property
    def reused(self) -> bool:
        return self.verdict is Verdict.REUSE_ACTION


def token_overlap(previous: TokenSet, current: TokenSet) -> float:
    """Fraction of the current token set already present in the previous one."""
    if len(current) == 0:
        raise InvalidInputError("current token set must be non-empty")
    shared = len(set(previous.indices) & set(current.indices))
    return shared / len(current)


def epsilon2_from_delta(delta: float, current_set_size: int) -> float:
    """Overlap threshold that tolerates ``delta`` token replacements in a
    set of ``current_set_size``."""
    if current_set_size < 1:
        raise InvalidInputError("current_set_size must be >= 1")
    if not 0.0 <= delta <= current_set_size:
        raise InvalidInputError(
            f"delta must be in [0, {current_set_size}], got {delta}"
        )
    return 1.0 - delta / current_set_size


def trigger_decide(state: GateState, config: GateConfig) -> GateDecision:
    """Evaluate the reuse predicate against the gate's current memories.

    Degenerate situations (warm-up, consecutive reuse, zero-norm remembered
    actions) conservatively resolve to a fresh inference rather than an
    error.
    """
    if state.step <= 2 or len(state.action_memory) < 2 or len(state.token_memory) < 2:
        return GateDecision(Verdict.PRUNED_INFERENCE, DecisionReason.WARMUP)
    if state.last_reuse:
        return GateDecision(Verdict.PRUNED_INFERENCE, DecisionReason.CONSECUTIVE_BLOCK)

    older, newer = state.action_memory
    if np.linalg.norm(older) <= NORM_EPSILON or np.linalg.norm(newer) <= NORM_EPSILON:
        return GateDecision(Verdict.PRUNED_INFERENCE, DecisionReason.DEGENERATE_ACTION)
    alpha = vector_angle_deg(older, newer)

    prev_set, cur_set = state.token_memory
    phi = token_overlap(prev_set, cur_set)
    if config.epsilon2_override is not None:
        epsilon2 = config.epsilon2_override
    else:
        # Direct formula rather than epsilon2_from_delta: a delta larger
        # than the set size is allowed here and simply admits any overlap.
        epsilon2 = 1.0 - config.delta / len(cur_set)

    if config.mode == "literal":
        passed = alpha > config.epsilon1 and phi > epsilon2
    else:
        passed = alpha <= config.epsilon1 and phi >= epsilon2
    if passed:
        return GateDecision(Verdict.REUSE_ACTION, DecisionReason.PREDICATE_PASS,
                            alpha_deg=alpha, phi=phi, epsilon2=epsilon2)
    return GateDecision(Verdict.PRUNED_INFERENCE, DecisionReason.PREDICATE_FAIL,
                        alpha_deg=alpha, phi=phi, epsilon2=epsilon2)


def gate_step(state: GateState, config: GateConfig, candidate_action,
              candidate_tokens: TokenSet) -> tuple[GateDecision, np.ndarray, GateState]:
    """Advance the gate by one step in replay semantics.

    ``candidate_action``/``candidate_tokens`` are what the policy *would*
    produce this step. On reuse the emitted action is the remembered one and
    memories stay untouched; otherwise the candidate is emitted and becomes
    the newest memory entry.
    """
    action = check_vector(candidate_action)
    if state.action_memory and action.shape != state.action_memory[-1].shape:
        raise InvalidInputError(
            f"action dimension changed from {state.action_memory[-1].size} to {action.size}"
        )
    decision = trigger_decide(state, config)
    if decision.reused:
        emitted = state.action_memory[-1].copy()
        new_state = replace(state, step=state.step + 1, last_reuse=True)
    else:
        emitted = action.copy()
        new_state = GateState(
            step=state.step + 1,
            action_memory=(*state.action_memory[-1:], action.copy()),
            token_memory=(*state.token_memory[-1:], candidate_tokens),
            last_reuse=False,
        )
    return decision, emitted, new_state


@dataclass(frozen=True)
class ReplayResult:
    reuse_rate: float
    decisions: list[GateDecision]
    emitted: list[np.ndarray]


def replay(trace: Sequence["TraceStep"] | Iterable, config: GateConfig) -> ReplayResult:
    """Run the gate over a whole trace and report the reuse rate.

    Each trace step must carry an inline token set (resolve tensor
    references first; see :func:`flashgate.traceio.resolve_token_sets`).
    """
    state = GateState()
    decisions: list[GateDecision] = []
    emitted: list[np.ndarray] = []
    n = 0
    for step in trace:
        if not isinstance(step.tokens, TokenSet):
            raise InvalidInputError(
                f"step {step.step}: token set not resolved (tensor reference present)"
            )
        decision, action, state = gate_step(state, config, step.action, step.tokens)
        decisions.append(decision)
        emitted.append(action)
        n += 1
    if n == 0:
        raise InvalidInputError("trace must contain at least one step")
    reused = sum(1 for d in decisions if d.reused)
    return ReplayResult(reuse_rate=reused / n, decisions=decisions, emitted=emitted)


class ReuseGate:
    """Stateful convenience wrapper around the functional gate.

    A gate instance is owned by a single logical caller; distinct instances
    are independent and may run in parallel.
    """

    def __init__(self, config: GateConfig | None = None):
        self.config = config or GateConfig()
        self.state = GateState()

    def step(self, candidate_action, candidate_tokens: TokenSet) -> tuple[GateDecision, np.ndarray]:
        decision, emitted, self.state = gate_step(
            self.state, self.config, candidate_action, candidate_tokens
        )
        return decision, emitted

    def reset(self) -> None:
        self.state = GateState()
