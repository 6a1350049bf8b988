"""File formats and a synthetic-trace generator.

Step traces are JSONL: one object per line with fields ``step`` (1-based,
contiguous), ``action`` (array of numbers, constant dimension), ``tokens``
(either ``{"set": [...]}`` inline or ``{"tensor": path, "index": i}``
referencing a tensor file), and ``done`` (bool). Numbers round-trip
bit-exactly through the default JSON float formatting.

Tensor files are binary, little-endian throughout: magic ``FVTS``, version
(uint16, =1), dtype byte (1 = float32), ndim byte (2, 3, or 4), ``ndim``
uint64 dims, then the row-major float32 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, TensorFormatError, TraceParseError
from .linalg import DEFAULT_RANK_TOLERANCE
from .selection import TokenSet, contribution_scores, select_top_k

_MAGIC = b"FVTS"
_VERSION = 1
_DTYPE_FLOAT32 = 1
_HEADER = struct.Struct("<4sHBB")
_DIM = struct.Struct("<Q")
_MAX_ELEMENTS = 2**31


@dataclass(frozen=True)
class TensorRef:
    """Pointer to one matrix inside a tensor file (index into a stack)."""

    path: str
    index: int = 0


@dataclass(frozen=True)
class TraceStep:
    step: int
    action: np.ndarray
    tokens: TokenSet | TensorRef
    done: bool = False


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic trace alternating stable plateaus and breaks.

    ``plateau_fraction`` is the share of steps that continue the previous
    step (same action direction up to ``angle_noise_deg``, same token set
    up to ``token_churn`` replacements); the rest draw a fresh random unit
    direction and a fresh random subset. Plateau run lengths are geometric
    with mean ``plateau_run_length``.
    """

    length: int
    action_dim: int = 7
    plateau_fraction: float = 0.7
    plateau_run_length: float = 20.0
    angle_noise_deg: float = 0.0
    token_universe: int = 256
    token_budget: int = 160
    token_churn: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise InvalidInputError("length must be >= 1")
        if self.action_dim < 1:
            raise InvalidInputError("action_dim must be >= 1")
        if not 0.0 <= self.plateau_fraction <= 1.0:
            raise InvalidInputError("plateau_fraction must be in [0, 1]")
        if self.plateau_run_length < 1.0:
            raise InvalidInputError("plateau_run_length must be >= 1")
        if self.angle_noise_deg < 0.0:
            raise InvalidInputError("angle_noise_deg must be >= 0")
        if self.angle_noise_deg > 0.0 and self.action_dim < 2:
            raise InvalidInputError("angle noise requires action_dim >= 2")
        if not 1 <= self.token_budget <= self.token_universe:
            raise InvalidInputError("token_budget must be in [1, token_universe]")
        if not 0.0 <= self.token_churn <= self.token_budget:
            raise InvalidInputError("token_churn must be in [0, token_budget]")


# ---------------------------------------------------------------------------
# tensor files


def _element_count(shape: Sequence[int]) -> int:
    count = 1
    for dim in shape:
        count *= int(dim)
    return count


def write_tensor(array, destination) -> None:
    """Write an array (2-D to 4-D) as a float32 tensor file."""
    a = np.asarray(array)
    if a.ndim not in (2, 3, 4):
        raise InvalidInputError(f"tensor files hold 2-D to 4-D data, got {a.ndim}-D")
    if any(dim < 1 for dim in a.shape):
        raise InvalidInputError(f"tensor axes must be non-empty, got shape {a.shape}")
    if _element_count(a.shape) > _MAX_ELEMENTS:
        raise InvalidInputError(
            f"tensor of {_element_count(a.shape)} elements exceeds the {_MAX_ELEMENTS} guard"
        )
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(a, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise InvalidInputError("tensor values do not fit in finite float32")
    header = _HEADER.pack(_MAGIC, _VERSION, _DTYPE_FLOAT32, a.ndim)
    dims = b"".join(_DIM.pack(dim) for dim in a.shape)
    if hasattr(destination, "write"):
        destination.write(header + dims + payload.tobytes())
    else:
        Path(destination).write_bytes(header + dims + payload.tobytes())


def read_tensor(source) -> np.ndarray:
    """Read a tensor file back as a float64 array (payload stays float32 on
    disk, so a write/read/write cycle is byte-identical)."""
    if hasattr(source, "read"):
        raw = source.read()
    else:
        raw = Path(source).read_bytes()
    if len(raw) < _HEADER.size:
        raise TensorFormatError("truncated header")
    magic, version, dtype, ndim = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if dtype != _DTYPE_FLOAT32:
        raise TensorFormatError(f"unsupported dtype code {dtype}")
    if ndim not in (2, 3, 4):
        raise TensorFormatError(f"ndim must be 2, 3, or 4, got {ndim}")
    offset = _HEADER.size
    if len(raw) < offset + ndim * _DIM.size:
        raise TensorFormatError("truncated dimension list")
    shape = tuple(
        _DIM.unpack_from(raw, offset + i * _DIM.size)[0] for i in range(ndim)
    )
    offset += ndim * _DIM.size
    if any(dim < 1 for dim in shape):
        raise TensorFormatError(f"tensor axes must be non-empty, got shape {shape}")
    count = _element_count(shape)
    if count > _MAX_ELEMENTS:
        raise TensorFormatError(
            f"tensor of {count} elements exceeds the {_MAX_ELEMENTS} guard"
        )
    expected = count * 4
    if len(raw) - offset != expected:
        raise TensorFormatError(
            f"payload is {len(raw) - offset} bytes, expected {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return values.reshape(shape).astype(np.float64)


# ---------------------------------------------------------------------------
# trace files


def _validate_steps(steps: Sequence[TraceStep]) -> None:
    dim = None
    for position, step in enumerate(steps, start=1):
        if step.step != position:
            raise InvalidInputError(
                f"step numbers must be contiguous from 1; position {position} has {step.step}"
            )
        action = np.asarray(step.action, dtype=np.float64)
        if action.ndim != 1 or action.size < 1:
            raise InvalidInputError(f"step {position}: action must be a non-empty vector")
        if not np.all(np.isfinite(action)):
            raise InvalidInputError(f"step {position}: action has non-finite components")
        if dim is None:
            dim = action.size
        elif action.size != dim:
            raise InvalidInputError(
                f"step {position}: action dimension changed from {dim} to {action.size}"
            )
        if not isinstance(step.tokens, (TokenSet, TensorRef)):
            raise InvalidInputError(f"step {position}: tokens must be a TokenSet or TensorRef")


def _step_to_json(step: TraceStep) -> str:
    if isinstance(step.tokens, TokenSet):
        tokens = {"set": list(step.tokens.indices)}
    else:
        tokens = {"tensor": step.tokens.path, "index": step.tokens.index}
    record = {
        "step": step.step,
        "action": [float(x) for x in np.asarray(step.action, dtype=np.float64)],
        "tokens": tokens,
        "done": bool(step.done),
    }
    return json.dumps(record, separators=(",", ": "))


def write_trace(steps: Sequence[TraceStep], destination) -> None:
    """Write steps as JSONL (UTF-8, one object per line)."""
    steps = list(steps)
    _validate_steps(steps)
    text = "".join(_step_to_json(step) + "\n" for step in steps)
    if hasattr(destination, "write"):
        try:
            destination.write(text)
        except TypeError:  # binary stream
            destination.write(text.encode("utf-8"))
    else:
        Path(destination).write_text(text, encoding="utf-8")


def _parse_tokens(raw, lineno: int) -> TokenSet | TensorRef:
    if not isinstance(raw, dict):
        raise TraceParseError(f"line {lineno}: 'tokens' must be an object")
    if "set" in raw:
        indices = raw["set"]
        if not isinstance(indices, list) or not all(isinstance(i, int) for i in indices):
            raise TraceParseError(f"line {lineno}: 'tokens.set' must be a list of integers")
        try:
            return TokenSet(indices=tuple(indices))
        except InvalidInputError as exc:
            raise TraceParseError(f"line {lineno}: {exc}") from exc
    if "tensor" in raw:
        path = raw["tensor"]
        index = raw.get("index", 0)
        if not isinstance(path, str) or not isinstance(index, int) or index < 0:
            raise TraceParseError(f"line {lineno}: bad tensor reference")
        return TensorRef(path=path, index=index)
    raise TraceParseError(f"line {lineno}: 'tokens' needs a 'set' or 'tensor' field")


def read_trace(source) -> list[TraceStep]:
    """Parse a JSONL trace, reporting the first offending line on failure."""
    if hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    else:
        text = Path(source).read_text(encoding="utf-8")
    steps: list[TraceStep] = []
    dim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            raise TraceParseError(f"line {lineno}: blank line")
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise TraceParseError(f"line {lineno}: expected a JSON object")
        for field in ("step", "action", "tokens", "done"):
            if field not in record:
                raise TraceParseError(f"line {lineno}: missing field '{field}'")
        step_no = record["step"]
        if not isinstance(step_no, int) or step_no != lineno:
            raise TraceParseError(f"line {lineno}: non-contiguous step (expected {lineno}, got {step_no})")
        action_raw = record["action"]
        if not isinstance(action_raw, list) or not action_raw or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in action_raw
        ):
            raise TraceParseError(f"line {lineno}: 'action' must be a non-empty list of numbers")
        action = np.asarray(action_raw, dtype=np.float64)
        if not np.all(np.isfinite(action)):
            raise TraceParseError(f"line {lineno}: 'action' has non-finite components")
        if dim is None:
            dim = action.size
        elif action.size != dim:
            raise TraceParseError(
                f"line {lineno}: action dimension changed from {dim} to {action.size}"
            )
        if not isinstance(record["done"], bool):
            raise TraceParseError(f"line {lineno}: 'done' must be a boolean")
        tokens = _parse_tokens(record["tokens"], lineno)
        steps.append(TraceStep(step=step_no, action=action, tokens=tokens, done=record["done"]))
    return steps


def resolve_token_sets(steps: Sequence[TraceStep], budget: int | None = None,
                       base_dir=None,
                       rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> list[TraceStep]:
    """Replace tensor references with token sets selected from the tensors.

    ``budget`` (the selection size) is required as soon as any step carries
    a reference. Relative reference paths resolve against ``base_dir``.
    """
    cache: dict[str, np.ndarray] = {}
    resolved: list[TraceStep] = []
    for step in steps:
        tokens = step.tokens
        if isinstance(tokens, TensorRef):
            if budget is None:
                raise InvalidInputError(
                    f"step {step.step}: trace references tensors; a selection budget is required"
                )
            path = Path(tokens.path)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            key = str(path)
            if key not in cache:
                cache[key] = read_tensor(path)
            data = cache[key]
            if data.ndim == 2:
                if tokens.index != 0:
                    raise InvalidInputError(
                        f"step {step.step}: index {tokens.index} into a single-matrix tensor"
                    )
                matrix = data
            elif data.ndim == 3:
                if tokens.index >= data.shape[0]:
                    raise InvalidInputError(
                        f"step {step.step}: index {tokens.index} out of range for stack of {data.shape[0]}"
                    )
                matrix = data[tokens.index]
            else:
                raise InvalidInputError(
                    f"step {step.step}: token selection needs a 2-D or 3-D tensor, got {data.ndim}-D"
                )
            token_set = select_top_k(contribution_scores(matrix, rank_tolerance), budget)
            resolved.append(TraceStep(step=step.step, action=step.action,
                                      tokens=token_set, done=step.done))
        else:
            resolved.append(step)
    return resolved


# ---------------------------------------------------------------------------
# synthetic traces


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm


def _perturb(rng: np.random.Generator, direction: np.ndarray, max_angle_deg: float) -> np.ndarray:
    if max_angle_deg == 0.0:
        return direction
    raw = rng.standard_normal(direction.size)
    ortho = raw - np.dot(raw, direction) * direction
    norm = np.linalg.norm(ortho)
    if norm <= 1e-12:
        return direction
    theta = np.radians(rng.uniform(0.0, max_angle_deg))
    rotated = np.cos(theta) * direction + np.sin(theta) * (ortho / norm)
    return rotated / np.linalg.norm(rotated)


def _random_subset(rng: np.random.Generator, universe: int, budget: int) -> TokenSet:
    chosen = np.sort(rng.permutation(universe)[:budget])
    return TokenSet(indices=tuple(int(i) for i in chosen), universe=universe)


def _churned_subset(rng: np.random.Generator, current: TokenSet, universe: int,
                    churn: float) -> TokenSet:
    swaps = int(churn) + (1 if rng.random() < churn - int(churn) else 0)
    swaps = min(swaps, len(current), universe - len(current))
    if swaps <= 0:
        return current
    members = np.asarray(current.indices)
    outside = np.setdiff1d(np.arange(universe), members, assume_unique=True)
    drop = rng.choice(len(members), size=swaps, replace=False)
    add = rng.choice(len(outside), size=swaps, replace=False)
    kept = np.delete(members, drop)
    merged = np.sort(np.concatenate([kept, outside[add]]))
    return TokenSet(indices=tuple(int(i) for i in merged), universe=universe)


def _continuation_flags(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask: True where a step continues the previous one.

    Plateau run lengths are geometric with the requested mean; the fresh
    steps between runs are spread deterministically so the realized
    continuation share tracks ``plateau_fraction`` closely.
    """
    length = spec.length
    flags = np.zeros(length, dtype=bool)
    target = round(spec.plateau_fraction * length)
    target = min(target, length - 1)  # the first step is always fresh
    if target <= 0:
        return flags
    runs: list[int] = []
    remaining = target
    while remaining > 0:
        run = int(rng.geometric(1.0 / spec.plateau_run_length))
        run = min(run, remaining)
        runs.append(run)
        remaining -= run
    fresh_total = length - target
    while len(runs) > fresh_total:  # every run needs a fresh anchor before it
        tail = runs.pop()
        runs[-1] += tail
    extra = fresh_total - len(runs)
    base_gap, leftovers = divmod(extra, len(runs))
    position = 0
    for i, run in enumerate(runs):
        gap = 1 + base_gap + (1 if i < leftovers else 0)
        position += gap
        flags[position:position + run] = True
        position += run
    return flags


def synthesize_trace(spec: SynthSpec) -> list[TraceStep]:
    """Generate a deterministic trace with plateau structure.

    Within plateaus, consecutive actions differ by at most
    ``angle_noise_deg`` and token sets by at most ``ceil(token_churn)``
    indices; every break draws a fresh unit direction and a fresh subset.
    """
    rng = np.random.default_rng(spec.seed)
    flags = _continuation_flags(spec, rng)
    steps: list[TraceStep] = []
    direction = np.zeros(spec.action_dim)
    tokens: TokenSet | None = None
    for i, continues in enumerate(flags):
        if not continues or tokens is None:
            direction = _unit(rng, spec.action_dim)
            tokens = _random_subset(rng, spec.token_universe, spec.token_budget)
        else:
            direction = _perturb(rng, direction, spec.angle_noise_deg)
            tokens = _churned_subset(rng, tokens, spec.token_universe, spec.token_churn)
        steps.append(
            TraceStep(step=i + 1, action=direction.copy(), tokens=tokens,
                      done=(i == spec.length - 1))
        )
    return steps
