import hashlib
import io
import struct

import numpy as np
import pytest

from flashgate.errors import InvalidInputError, TensorFormatError, TraceParseError
from flashgate.selection import TokenSet, contribution_scores, select_top_k
from flashgate.traceio import (
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

# --------------------------------------------------------------------------- tensors


def test_tensor_round_trip_identity_matrix(tmp_path):
    path = tmp_path / "eye.fvts"
    write_tensor(np.eye(2, dtype=np.float32), path)
    back = read_tensor(path)
    np.testing.assert_array_equal(back, np.eye(2))
    # a second write of the read-back data is byte-identical
    second = tmp_path / "eye2.fvts"
    write_tensor(back, second)
    assert path.read_bytes() == second.read_bytes()


def test_tensor_round_trip_preserves_float32_payload(tmp_path):
    data = np.random.default_rng(0).standard_normal((256, 4096)).astype(np.float32)
    path = tmp_path / "big.fvts"
    write_tensor(data, path)
    first = hashlib.sha256(path.read_bytes()).hexdigest()
    again = tmp_path / "big2.fvts"
    write_tensor(read_tensor(path), again)
    assert hashlib.sha256(again.read_bytes()).hexdigest() == first


def test_tensor_accepts_file_objects():
    buffer = io.BytesIO()
    write_tensor(np.ones((2, 3, 4)), buffer)
    buffer.seek(0)
    assert read_tensor(buffer).shape == (2, 3, 4)


def test_tensor_rejects_bad_dimensionality():
    with pytest.raises(InvalidInputError):
        write_tensor(np.ones(5), io.BytesIO())
    with pytest.raises(InvalidInputError):
        write_tensor(np.ones((2, 2, 2, 2, 2)), io.BytesIO())


def test_tensor_write_refuses_oversized_arrays():
    huge = np.broadcast_to(np.float32(0.0), (2**16, 2**16))  # virtual, no allocation
    with pytest.raises(InvalidInputError):
        write_tensor(huge, io.BytesIO())


def test_tensor_write_refuses_non_finite():
    with pytest.raises(InvalidInputError):
        write_tensor(np.array([[np.nan, 1.0]]), io.BytesIO())
    with pytest.raises(InvalidInputError):
        write_tensor(np.array([[1e300, 1.0]]), io.BytesIO())  # overflows float32


def _valid_header(ndim=2, dims=(2, 2), magic=b"FVTS", version=1, dtype=1):
    blob = struct.pack("<4sHBB", magic, version, dtype, ndim)
    blob += b"".join(struct.pack("<Q", d) for d in dims)
    return blob


@pytest.mark.parametrize("blob,message", [
    (b"FV", "truncated header"),
    (_valid_header(magic=b"XXXX") + b"\0" * 16, "bad magic"),
    (_valid_header(version=2) + b"\0" * 16, "version"),
    (_valid_header(dtype=9) + b"\0" * 16, "dtype"),
    (_valid_header(ndim=5, dims=(1, 1, 1, 1, 1)) + b"\0" * 16, "ndim"),
    (_valid_header(dims=(2,)), "dimension"),  # ndim says 2, only one dim present
    (_valid_header(dims=(2, 2)) + b"\0" * 12, "payload"),  # 12 != 16 bytes
    (_valid_header(dims=(2**20, 2**20)), "guard"),
])
def test_tensor_read_rejects_malformed_files(blob, message):
    with pytest.raises(TensorFormatError, match=message):
        read_tensor(io.BytesIO(blob))


# --------------------------------------------------------------------------- traces


def _constant_steps(n, dim=3):
    action = np.array([0.5, -1.25, 0.375][:dim])
    return [
        TraceStep(step=i + 1, action=action.copy(), tokens=TokenSet((0, 2, 5)),
                  done=(i == n - 1))
        for i in range(n)
    ]


def test_empty_trace_writes_zero_bytes(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_trace([], path)
    assert path.read_bytes() == b""
    assert read_trace(path) == []


def test_trace_round_trip_bitwise_actions(tmp_path):
    path = tmp_path / "t.jsonl"
    steps = _constant_steps(3)
    write_trace(steps, path)
    back = read_trace(path)
    assert len(back) == 3
    for original, parsed in zip(steps, back):
        assert parsed.step == original.step
        assert parsed.done == original.done
        assert parsed.tokens == original.tokens
        np.testing.assert_array_equal(parsed.action, original.action)


def test_synthetic_trace_round_trip(tmp_path):
    steps = synthesize_trace(SynthSpec(length=500, plateau_fraction=0.6,
                                       angle_noise_deg=1.0, token_churn=1.0,
                                       token_universe=32, token_budget=8, seed=3))
    path = tmp_path / "synth.jsonl"
    write_trace(steps, path)
    back = read_trace(path)
    assert len(back) == 500
    for original, parsed in zip(steps, back):
        np.testing.assert_array_equal(parsed.action, original.action)
        assert parsed.tokens.indices == original.tokens.indices
        assert parsed.done == original.done


def test_trace_with_tensor_reference_round_trip(tmp_path):
    steps = [TraceStep(step=1, action=np.array([1.0]), tokens=TensorRef("m.fvts", 2))]
    path = tmp_path / "ref.jsonl"
    write_trace(steps, path)
    back = read_trace(path)
    assert back[0].tokens == TensorRef("m.fvts", 2)


def test_trace_read_reports_non_contiguous_step(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"step": 1, "action": [1.0], "tokens": {"set": [0]}, "done": false}\n'
        '{"step": 3, "action": [1.0], "tokens": {"set": [0]}, "done": false}\n'
    )
    with pytest.raises(TraceParseError, match="line 2: non-contiguous step"):
        read_trace(path)


def test_trace_read_reports_dimension_drift(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"step": 1, "action": [1.0, 2.0], "tokens": {"set": [0]}, "done": false}\n'
        '{"step": 2, "action": [1.0], "tokens": {"set": [0]}, "done": false}\n'
    )
    with pytest.raises(TraceParseError, match="line 2: action dimension changed"):
        read_trace(path)


@pytest.mark.parametrize("line,message", [
    ("not json", "line 1: invalid JSON"),
    ("[1, 2]", "line 1: expected a JSON object"),
    ('{"step": 1, "action": [1.0], "done": false}', "missing field 'tokens'"),
    ('{"step": 1, "action": [], "tokens": {"set": [0]}, "done": false}', "non-empty list"),
    ('{"step": 1, "action": [true], "tokens": {"set": [0]}, "done": false}', "numbers"),
    ('{"step": 1, "action": [1.0], "tokens": {"set": [0]}, "done": 1}', "boolean"),
    ('{"step": 1, "action": [1.0], "tokens": {"set": [2, 1]}, "done": false}', "increasing"),
    ('{"step": 1, "action": [1.0], "tokens": {}, "done": false}', "'set' or 'tensor'"),
])
def test_trace_read_rejects_malformed_lines(line, message):
    with pytest.raises(TraceParseError, match=message):
        read_trace(io.StringIO(line + "\n"))


def test_write_trace_validates_steps():
    bad = [TraceStep(step=2, action=np.array([1.0]), tokens=TokenSet((0,)))]
    with pytest.raises(InvalidInputError):
        write_trace(bad, io.StringIO())


def test_resolve_token_sets_applies_selection(tmp_path):
    matrix = np.random.default_rng(4).standard_normal((12, 6))
    write_tensor(matrix, tmp_path / "tokens.fvts")
    steps = [
        TraceStep(step=1, action=np.array([1.0]), tokens=TensorRef("tokens.fvts")),
        TraceStep(step=2, action=np.array([1.0]), tokens=TokenSet((0, 1))),
    ]
    resolved = resolve_token_sets(steps, budget=4, base_dir=tmp_path)
    expected = select_top_k(contribution_scores(read_tensor(tmp_path / "tokens.fvts")), 4)
    assert resolved[0].tokens.indices == expected.indices
    assert resolved[1].tokens == TokenSet((0, 1))


def test_resolve_token_sets_requires_budget(tmp_path):
    steps = [TraceStep(step=1, action=np.array([1.0]), tokens=TensorRef("x.fvts"))]
    with pytest.raises(InvalidInputError, match="budget"):
        resolve_token_sets(steps, base_dir=tmp_path)


def test_resolve_token_sets_stack_index(tmp_path):
    stack = np.random.default_rng(5).standard_normal((3, 8, 4))
    write_tensor(stack, tmp_path / "stack.fvts")
    steps = [TraceStep(step=1, action=np.array([1.0]), tokens=TensorRef("stack.fvts", 2))]
    resolved = resolve_token_sets(steps, budget=3, base_dir=tmp_path)
    expected = select_top_k(contribution_scores(stack[2]), 3)
    assert resolved[0].tokens.indices == expected.indices
    out_of_range = [TraceStep(step=1, action=np.array([1.0]), tokens=TensorRef("stack.fvts", 3))]
    with pytest.raises(InvalidInputError, match="out of range"):
        resolve_token_sets(out_of_range, budget=3, base_dir=tmp_path)


# --------------------------------------------------------------------------- synthesis


def test_fully_stable_spec_gives_constant_trace():
    steps = synthesize_trace(SynthSpec(length=40, plateau_fraction=1.0,
                                       angle_noise_deg=0.0, token_churn=0.0,
                                       token_universe=16, token_budget=4, seed=9))
    first = steps[0]
    for step in steps[1:]:
        np.testing.assert_array_equal(step.action, first.action)
        assert step.tokens.indices == first.tokens.indices
    assert steps[-1].done and not steps[0].done


def test_plateau_free_spec_has_right_mean_angle():
    steps = synthesize_trace(SynthSpec(length=10_001, plateau_fraction=0.0,
                                       action_dim=16, token_universe=8,
                                       token_budget=2, seed=12))
    angles = []
    for prev, cur in zip(steps, steps[1:]):
        cosine = float(np.clip(np.dot(prev.action, cur.action), -1.0, 1.0))
        angles.append(np.degrees(np.arccos(cosine)))
    assert abs(float(np.mean(angles)) - 90.0) <= 3.0


def test_synthesis_is_deterministic(tmp_path):
    spec = SynthSpec(length=200, plateau_fraction=0.5, angle_noise_deg=2.0,
                     token_churn=1.5, token_universe=32, token_budget=8, seed=21)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_trace(synthesize_trace(spec), a)
    write_trace(synthesize_trace(spec), b)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("fraction", [0.2, 0.5, 0.8])
def test_realized_continuation_share_tracks_fraction(fraction):
    spec = SynthSpec(length=800, plateau_fraction=fraction, angle_noise_deg=0.0,
                     token_churn=0.0, token_universe=32, token_budget=8, seed=2)
    steps = synthesize_trace(spec)
    continuations = sum(
        1 for prev, cur in zip(steps, steps[1:])
        if np.array_equal(prev.action, cur.action) and prev.tokens.indices == cur.tokens.indices
    )
    assert abs(continuations / len(steps) - fraction) <= 0.05


def test_plateau_noise_and_churn_stay_bounded():
    spec = SynthSpec(length=600, plateau_fraction=0.7, angle_noise_deg=1.5,
                     token_churn=2.0, token_universe=64, token_budget=16, seed=3)
    steps = synthesize_trace(spec)
    for prev, cur in zip(steps, steps[1:]):
        replaced = len(set(cur.tokens.indices) - set(prev.tokens.indices))
        same_direction = np.degrees(
            np.arccos(np.clip(np.dot(prev.action, cur.action), -1, 1))
        ) <= 1.5 + 1e-9
        if same_direction:  # continuation steps obey the churn cap
            assert replaced <= 2
    # traces always satisfy the step-sequence contract
    assert [s.step for s in steps] == list(range(1, 601))


def test_synth_spec_validation():
    with pytest.raises(InvalidInputError):
        SynthSpec(length=0)
    with pytest.raises(InvalidInputError):
        SynthSpec(length=5, plateau_fraction=1.5)
    with pytest.raises(InvalidInputError):
        SynthSpec(length=5, token_budget=10, token_universe=4)
    with pytest.raises(InvalidInputError):
        SynthSpec(length=5, token_churn=20.0, token_budget=10, token_universe=32)
    with pytest.raises(InvalidInputError):
        SynthSpec(length=5, action_dim=1, angle_noise_deg=1.0)
    with pytest.raises(InvalidInputError):
        SynthSpec(length=5, plateau_run_length=0.5)
