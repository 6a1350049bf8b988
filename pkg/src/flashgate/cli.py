"""Command-line interface.

One executable with subcommands for token selection, gate replay, cost
estimation, hyperparameter sweeps, trace synthesis, and attention analysis.
All results go to stdout (or ``--out``); diagnostics go to stderr; every
subcommand is deterministic given its flags, inputs, and seed. Randomness
flows only from ``--seed`` (falling back to the ``FLASHGATE_SEED``
environment variable, then 0).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import analyzer, flops, gate, selection, traceio
from .errors import FlashgateError


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_trace(path: str, budget: int | None) -> list[traceio.TraceStep]:
    steps = traceio.read_trace(path)
    return traceio.resolve_token_sets(steps, budget=budget, base_dir=Path(path).parent)


def _decision_records(decisions) -> list[dict]:
    return [
        {
            "step": i,
            "verdict": d.verdict.value,
            "reason": d.reason.value,
            "alpha_deg": d.alpha_deg,
            "phi": d.phi,
            "epsilon2": d.epsilon2,
        }
        for i, d in enumerate(decisions, start=1)
    ]


def cmd_select(args) -> int:
    matrix = traceio.read_tensor(args.tensor)
    if matrix.ndim != 2:
        raise FlashgateError(f"select needs a 2-D tensor, got {matrix.ndim}-D")
    from .linalg import svd_decompose

    factors = svd_decompose(matrix, args.rank_tol)
    scores = selection.contribution_scores(factors)
    chosen = selection.select_top_k(scores, args.k)
    report = {
        "indices": list(chosen.indices),
        "scores": [float(s) for s in scores.values],
        "retention": selection.information_retention(factors, chosen),
        "expected_random": selection.expected_random_retention(factors, args.k),
    }
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return 0


def _gate_config(args) -> gate.GateConfig:
    return gate.GateConfig(
        epsilon1=args.epsilon1,
        delta=args.delta,
        mode=args.mode,
        epsilon2_override=args.epsilon2,
    )


def cmd_gate(args) -> int:
    steps = _load_trace(args.trace, args.k)
    result = gate.replay(steps, _gate_config(args))
    report = {
        "reuse_rate": result.reuse_rate,
        "steps": len(result.decisions),
        "decisions": _decision_records(result.decisions),
    }
    if args.csv:
        lines = ["step,verdict,reason,alpha_deg,phi,epsilon2"]
        for rec in report["decisions"]:
            lines.append(
                ",".join(
                    "" if rec[key] is None else str(rec[key])
                    for key in ("step", "verdict", "reason", "alpha_deg", "phi", "epsilon2")
                )
            )
        Path(args.csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return 0


def cmd_flops(args) -> int:
    params = flops.FlopsParams(
        n=args.n,
        n_pruned=args.n_pruned,
        reuse_rate=args.reuse_rate,
        d=args.d,
        m=args.m,
        layers=args.layers,
        prune_start=args.prune_start,
    )
    lines = [f"flops_e12 {flops.estimate_flops(params) / 1e12:.2f}"]
    if args.breakdown:
        stages = flops.savings_breakdown(params)
        lines += [
            f"baseline_e12 {stages.baseline / 1e12:.2f}",
            f"after_pruning_e12 {stages.after_pruning / 1e12:.2f}",
            f"after_pruning_and_reuse_e12 {stages.after_pruning_and_reuse / 1e12:.2f}",
            f"pruning_share {stages.pruning_share:.4f}",
            f"reuse_share {stages.reuse_share:.4f}",
        ]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _parse_values(raw: str) -> list[float]:
    values = [float(part) for part in raw.split(",") if part.strip() != ""]
    if not values:
        raise FlashgateError("expected a non-empty comma-separated list of numbers")
    return values


def cmd_sweep(args) -> int:
    steps = _load_trace(args.trace, args.k)
    if not steps:
        raise FlashgateError("sweep needs a trace with at least one step")
    budget = len(steps[0].tokens)
    grid = [(e1, d) for e1 in _parse_values(args.epsilon1_values)
            for d in _parse_values(args.delta_values)]

    def run_point(point: tuple[float, float]) -> str:
        e1, d = point
        config = gate.GateConfig(epsilon1=e1, delta=d, mode=args.mode)
        rate = gate.replay(steps, config).reuse_rate
        cost = flops.estimate_flops(
            flops.FlopsParams(n=args.n, n_pruned=min(budget, args.n), reuse_rate=rate)
        )
        return f"{e1},{d},{rate!r},{cost!r}"

    # grid points are independent; run them in parallel but emit in grid order
    with ThreadPoolExecutor(max_workers=min(8, max(1, os.cpu_count() or 1))) as pool:
        rows = list(pool.map(run_point, grid))
    _emit("epsilon1,delta,reuse_rate,flops_estimate\n" + "\n".join(rows) + "\n", args.out)
    return 0


def cmd_synth(args) -> int:
    spec = traceio.SynthSpec(
        length=args.length,
        action_dim=args.action_dim,
        plateau_fraction=args.plateau_fraction,
        plateau_run_length=args.run_length,
        angle_noise_deg=args.angle_noise,
        token_universe=args.universe,
        token_budget=args.budget,
        token_churn=args.churn,
        seed=args.seed,
    )
    steps = traceio.synthesize_trace(spec)
    if args.out:
        traceio.write_trace(steps, args.out)
    else:
        traceio.write_trace(steps, sys.stdout)
    return 0


def cmd_analyze(args) -> int:
    data = traceio.read_tensor(args.tensor)
    if data.ndim != 4:
        raise FlashgateError(f"analyze needs a 4-D attention dump, got {data.ndim}-D")
    dump = analyzer.AttentionDump(values=data)
    profile = analyzer.sparsity_profile(dump)
    _emit(analyzer.sparsity_csv(profile), args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flashgate",
        description="Visual-token selection, action-reuse gating, and transformer cost modeling",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default: $FLASHGATE_SEED or 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="score a token matrix and select the top-k set")
    p.add_argument("--tensor", required=True, help="2-D tensor file")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--rank-tol", type=float, default=1e-10, dest="rank_tol")
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("gate", help="replay a trace through the reuse gate")
    p.add_argument("--trace", required=True)
    p.add_argument("--epsilon1", type=float, default=gate.DEFAULT_EPSILON1)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--mode", choices=list(gate.GATE_MODES), default="default")
    p.add_argument("--epsilon2", type=float, default=None,
                   help="override the derived overlap threshold")
    p.add_argument("--k", type=int, default=None,
                   help="selection budget for traces that reference tensors")
    p.add_argument("--csv", help="also write one CSV row per step")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("flops", help="estimate per-step FLOPs")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--np", type=int, required=True, dest="n_pruned")
    p.add_argument("--R", type=float, required=True, dest="reuse_rate")
    p.add_argument("--d", type=int, default=flops.DEFAULT_HIDDEN_DIM)
    p.add_argument("--m", type=int, default=flops.DEFAULT_FFN_DIM)
    p.add_argument("--L", type=int, default=flops.DEFAULT_LAYERS, dest="layers")
    p.add_argument("--Lp", type=int, default=flops.DEFAULT_PRUNE_START, dest="prune_start")
    p.add_argument("--breakdown", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("sweep", help="grid-sweep gate thresholds over a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--epsilon1-values", required=True, dest="epsilon1_values",
                   help="comma-separated angle thresholds")
    p.add_argument("--delta-values", required=True, dest="delta_values",
                   help="comma-separated churn budgets")
    p.add_argument("--mode", choices=list(gate.GATE_MODES), default="default")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--n", type=int, default=256,
                   help="unpruned token count for the FLOPs column")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic plateau-structured trace")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--action-dim", type=int, default=7, dest="action_dim")
    p.add_argument("--plateau-fraction", type=float, default=0.7, dest="plateau_fraction")
    p.add_argument("--run-length", type=float, default=20.0, dest="run_length")
    p.add_argument("--angle-noise", type=float, default=0.0, dest="angle_noise")
    p.add_argument("--universe", type=int, default=256)
    p.add_argument("--budget", type=int, default=160)
    p.add_argument("--churn", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="per-layer sparsity profile of an attention dump")
    p.add_argument("--tensor", required=True, help="4-D tensor file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.seed is None:
        args.seed = int(os.environ.get("FLASHGATE_SEED", "0"))
    try:
        return args.func(args)
    except (FlashgateError, OSError) as exc:
        print(f"flashgate: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
