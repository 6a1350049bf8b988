"""Attention-redundancy measurements on dumped 4-D attention tensors.

The dump layout is (layer, head, query, key) with each (layer, head, query)
row a softmax output. The redundancy signal is the attention received by
each key from the final query position, averaged over heads; per-layer
concentration of that vector is summarized with entropy, top-k mass, and
the Gini coefficient.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

#: Row sums may drift this far from 1 (dumps often originate in 16-bit).
ROW_SUM_TOLERANCE = 1e-3

DEFAULT_TOP_K = (8, 16, 32)


@dataclass(frozen=True)
class AttentionDump:
    """Validated stack of per-layer, per-head attention matrices."""

    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.values, dtype=np.float64)
        if a.ndim != 4:
            raise InvalidInputError(f"attention dump must be 4-D, got {a.ndim}-D")
        if any(dim < 1 for dim in a.shape):
            raise InvalidInputError(f"attention dump axes must be non-empty, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("attention dump has non-finite values")
        if (a < 0.0).any():
            raise InvalidInputError("attention weights must be non-negative")
        sums = a.sum(axis=-1)
        if np.abs(sums - 1.0).max() > ROW_SUM_TOLERANCE:
            worst = float(np.abs(sums - 1.0).max())
            raise InvalidInputError(
                f"attention rows must sum to 1 within {ROW_SUM_TOLERANCE}, worst drift {worst:.2e}"
            )
        object.__setattr__(self, "values", a)

    @property
    def layers(self) -> int:
        return self.values.shape[0]

    @property
    def heads(self) -> int:
        return self.values.shape[1]

    @property
    def keys(self) -> int:
        return self.values.shape[3]


@dataclass(frozen=True)
class LayerSparsity:
    layer: int
    entropy: float
    top_k_mass: dict[int, float]
    gini: float


def last_query_scores(dump: AttentionDump, layer: int) -> np.ndarray:
    """Head-averaged attention received by each key from the last query."""
    if not 0 <= layer < dump.layers:
        raise InvalidInputError(f"layer {layer} out of range for {dump.layers} layers")
    return dump.values[layer].mean(axis=0)[-1]


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def _gini(p: np.ndarray) -> float:
    ordered = np.sort(p)
    n = ordered.size
    ranks = np.arange(1, n + 1)
    return float((2.0 * ranks - n - 1.0) @ ordered / n)


def sparsity_profile(dump: AttentionDump,
                     top_k: tuple[int, ...] = DEFAULT_TOP_K) -> list[LayerSparsity]:
    """Per-layer concentration metrics of the last-query attention scores.

    Scores are normalized to a probability vector before measuring, so the
    row-sum tolerance cannot leak into the metrics. Entropy is in nats;
    top-k masses are cumulative and non-decreasing in k.
    """
    profile = []
    for layer in range(dump.layers):
        scores = last_query_scores(dump, layer)
        p = scores / scores.sum()
        descending = np.sort(p)[::-1]
        masses = {k: float(descending[: min(k, p.size)].sum()) for k in top_k}
        profile.append(
            LayerSparsity(layer=layer, entropy=_entropy(p), top_k_mass=masses, gini=_gini(p))
        )
    return profile


def sparsity_csv(profile: list[LayerSparsity]) -> str:
    """Render a profile as CSV with one row per layer."""
    ks = sorted(profile[0].top_k_mass) if profile else list(DEFAULT_TOP_K)
    out = io.StringIO()
    out.write("layer,entropy," + ",".join(f"top{k}" for k in ks) + ",gini\n")
    for row in profile:
        masses = ",".join(repr(row.top_k_mass[k]) for k in ks)
        out.write(f"{row.layer},{row.entropy!r},{masses},{row.gini!r}\n")
    return out.getvalue()
