"""Score visual tokens by their projection energy on the dominant singular
directions of an attention-output matrix, and select the top-k set.

Every operation accepts either the raw token matrix (rows = tokens) or a
precomputed :class:`~flashgate.linalg.SvdFactors`, so callers evaluating
several quantities on one matrix pay for the decomposition once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .errors import InvalidInputError
from .linalg import DEFAULT_RANK_TOLERANCE, SvdFactors, svd_decompose


@dataclass(frozen=True)
class ContributionScores:
    """Per-token contribution scores plus the effective rank they used."""

    values: np.ndarray
    rank: int

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class TokenSet:
    """A sorted set of selected token indices out of a universe of size
    ``universe`` (None when the universe is unknown, e.g. sets read back
    from a trace file)."""

    indices: tuple[int, ...]
    universe: int | None = None

    def __post_init__(self):
        if len(self.indices) < 1:
            raise InvalidInputError("a token set must contain at least one index")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise InvalidInputError("token indices must be strictly increasing")
        if self.indices[0] < 0:
            raise InvalidInputError("token indices must be non-negative")
        if self.universe is not None and self.indices[-1] >= self.universe:
            raise InvalidInputError(
                f"token index {self.indices[-1]} outside universe of {self.universe}"
            )

    @property
    def budget(self) -> int:
        return len(self.indices)

    def __len__(self) -> int:
        return len(self.indices)


def _as_factors(tokens, rank_tolerance: float) -> SvdFactors:
    if isinstance(tokens, SvdFactors):
        return tokens
    return svd_decompose(tokens, rank_tolerance)


def _weighted(factors: SvdFactors, rank: int) -> np.ndarray:
    # rows of u scaled by sigma, truncated to the requested rank
    return factors.u[:, :rank] * factors.sigma[:rank]


def _resolve_rank(factors: SvdFactors, rank: int | None) -> int:
    if rank is None:
        return factors.rank
    if not 0 <= rank <= factors.rank:
        raise InvalidInputError(
            f"rank {rank} exceeds the effective rank {factors.rank}"
        )
    return rank


def contribution_scores(tokens, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> ContributionScores:
    """Score each token row as the absolute sum of its singular-direction
    projections weighted by the singular values.

    Higher scores mean the token carries more of the matrix's dominant
    structure. Scores are non-negative and deterministic for fixed input.
    """
    factors = _as_factors(tokens, rank_tolerance)
    values = np.abs(_weighted(factors, factors.rank)).sum(axis=1)
    return ContributionScores(values=values, rank=factors.rank)


def select_top_k(scores, k: int) -> TokenSet:
    """Pick the k highest-scoring token indices, ties toward the lower index.

    ``scores`` may be a :class:`ContributionScores` or a plain 1-D array.
    The returned indices are sorted ascending.
    """
    values = scores.values if isinstance(scores, ContributionScores) else np.asarray(scores, dtype=np.float64)
    n = len(values)
    if not 1 <= k <= n:
        raise InvalidInputError(f"k must be in [1, {n}], got {k}")
    order = np.argsort(-values, kind="stable")  # stable: ties stay index-ascending
    chosen = np.sort(order[:k])
    return TokenSet(indices=tuple(int(i) for i in chosen), universe=n)


def information_retention(tokens, subset: TokenSet, rank: int | None = None,
                          rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> float:
    """Energy of the subset's rows projected on the top ``rank`` singular
    directions. With the full effective rank this equals the sum of the
    selected rows' squared norms."""
    factors = _as_factors(tokens, rank_tolerance)
    r = _resolve_rank(factors, rank)
    idx = np.asarray(subset.indices, dtype=np.intp)
    if idx.max(initial=0) >= factors.u.shape[0]:
        raise InvalidInputError(
            f"token index {int(idx.max())} out of range for {factors.u.shape[0]} tokens"
        )
    w = _weighted(factors, r)
    return float((w[idx] ** 2).sum())


def expected_random_retention(tokens, k: int, rank: int | None = None,
                              rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> float:
    """Expected retained energy of a uniformly random k-subset: k/n of the
    total projection energy on the top ``rank`` directions."""
    factors = _as_factors(tokens, rank_tolerance)
    r = _resolve_rank(factors, rank)
    n = factors.u.shape[0]
    if not 1 <= k <= n:
        raise InvalidInputError(f"k must be in [1, {n}], got {k}")
    total = float((_weighted(factors, r) ** 2).sum())
    return k / n * total


def cauchy_schwarz_margin(tokens, index: int,
                          rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> tuple[float, float]:
    """Return ``(score^2, rank * projection_energy)`` for one token.

    The first component can never exceed the second (Cauchy-Schwarz), which
    is what makes the absolute-sum score a sound proxy for energy ranking.
    """
    factors = _as_factors(tokens, rank_tolerance)
    n = factors.u.shape[0]
    if not 0 <= index < n:
        raise InvalidInputError(f"token index {index} out of range for {n} tokens")
    row = _weighted(factors, factors.rank)[index]
    lhs = float(np.abs(row).sum() ** 2)
    rhs = float(factors.rank * (row ** 2).sum())
    return lhs, rhs


class TokenSelector(BaseEstimator, TransformerMixin):
    """Row selector keeping the ``k`` most informative tokens of a matrix.

    Follows the scikit-learn estimator conventions (``fit`` / ``transform``
    / ``get_params``) so it can sit in pipelines and grid searches. ``fit``
    learns the selected row indices from the token matrix; ``transform``
    returns the selected rows of any matrix with the same token axis.

    Attributes after ``fit``: ``scores_``, ``rank_``, ``selected_indices_``,
    ``token_set_``, ``retention_``, ``expected_random_retention_``.
    """

    def __init__(self, k: int = 160, rank_tolerance: float = DEFAULT_RANK_TOLERANCE):
        self.k = k
        self.rank_tolerance = rank_tolerance

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        factors = svd_decompose(X, self.rank_tolerance)
        scores = contribution_scores(factors)
        token_set = select_top_k(scores, self.k)
        self.n_tokens_ = X.shape[0]
        self.scores_ = scores.values
        self.rank_ = scores.rank
        self.token_set_ = token_set
        self.selected_indices_ = np.asarray(token_set.indices, dtype=np.intp)
        self.retention_ = information_retention(factors, token_set)
        self.expected_random_retention_ = expected_random_retention(factors, self.k)
        return self

    def transform(self, X):
        if not hasattr(self, "selected_indices_"):
            raise NotFittedError("TokenSelector must be fitted before transform")
        X = check_array(X, dtype=np.float64)
        if X.shape[0] != self.n_tokens_:
            raise InvalidInputError(
                f"expected {self.n_tokens_} token rows as seen in fit, got {X.shape[0]}"
            )
        return X[self.selected_indices_]

    def get_support(self) -> np.ndarray:
        if not hasattr(self, "selected_indices_"):
            raise NotFittedError("TokenSelector must be fitted before get_support")
        mask = np.zeros(self.n_tokens_, dtype=bool)
        mask[self.selected_indices_] = True
        return mask
