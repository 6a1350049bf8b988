"""Dense linear-algebra kernel: one-sided Jacobi SVD, norms, vector angles.

Everything runs in float64 and is deterministic: the same input always
produces the same factorization, down to singular-vector signs. All
functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, InvalidInputError

#: Singular values at or below this fraction of the largest one do not
#: count toward the effective rank.
DEFAULT_RANK_TOLERANCE = 1e-10

#: Vectors with Euclidean norm at or below this are treated as degenerate
#: (no direction can be assigned to them).
NORM_EPSILON = 1e-12

# Jacobi sweeps stop once every normalized off-diagonal inner product is
# below this; convergence is quadratic near the end, so the achieved
# orthogonality is far tighter than the contractual 1e-8.
_JACOBI_TOL = 1e-10
_MAX_SWEEPS = 60


def check_matrix(matrix) -> np.ndarray:
    """Validate an array-like as a finite, non-empty 2-D float64 matrix."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got {a.ndim}-D")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"matrix axes must be non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix contains non-finite entries")
    return a


def check_vector(vector) -> np.ndarray:
    """Validate an array-like as a finite, non-empty 1-D float64 vector."""
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise InvalidInputError("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector contains non-finite entries")
    return v


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of a matrix, truncated to its effective rank.

    ``u`` is (rows x rank) and ``v`` is (cols x rank), each with
    orthonormal columns; ``sigma`` is non-increasing and strictly
    positive. The original matrix is ``(u * sigma) @ v.T`` up to the
    truncated tail.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    rank: int

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def _pair_rounds(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Round-robin tournament schedule: m-1 rounds of disjoint pairs that
    # together cover every unordered pair exactly once (odd m gets a bye).
    players = list(range(m))
    if m % 2:
        players.append(-1)
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = [(players[i], players[k - 1 - i]) for i in range(k // 2)]
        pairs = [(a, b) for a, b in pairs if a != -1 and b != -1]
        if pairs:
            rounds.append(
                (
                    np.array([a for a, _ in pairs], dtype=np.intp),
                    np.array([b for _, b in pairs], dtype=np.intp),
                )
            )
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _orthogonalize_rows(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Jacobi: rotate row pairs of ``b`` until mutually orthogonal.

    Returns the rotated matrix and the accumulated rotation ``j`` such that
    ``b_out = j @ b_in`` with ``j`` orthogonal. Rows are used instead of
    columns so pair gathers are contiguous.
    """
    m = b.shape[0]
    j = np.eye(m)
    rounds = _pair_rounds(m)
    for sweep in range(_MAX_SWEEPS):
        worst = 0.0
        for p_idx, q_idx in rounds:
            bp = b[p_idx]
            bq = b[q_idx]
            app = np.einsum("ij,ij->i", bp, bp)
            aqq = np.einsum("ij,ij->i", bq, bq)
            apq = np.einsum("ij,ij->i", bp, bq)
            scale = np.sqrt(app * aqq)
            rel = np.divide(np.abs(apq), scale, out=np.zeros_like(scale), where=scale > 0.0)
            worst = max(worst, float(rel.max()))
            need = rel > _JACOBI_TOL
            if not need.any():
                continue
            tau = (aqq[need] - app[need]) / (2.0 * apq[need])
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0.0, 1.0, t)  # 45-degree rotation for equal norms
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            pn = p_idx[need]
            qn = q_idx[need]
            bpn = b[pn]
            bqn = b[qn]
            b[pn] = bpn * c - bqn * s
            b[qn] = bpn * s + bqn * c
            jpn = j[pn]
            jqn = j[qn]
            j[pn] = jpn * c - jqn * s
            j[qn] = jpn * s + jqn * c
        if worst <= _JACOBI_TOL:
            return b, j
    raise RuntimeError(f"Jacobi iteration did not converge in {_MAX_SWEEPS} sweeps")


def svd_decompose(matrix, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> SvdFactors:
    """Decompose a matrix into thin singular factors truncated to effective rank.

    The effective rank counts singular values above
    ``rank_tolerance * sigma_max``; it is zero only for the zero matrix.
    Sign convention: the largest-magnitude entry of every left singular
    vector is made non-negative (ties resolved to the lowest row index),
    so results are reproducible and comparable across runs.
    """
    a = check_matrix(matrix)
    if not 0.0 < rank_tolerance < 1.0:
        raise InvalidInputError(f"rank_tolerance must be in (0, 1), got {rank_tolerance}")
    n, m = a.shape
    # Work on the thinner dimension; rows of `work` are the vectors that
    # get pairwise-orthogonalized.
    flip = m > n
    work = np.ascontiguousarray(a if flip else a.T)
    b, j = _orthogonalize_rows(work.copy())
    norms = np.sqrt(np.einsum("ij,ij->i", b, b))
    order = np.argsort(-norms, kind="stable")
    sigma = norms[order]
    top = sigma[0] if sigma.size else 0.0
    rank = int(np.count_nonzero(sigma > rank_tolerance * top)) if top > 0.0 else 0
    keep = order[:rank]
    sigma = sigma[:rank]
    long_vecs = (b[keep] / sigma[:, None]).T if rank else np.zeros((work.shape[1], 0))
    short_vecs = j[keep].T if rank else np.zeros((work.shape[0], 0))
    u, v = (short_vecs, long_vecs) if flip else (long_vecs, short_vecs)
    if rank:
        lead = np.argmax(np.abs(u), axis=0)
        signs = np.where(u[lead, np.arange(rank)] < 0.0, -1.0, 1.0)
        u = u * signs
        v = v * signs
    return SvdFactors(u=u, sigma=sigma, v=v, rank=rank)


def frobenius_norm(matrix) -> float:
    """Frobenius norm; zero exactly when the matrix is all zeros."""
    return float(np.linalg.norm(check_matrix(matrix)))


def vector_angle_deg(a, b) -> float:
    """Angle between two vectors, in degrees within [0, 180].

    The cosine is clamped to [-1, 1] before the arccos, so rounding can
    never produce NaN. Raises DegenerateVectorError if either vector has
    norm at or below NORM_EPSILON, and InvalidInputError on a length
    mismatch.
    """
    va = check_vector(a)
    vb = check_vector(b)
    if va.shape != vb.shape:
        raise InvalidInputError(f"vector lengths differ: {va.size} vs {vb.size}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na <= NORM_EPSILON or nb <= NORM_EPSILON:
        raise DegenerateVectorError("cannot measure the angle of a near-zero vector")
    cosine = np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0)
    return float(np.degrees(np.arccos(cosine)))
