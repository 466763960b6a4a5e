"""Dense reference attention and the structural statistics built on it.

Everything here is O(n^2) and exists to check the fast paths.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from levattn.features import FeatureMap
from levattn.linalg import DimensionError, as_matrix

#: Largest query or key count accepted by :func:`dense_attention`.
DENSE_CAP = 4096


@dataclass
class AttentionMatrix:
    values: np.ndarray
    degenerate: np.ndarray
    f: str

    @property
    def shape(self):
        return self.values.shape


AttentionFn = Union[float, int, Callable, FeatureMap]


def _describe(f) -> str:
    if isinstance(f, FeatureMap):
        return f"gap[{f}]"
    if callable(f):
        return getattr(f, "__name__", "callable")
    return f"|x|^{float(f):g}"


def unnormalized_scores(Q, K, f: AttentionFn = 2.0):
    """``f(<Q_i, K_j>)`` for all pairs (feature maps give squared products)."""
    Q = as_matrix(Q, "Q")
    K = as_matrix(K, "K")
    if Q.shape[1] != K.shape[1]:
        raise DimensionError(f"Q has {Q.shape[1]} columns, K has {K.shape[1]}")
    if isinstance(f, FeatureMap):
        return (f.queries(Q) @ f.keys(K).T) ** 2
    inner = Q @ K.T
    if callable(f):
        return np.asarray(f(inner), dtype=np.float64)
    return np.abs(inner) ** float(f)


def dense_attention(Q, K, f: AttentionFn = 2.0, cap: int = DENSE_CAP) -> AttentionMatrix:
    """Row-normalized ``f(Q K^T)``; zero-normalization rows are flagged and zeroed."""
    Q = as_matrix(Q, "Q")
    K = as_matrix(K, "K")
    if max(Q.shape[0], K.shape[0]) > cap:
        raise ValueError(f"dense attention limited to {cap} rows (got {Q.shape[0]}x{K.shape[0]})")
    S = unnormalized_scores(Q, K, f)
    norm = S.sum(axis=1)
    degenerate = ~(norm > 0)
    A = np.zeros_like(S)
    ok = ~degenerate
    A[ok] = S[ok] / norm[ok, None]
    return AttentionMatrix(A, degenerate, _describe(f))


def apply_values(A, V):
    vals = A.values if isinstance(A, AttentionMatrix) else np.asarray(A)
    V = as_matrix(V, "V")
    if vals.shape[1] != V.shape[0]:
        raise DimensionError(f"A has {vals.shape[1]} columns but V has {V.shape[0]} rows")
    return vals @ V


def _values(A):
    return A.values if isinstance(A, AttentionMatrix) else np.asarray(A, dtype=np.float64)


def top_k_mass(A, k: int):
    """Per-row sum of the ``k`` largest entries."""
    vals = _values(A)
    n = vals.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    order = np.argsort(-vals, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(vals, order, axis=1).sum(axis=1)


class GridNeighbors:
    """Manhattan-radius adjacency on a ``side x side`` patch grid.

    Every token neighbors itself. ``extra_token`` ("first" or "last") adds a
    class token adjacent to everything, as in a ViT sequence of
    ``side**2 + 1`` tokens.
    """

    def __init__(self, side: int, radius: int, extra_token=None):
        if side < 1 or radius < 0:
            raise ValueError("side must be >= 1 and radius >= 0")
        if extra_token not in (None, "first", "last"):
            raise ValueError("extra_token must be None, 'first' or 'last'")
        self.side = side
        self.radius = radius
        self.extra_token = extra_token

    @property
    def n(self):
        return self.side**2 + (self.extra_token is not None)

    def mask(self, n=None):
        if n is not None and n != self.n:
            raise ValueError(f"grid of side {self.side} implies n={self.n}, got {n}")
        idx = np.arange(self.side**2)
        r, c = np.divmod(idx, self.side)
        dist = np.abs(r[:, None] - r[None, :]) + np.abs(c[:, None] - c[None, :])
        grid = dist <= self.radius
        if self.extra_token is None:
            return grid
        m = np.ones((self.n, self.n), dtype=bool)
        sl = slice(1, None) if self.extra_token == "first" else slice(0, -1)
        m[sl, sl] = grid
        return m


class PairNeighbors:
    """Explicit neighbor pairs ``(i, j)`` (directed, self not implied)."""

    def __init__(self, pairs):
        self.pairs = [(int(i), int(j)) for i, j in pairs]

    def mask(self, n):
        m = np.zeros((n, n), dtype=bool)
        for i, j in self.pairs:
            m[i, j] = True
        return m


def _square(vals):
    if vals.shape[0] != vals.shape[1]:
        raise ValueError(f"neighbor statistics need a square attention matrix, got {vals.shape}")
    return vals


def _mask(neighbors, n):
    if isinstance(neighbors, np.ndarray):
        if neighbors.shape != (n, n):
            raise ValueError("neighbor mask shape mismatch")
        return neighbors.astype(bool)
    return neighbors.mask(n)


def local_mass(A, neighbors):
    """Per-row attention mass on neighboring keys."""
    vals = _square(_values(A))
    return np.where(_mask(neighbors, vals.shape[1]), vals, 0.0).sum(axis=1)


def nonlocal_key_weights(A, neighbors):
    """``W_j``: column sums of ``A`` over non-neighbor pairs."""
    vals = _square(_values(A))
    return np.where(_mask(neighbors, vals.shape[1]), 0.0, vals).sum(axis=0)


def important_keys(A, neighbors, m: int):
    """The ``m`` keys with largest non-local weight (ties to lower index)."""
    W = nonlocal_key_weights(A, neighbors)
    if not 1 <= m <= W.shape[0]:
        raise ValueError(f"m must be in [1, {W.shape[0]}]")
    return np.argsort(-W, kind="stable")[:m]


def histogram_csv(values, bins: int = 20, lo: float = 0.0, hi: float = 1.0) -> str:
    counts, edges = np.histogram(np.asarray(values), bins=bins, range=(lo, hi))
    lines = ["bin_lo,bin_hi,count"]
    lines += [f"{float(edges[b])!r},{float(edges[b + 1])!r},{int(counts[b])}" for b in range(bins)]
    return "\n".join(lines) + "\n"
