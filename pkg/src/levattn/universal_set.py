"""Universal key sets and the per-query heavy-attention engine.

A row whose f-sensitivity is below ``epsilon`` can never receive attention
``>= epsilon`` from any query, so thresholding sensitivity scores (or upper
bounds on them) yields a query-independent set ``U`` that contains every
heavy attention entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from levattn._backend import kernels
from levattn.features import FeatureMap
from levattn.linalg import Factorization, as_matrix, as_vector, khatri_rao_row_power, khatri_rao_rows
from levattn.oracle import dense_attention
from levattn.sensitivities import (
    leverage_scores,
    lewis_weights,
    sensitivity_upper_bounds,
)

#: Slack on Lewis-based thresholds (rows with bound >= epsilon / slack are kept).
DEFAULT_SLACK = 2.0

#: Oversampling constant for the sampled normalizer.
DEFAULT_SAMPLE_CONSTANT = 40.0


def check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not (0.0 < epsilon <= 1.0):
        raise ValueError(f"epsilon must be in (0, 1], got {epsilon}")
    return epsilon


@dataclass
class UniversalSet:
    indices: np.ndarray
    epsilon: float
    budget: float
    estimator: str
    p: float = 2.0
    slack: float = 1.0
    scores: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.indices = np.unique(np.asarray(self.indices, dtype=np.int64))

    def __len__(self):
        return int(self.indices.size)

    def __contains__(self, j):
        i = np.searchsorted(self.indices, j)
        return bool(i < self.indices.size and self.indices[i] == j)

    def __iter__(self):
        return iter(int(j) for j in self.indices)

    def as_set(self):
        return set(int(j) for j in self.indices)

    def mask(self, n):
        m = np.zeros(n, dtype=bool)
        m[self.indices] = True
        return m


def build_universal_set(
    K,
    epsilon: float,
    p: Optional[float] = 2.0,
    feature_map: Optional[FeatureMap] = None,
    slack: float = DEFAULT_SLACK,
    lewis_tol: float = 1e-10,
) -> UniversalSet:
    """Rows whose f-sensitivity could reach ``epsilon``.

    * ``p == 2``: exact leverage scores thresholded at ``epsilon``
      (at most ``d / epsilon`` rows).
    * other ``p >= 1``: Lewis-weight sensitivity bounds thresholded at
      ``epsilon / slack``.
    * ``feature_map``: lift the keys and threshold leverage of the lift; ``p``
      must agree with the map (``2h`` for ``poly:h``) or be ``None``.
    """
    epsilon = check_epsilon(epsilon)
    K = as_matrix(K, "K")
    n, d = K.shape
    if slack < 1:
        raise ValueError("slack must be >= 1")

    if feature_map is not None and feature_map.kind != "identity":
        want = feature_map.equivalent_p
        if p is not None and want is not None and float(p) != want:
            raise ValueError(f"feature map {feature_map} realizes p={want:g}, not p={p:g}")
        lifted = feature_map.keys(K)
        scores = leverage_scores(lifted).scores if n else np.zeros(0)
        idx = np.flatnonzero(scores >= epsilon)
        D = lifted.shape[1]
        return UniversalSet(idx, epsilon, D / epsilon, f"leverage[{feature_map}]", want or 2.0, 1.0, scores)

    p = 2.0 if p is None else float(p)
    if p == 2.0:
        scores = leverage_scores(K).scores if n else np.zeros(0)
        idx = np.flatnonzero(scores >= epsilon)
        return UniversalSet(idx, epsilon, d / epsilon, "leverage", 2.0, 1.0, scores)

    sv = sensitivity_upper_bounds(K, p, tol=lewis_tol) if n else None
    scores = sv.scores if n else np.zeros(0)
    idx = np.flatnonzero(scores >= epsilon / slack)
    budget = slack * d ** max(1.0, p / 2.0) / epsilon
    return UniversalSet(idx, epsilon, budget, f"sensitivity-upper-bound-{p:g}", p, slack, scores)


@dataclass
class CoverageReport:
    violations: list
    heavy_entries: int
    queries: int
    degenerate_rows: int

    @property
    def passed(self):
        return not self.violations


def coverage_check(K, Q, epsilon: float, f, U: UniversalSet, atol: float = 1e-9) -> CoverageReport:
    """Every dense-attention entry ``A_ij >= epsilon + atol`` must have ``j`` in ``U``."""
    A = dense_attention(Q, K, f)
    heavy = A.values >= epsilon
    outside = ~U.mask(A.values.shape[1])
    bad = np.argwhere((A.values >= epsilon + atol) & outside[None, :])
    violations = [(int(i), int(j), float(A.values[i, j])) for i, j in bad]
    return CoverageReport(violations, int(heavy.sum()), A.values.shape[0], int(A.degenerate.sum()))


class SampledNormalizer:
    """Row sample ``S`` with ``||x K^T S||_p^p ~ ||x K^T||_p^p``.

    Row ``i`` is kept with probability ``min(1, c * factor * tau_i / eps^2)``
    (``factor = d^{p/2-1}`` for ``p > 2``, else 1) and rescaled by
    ``(1 / prob)^{1/p}``.
    """

    def __init__(self, indices, probs, rows, p, eps_norm, constant):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64)
        self.rows = as_matrix(rows) if len(indices) else np.zeros((0, rows.shape[1]))
        self.p = float(p)
        self.eps_norm = eps_norm
        self.constant = constant

    @property
    def weights(self):
        """Rescale factor applied to each selected row."""
        return (1.0 / self.probs) ** (1.0 / self.p)

    def __len__(self):
        return int(self.indices.size)

    def estimate(self, x) -> float:
        x = as_vector(x, self.rows.shape[1], "x")
        if not len(self):
            return 0.0
        return float(kernels.powered_scores(self.rows, x, self.p).sum())


def sample_normalizer(
    K,
    p: float,
    eps_norm: float,
    seed=None,
    constant: float = DEFAULT_SAMPLE_CONSTANT,
    lewis_tol: float = 1e-10,
) -> SampledNormalizer:
    K = as_matrix(K, "K")
    n, d = K.shape
    p = float(p)
    if eps_norm <= 0:
        raise ValueError("eps_norm must be > 0")
    tau = lewis_weights(K, p, tol=lewis_tol).scores
    factor = d ** (p / 2.0 - 1.0) if p > 2 else 1.0
    if np.isinf(constant):
        probs = np.where(tau > 0, 1.0, 0.0)
    else:
        probs = np.minimum(1.0, constant * factor * tau / eps_norm**2)
    rng = np.random.default_rng(seed)
    keep = np.flatnonzero(rng.random(n) < probs)
    pk = probs[keep]
    rows = K[keep] * ((1.0 / pk) ** (1.0 / p))[:, None]
    return SampledNormalizer(keep, pk, rows, p, eps_norm, constant)


@dataclass
class QueryResult:
    heavy: list
    normalization: float
    ops: int
    degenerate: bool = False

    @property
    def indices(self):
        return [j for j, _ in self.heavy]


class QueryEngine:
    """Preprocessed keys answering heavy-attention queries without touching all n keys.

    Exact mode stores ``Sigma V^T`` of the Khatri-Rao lift of ``K`` (a
    ``D x D`` block with ``D = d^{p/2}``), so the normalization
    ``sum_j <K_j, q>^p = ||Sigma V^T q'||^2`` costs O(D^2). Sampled mode stores
    a Lewis-weight row sample instead. Immutable after construction.
    """

    def __init__(self, uset, keys, p, mode, d, sigma_vt=None, sampler=None):
        self.uset = uset
        self.keys = as_matrix(keys) if len(uset) else np.zeros((0, d))
        self.p = float(p)
        self.mode = mode
        self.d = int(d)
        self.sigma_vt = sigma_vt
        self.sampler = sampler

    @property
    def epsilon(self):
        return self.uset.epsilon

    @property
    def half_p(self):
        return int(round(self.p / 2))

    def normalization(self, q):
        """Returns ``(value, ops)``."""
        q = as_vector(q, self.d, "q")
        if self.mode == "exact":
            h = self.half_p
            lifted = khatri_rao_row_power(q, h)
            D = lifted.shape[0]
            ops = sum(self.d**t for t in range(2, h + 1))
            y = self.sigma_vt @ lifted
            ops += self.sigma_vt.shape[0] * D + y.shape[0]
            return float(y @ y), ops
        m = len(self.sampler)
        return self.sampler.estimate(q), m * (self.d + 1)

    def query(self, q, epsilon: Optional[float] = None) -> QueryResult:
        eps = self.epsilon if epsilon is None else check_epsilon(epsilon)
        if eps < self.epsilon:
            raise ValueError(f"engine built for epsilon >= {self.epsilon}, asked for {eps}")
        q = as_vector(q, self.d, "q")
        norm, ops = self.normalization(q)
        if not norm > 0:
            return QueryResult([], 0.0, ops, degenerate=True)
        num = kernels.powered_scores(self.keys, q, self.p) if len(self.uset) else np.zeros(0)
        ops += len(self.uset) * (self.d + 1)
        scores = num / norm
        heavy = [(int(j), float(s)) for j, s in zip(self.uset.indices, scores) if s >= eps]
        return QueryResult(heavy, norm, ops)


def preprocess_query_engine(
    K,
    epsilon: float,
    p: float = 2,
    approx: str = "exact",
    eps_norm: float = 0.25,
    seed=None,
    constant: float = DEFAULT_SAMPLE_CONSTANT,
    slack: float = DEFAULT_SLACK,
) -> QueryEngine:
    """Build ``U`` and the normalization structure for ``f(x) = |x|^p``.

    ``approx="exact"`` needs an even integer ``p``; ``U`` is then the set of
    rows of the Khatri-Rao lift with leverage ``>= epsilon``.
    ``approx="sampled"`` works for any ``p >= 1`` and uses the
    Lewis-based ``U`` with the given ``slack``.
    """
    K = as_matrix(K, "K")
    epsilon = check_epsilon(epsilon)
    p = float(p)
    n, d = K.shape
    if approx == "exact":
        if p < 2 or p != int(p) or int(p) % 2:
            raise ValueError(f"exact normalization needs an even integer p, got {p:g}")
        h = int(p) // 2
        lifted = khatri_rao_rows(K, h)
        fact = Factorization.from_matrix(lifted, "svd")
        lev = np.clip(fact.row_leverage, 0.0, 1.0)
        idx = np.flatnonzero(lev >= epsilon)
        D = lifted.shape[1]
        name = "leverage" if h == 1 else f"leverage[poly:{h}]"
        uset = UniversalSet(idx, epsilon, D / epsilon, name, p, 1.0, lev)
        return QueryEngine(uset, K[uset.indices], p, "exact", d, sigma_vt=fact.sigma_vt)
    if approx == "sampled":
        uset = build_universal_set(K, epsilon, p, slack=slack)
        sampler = sample_normalizer(K, p, eps_norm, seed, constant)
        return QueryEngine(uset, K[uset.indices], p, "sampled", d, sampler=sampler)
    raise ValueError(f"approx must be 'exact' or 'sampled', got {approx!r}")


def query_heavy_attentions(engine: QueryEngine, q, epsilon: Optional[float] = None) -> QueryResult:
    return engine.query(q, epsilon)
