"""Planted key/query model and sublinear relevant-key recovery.

A set ``S`` of "stand-out" keys has bounded normalized correlation with
every other key::

    |K_j . K_l| <= delta1 * min(|K_j|^2, |K_l|^2)    j != l both in S
    |K_l . K_j| <= delta2 * min(|K_j|^2, |K_l|^2)    j in S, l not in S

A query is ``q = sum_{j in S(q)} w_j K_j + z`` with ``w_j >= 4 delta1``,
``sum w_j <= 1`` and ``|z . K_l| <= (delta1 / 4) |K_l|^2``. Under these
conditions relevant keys satisfy ``q . K_j >= (11/4) delta1 |K_j|^2`` and all
others ``q . K_j <= (5/4) delta1 |K_j|^2``, and every ``i`` in ``S`` has
self-attention ratio ``A_ii^2 / sum_j A_ij^2 >= rho`` with ``A = K K^T`` and
``rho = 1 / (1 + delta1^2 |S| + delta2^2 n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from levattn.linalg import as_matrix, as_vector, gaussian_sketch

DEFAULT_RETRIES = 50
DEFAULT_THRESHOLD_FACTOR = 2.0
LOW_FACTOR = 1.25
HIGH_FACTOR = 2.75


class PlantedVerificationError(ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SeparationReport:
    max_within: float  # max |K_j K_l| / min norm^2 over j != l in S
    max_cross: float  # max over j in S, l not in S
    worst_within: tuple
    worst_cross: tuple
    delta1: float
    delta2: float

    @property
    def within_ok(self):
        return self.max_within <= self.delta1

    @property
    def cross_ok(self):
        return self.max_cross <= self.delta2

    @property
    def ok(self):
        return self.within_ok and self.cross_ok


def verify_separation(K, S, delta1: float, delta2: float) -> SeparationReport:
    """Direct O(n |S| d) check of both correlation conditions."""
    K = as_matrix(K, "K")
    S = np.asarray(S, dtype=np.int64)
    n = K.shape[0]
    sq = np.einsum("ij,ij->i", K, K)
    in_s = np.zeros(n, dtype=bool)
    in_s[S] = True
    G = np.abs(K[S] @ K.T)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = G / np.minimum(sq[S][:, None], sq[None, :])
    R = np.nan_to_num(R, nan=0.0, posinf=np.inf)

    within = R[:, S].copy()
    np.fill_diagonal(within, -np.inf)
    cross = R[:, ~in_s]
    others = np.flatnonzero(~in_s)

    if within.size and len(S) > 1:
        a, b = np.unravel_index(np.argmax(within), within.shape)
        mw, ww = float(within[a, b]), (int(S[a]), int(S[b]))
    else:
        mw, ww = 0.0, ()
    if cross.size:
        a, b = np.unravel_index(np.argmax(cross), cross.shape)
        mc, wc = float(cross[a, b]), (int(S[a]), int(others[b]))
    else:
        mc, wc = 0.0, ()
    return SeparationReport(mw, mc, ww, wc, delta1, delta2)


@dataclass
class PlantedInstance:
    K: np.ndarray
    S: np.ndarray
    delta1: float
    delta2: float
    params: dict = field(default_factory=dict)
    report: SeparationReport = None
    attempts: int = 1

    def __post_init__(self):
        self.K = as_matrix(self.K, "K")
        self.S = np.sort(np.asarray(self.S, dtype=np.int64))
        self.sq_norms = np.einsum("ij,ij->i", self.K, self.K)
        if self.report is None:
            self.report = verify_separation(self.K, self.S, self.delta1, self.delta2)

    @property
    def n(self):
        return self.K.shape[0]

    @property
    def verified(self):
        return self.report.ok

    @property
    def rho(self):
        return 1.0 / (1.0 + self.delta1**2 * len(self.S) + self.delta2**2 * self.n)


def _check_deltas(delta1, delta2):
    if not (0 < delta2 <= delta1 <= 0.25):
        raise ValueError(f"need 0 < delta2 <= delta1 <= 1/4, got delta1={delta1}, delta2={delta2}")


def generate_stochastic(
    n, d, k, eps0, eps1, delta1, delta2, seed=None, max_retries: int = DEFAULT_RETRIES, strict: bool = True
) -> PlantedInstance:
    """Four-block Gaussian keys with a latent k-dimensional subspace.

    Rows in ``S`` (``round(eps0 * n)`` of them, at random positions) draw
    N(0, 1/k) on the first ``k`` coordinates and N(0, eps1/(d-k)) on the rest;
    other rows draw N(0, eps1/k) and N(0, 1/(d-k)). Redraws up to
    ``max_retries`` times until both correlation conditions hold; with
    ``strict`` a final failure raises :class:`PlantedVerificationError`
    carrying the worst attempt's report.
    """
    if not (1 <= k and 4 * k <= d):
        raise ValueError(f"need 1 <= k <= d/4, got k={k}, d={d}")
    _check_deltas(delta1, delta2)
    if delta1 < 4.0 / k:
        raise ValueError(f"need delta1 >= 4/k = {4.0 / k:g}, got {delta1}")
    if delta2 < 4.0 * eps1 / k:
        raise ValueError(f"need delta2 >= 4*eps1/k = {4.0 * eps1 / k:g}, got {delta2}")
    if not (0 < eps0 < 1) or eps1 < 0:
        raise ValueError("need 0 < eps0 < 1 and eps1 >= 0")
    m = int(round(eps0 * n))
    if m < 1:
        raise ValueError("eps0 * n rounds to an empty planted set")

    params = dict(n=n, d=d, k=k, eps0=eps0, eps1=eps1, seed=seed)
    worst = None
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for attempt, child in enumerate(root.spawn(max_retries), start=1):
        rng = np.random.default_rng(child)
        S = np.sort(rng.choice(n, size=m, replace=False))
        in_s = np.zeros(n, dtype=bool)
        in_s[S] = True
        K = np.empty((n, d))
        K[in_s, :k] = rng.normal(0.0, np.sqrt(1.0 / k), (m, k))
        K[in_s, k:] = rng.normal(0.0, np.sqrt(eps1 / (d - k)), (m, d - k))
        K[~in_s, :k] = rng.normal(0.0, np.sqrt(eps1 / k), (n - m, k))
        K[~in_s, k:] = rng.normal(0.0, np.sqrt(1.0 / (d - k)), (n - m, d - k))
        rep = verify_separation(K, S, delta1, delta2)
        if rep.ok:
            return PlantedInstance(K, S, delta1, delta2, params, rep, attempt)
        score = max(rep.max_within / delta1, rep.max_cross / delta2)
        if worst is None or score < worst[0]:
            worst = (score, K, S, rep)
    _, K, S, rep = worst
    if strict:
        raise PlantedVerificationError(
            f"correlation conditions failed after {max_retries} attempts; best attempt: "
            f"within-S max {rep.max_within:.4f} (delta1={delta1}) at pair {rep.worst_within}, "
            f"cross max {rep.max_cross:.4f} (delta2={delta2}) at pair {rep.worst_cross}",
            rep,
        )
    return PlantedInstance(K, S, delta1, delta2, params, rep, max_retries)


def generate_separated(n, d, n_planted, delta1, delta2, seed=None) -> PlantedInstance:
    """Instance satisfying both correlation conditions by construction.

    Planted rows are mutually orthogonal with norms in [0.5, 2]; the other
    rows are Gaussian vectors orthogonal to the planted span plus a small
    in-span component capped at half the ``delta2`` budget.
    """
    _check_deltas(delta1, delta2)
    if not (1 <= n_planted < d and n_planted <= n):
        raise ValueError("need 1 <= n_planted < d and n_planted <= n")
    rng = np.random.default_rng(seed)
    S = np.sort(rng.choice(n, size=n_planted, replace=False))
    in_s = np.zeros(n, dtype=bool)
    in_s[S] = True
    basis, _ = np.linalg.qr(rng.standard_normal((d, n_planted)))
    basis = basis.T  # n_planted x d orthonormal rows
    radii = rng.uniform(0.5, 2.0, n_planted)
    K = np.empty((n, d))
    K[S] = basis * radii[:, None]

    rest = rng.standard_normal((n - n_planted, d))
    rest -= (rest @ basis.T) @ basis
    rest_sq = np.einsum("ij,ij->i", rest, rest)
    cap = 0.5 * delta2 * np.minimum(radii[None, :] ** 2, rest_sq[:, None]) / radii[None, :]
    coef = rng.uniform(-1.0, 1.0, cap.shape) * cap
    K[~in_s] = rest + coef @ basis
    params = dict(n=n, d=d, n_planted=n_planted, seed=seed, construction="separated")
    inst = PlantedInstance(K, S, delta1, delta2, params)
    if not inst.verified:  # pragma: no cover - construction guarantees this
        raise PlantedVerificationError("separated construction failed verification", inst.report)
    return inst


@dataclass
class PlantedQuery:
    q: np.ndarray
    support: np.ndarray
    weights: np.ndarray
    noise: np.ndarray


def generate_query(instance: PlantedInstance, subset_size: int, seed=None, noise_level: float = 0.5) -> PlantedQuery:
    """Sample ``S(q)``, weights and noise satisfying the query model.

    Weights are uniform on ``[4 delta1, 1 / |S(q)|]``, so they sum to at most
    one and never need clamping. The noise direction is Gaussian, scaled so
    its worst normalized correlation is ``noise_level * delta1 / 4``.
    """
    size = int(subset_size)
    d1 = instance.delta1
    if size < 1 or size > len(instance.S):
        raise ValueError(f"subset size must be in [1, {len(instance.S)}]")
    if 4 * d1 * size > 1 + 1e-12:
        raise ValueError(f"weights >= 4*delta1 = {4 * d1:g} cannot sum to <= 1 over {size} keys")
    if not 0 <= noise_level <= 1:
        raise ValueError("noise_level must be in [0, 1]")
    rng = np.random.default_rng(seed)
    support = np.sort(rng.choice(instance.S, size=size, replace=False))
    hi = 1.0 / size
    lo = min(4 * d1, hi)
    weights = rng.uniform(lo, hi, size)
    g = rng.standard_normal(instance.K.shape[1])
    worst = np.max(np.abs(instance.K @ g) / instance.sq_norms)
    z = g * (noise_level * d1 / 4.0 / worst) if worst > 0 else np.zeros_like(g)
    q = weights @ instance.K[support] + z
    return PlantedQuery(q, support, weights, z)


def check_query(instance: PlantedInstance, query: PlantedQuery) -> dict:
    """Direct verification of the three query-model conditions."""
    d1 = instance.delta1
    w = query.weights
    noise_ratio = np.max(np.abs(instance.K @ query.noise) / instance.sq_norms)
    recon = w @ instance.K[query.support] + query.noise
    return {
        "weights": bool(w.sum() <= 1 + 1e-12 and np.all(w >= 4 * d1 - 1e-12)),
        "noise": bool(noise_ratio <= d1 / 4 + 1e-12),
        "decomposition": bool(np.allclose(recon, query.q, rtol=0, atol=1e-12)),
    }


def self_attention_ratio(K, i: int) -> float:
    """``A_ii^2 / sum_j A_ij^2`` for ``A = K K^T`` (0 for a zero row)."""
    K = as_matrix(K, "K")
    row = K @ K[i]
    total = float(row @ row)
    return float(row[i] ** 2 / total) if total > 0 else 0.0


def self_attention_ratios(K):
    """All ratios in O(n d^2): ``sum_j A_ij^2 = K_i^T (K^T K) K_i``."""
    K = as_matrix(K, "K")
    sq = np.einsum("ij,ij->i", K, K)
    row_sq = np.einsum("ij,jk,ik->i", K, K.T @ K, K)
    out = np.zeros_like(sq)
    pos = row_sq > 0
    out[pos] = sq[pos] ** 2 / row_sq[pos]
    return out


def jl_row_norms(K, sketch_cols: int, seed=None):
    """Estimates of ``||(K K^T)_i||^2`` from ``K (K^T B)`` with Gaussian ``B``."""
    K = as_matrix(K, "K")
    B = gaussian_sketch(sketch_cols, K.shape[0], seed)
    Y = K @ (K.T @ B)
    return np.einsum("ij,ij->i", Y, Y)


def candidate_set(K, rho: float, mode: str = "exact", sketch_cols=None, gamma: float = 0.2, seed=None):
    """``U' = {i : A_ii^2 / sum_j A_ij^2 >= rho}``.

    ``mode="jl"`` estimates the denominators with a Gaussian sketch of
    ``sketch_cols`` columns (default ``ceil(8 ln n / gamma^2)``) and keeps
    ``i`` when ``||K_i||^4 >= rho * estimate / (1 + gamma)``, a superset of
    the exact set whenever every estimate is within ``1 + gamma``.
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must be in (0, 1]")
    K = as_matrix(K, "K")
    if mode == "exact":
        return np.flatnonzero(self_attention_ratios(K) >= rho)
    if mode == "jl":
        n = K.shape[0]
        m = sketch_cols or int(np.ceil(8 * np.log(max(n, 2)) / gamma**2))
        est = jl_row_norms(K, m, seed)
        sq = np.einsum("ij,ij->i", K, K)
        return np.flatnonzero((sq**2 >= rho * est / (1.0 + gamma)) & (sq > 0))
    raise ValueError(f"mode must be 'exact' or 'jl', got {mode!r}")


@dataclass
class RecoveryResult:
    indices: np.ndarray
    ops: int


def recover_relevant_keys(
    instance: PlantedInstance, candidates, q, threshold_factor: float = DEFAULT_THRESHOLD_FACTOR
) -> RecoveryResult:
    """``{i in U' : q . K_i >= threshold_factor * delta1 * |K_i|^2}``.

    Touches only candidate rows; squared norms are precomputed.
    """
    if not LOW_FACTOR < threshold_factor <= HIGH_FACTOR:
        raise ValueError(f"threshold_factor must be in ({LOW_FACTOR}, {HIGH_FACTOR}]")
    cand = np.asarray(candidates, dtype=np.int64)
    q = as_vector(q, instance.K.shape[1], "q")
    dots = instance.K[cand] @ q
    hit = dots >= threshold_factor * instance.delta1 * instance.sq_norms[cand]
    ops = len(cand) * (instance.K.shape[1] + 2)
    return RecoveryResult(cand[hit], ops)
