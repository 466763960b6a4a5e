"""Per-row importance scores: leverage, online leverage, Lewis weights.

For ``f(x) = |x|^p`` the f-sensitivity of row ``i`` is

    sup_{y != 0} |<K_i, y>|^p / sum_j |<K_j, y>|^p

which is exactly the leverage score when ``p = 2`` and is bounded by a
scaled l_p Lewis weight otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from levattn._backend import kernels
from levattn.linalg import Factorization, as_matrix, as_vector, gram_of

#: A streamed row whose squared residual outside the prefix row space
#: exceeds ``SPAN_TOL * ||row||^2`` counts as a new direction (score 1).
SPAN_TOL = 1e-10


class LewisConvergenceError(ArithmeticError):
    def __init__(self, residual, iterations):
        super().__init__(
            f"Lewis weights did not converge in {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


@dataclass
class SensitivityVector:
    scores: np.ndarray
    estimator: str
    p: float = 2.0
    tol: float = 0.0
    iterations: int = 0
    residual: float = 0.0
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, i):
        return self.scores[i]


def leverage_from_factorization(fact: Factorization, rows):
    """Leverage of ``rows`` against a factored Gram; clipped to [0, 1]."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return np.clip(fact.quadratic_form(rows), 0.0, 1.0)


def leverage_scores(K, method: str = "gram") -> SensitivityVector:
    """Exact leverage scores ``K_j^T (K^T K)^+ K_j``.

    ``method`` is ``"gram"`` (eigendecomposition of ``K^T K``, the route the
    streaming and distributed code share), ``"svd"`` or ``"qr"``.
    """
    K = as_matrix(K, "K")
    if method == "gram":
        scores = leverage_from_factorization(Factorization.from_gram(gram_of(K)), K)
    else:
        scores = np.clip(Factorization.from_matrix(K, method).row_leverage, 0.0, 1.0)
    return SensitivityVector(scores, "leverage", 2.0, extra={"method": method})


def online_leverage_scores(rows, ridge: float = 0.0) -> SensitivityVector:
    """Online leverage of each row against the rows before it.

    With ``ridge == 0`` a row with any component outside the prefix row space
    scores 1; in-span scores are capped at 1. With ``ridge > 0`` the score is
    ``min(1, K_j^T (M + ridge I)^{-1} K_j)`` for prefix Gram ``M``.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if isinstance(rows, np.ndarray) and rows.ndim == 2 and ridge == 0:
        K = as_matrix(rows, "rows")
        scores, _ = kernels.online_scores(K, SPAN_TOL)
        return SensitivityVector(scores, "online-leverage", 2.0)

    scores = []
    buf = inv = None
    for row in rows:
        row = as_vector(row, None if buf is None and inv is None else d, "row")
        if buf is None and inv is None:
            d = row.shape[0]
            if ridge == 0:
                buf = kernels.new_online_buffer(d)
            else:
                inv = np.eye(d) / ridge
        if ridge == 0:
            scores.append(kernels.online_step(buf, row, SPAN_TOL))
        else:
            a = inv @ row
            s = float(row @ a)
            scores.append(min(1.0, s))
            inv -= np.outer(a, a) / (1.0 + s)
    return SensitivityVector(
        np.asarray(scores, dtype=np.float64), "online-leverage", 2.0, extra={"ridge": ridge}
    )


def _rescaled_quadratic(K, w, p, nonzero):
    """``k_i^T (K^T W^{1-2/p} K)^+ k_i`` for every row."""
    expo = 1.0 - 2.0 / p
    scale = np.zeros_like(w)
    scale[nonzero] = w[nonzero] ** expo
    M = (K * scale[:, None]).T @ K
    out = np.zeros_like(w)
    out[nonzero] = Factorization.from_gram(M).quadratic_form(K[nonzero])
    return np.clip(out, 0.0, None), scale


def lewis_fixed_point_residual(K, w, p) -> float:
    """``max_i |w_i - tau_i(W^{1/2-1/p} K)|``."""
    K = as_matrix(K, "K")
    w = np.asarray(w, dtype=np.float64)
    nonzero = np.einsum("ij,ij->i", K, K) > 0
    quad, scale = _rescaled_quadratic(K, w, p, nonzero)
    return float(np.max(np.abs(w - scale * quad))) if len(w) else 0.0


def lewis_weights(K, p: float, tol: float = 1e-10, max_iter: int = 2000) -> SensitivityVector:
    """l_p Lewis weights by a damped fixed-point iteration.

    The undamped map ``w_i <- (k_i^T (K^T W^{1-2/p} K)^+ k_i)^{p/2}`` contracts
    only for ``p < 4``; the update is applied geometrically with step
    ``min(1, 4 / (p + 2))``, which contracts for every finite ``p >= 1``.
    Convergence is certified by the fixed-point residual, not assumed.
    """
    K = as_matrix(K, "K")
    p = float(p)
    if not (np.isfinite(p) and p >= 1.0):
        raise ValueError("p must be a finite real >= 1")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    n, d = K.shape
    nonzero = np.einsum("ij,ij->i", K, K) > 0
    w = np.where(nonzero, d / max(n, 1), 0.0)
    step = min(1.0, 4.0 / (p + 2.0))
    residual = np.inf
    for it in range(1, max_iter + 1):
        quad, scale = _rescaled_quadratic(K, w, p, nonzero)
        residual = float(np.max(np.abs(w - scale * quad))) if n else 0.0
        if residual <= tol:
            return SensitivityVector(w, f"lewis-{p:g}", p, tol, it, residual)
        target = quad ** (p / 2.0)
        w = np.where(nonzero, w ** (1.0 - step) * target**step, 0.0)
    raise LewisConvergenceError(residual, max_iter)


def sensitivity_upper_bounds(K, p: float, tol: float = 1e-10, max_iter: int = 2000) -> SensitivityVector:
    """``tau_i`` for ``p <= 2`` and ``d^{p/2-1} tau_i`` for ``p > 2``."""
    K = as_matrix(K, "K")
    lw = lewis_weights(K, p, tol, max_iter)
    factor = K.shape[1] ** (p / 2.0 - 1.0) if p > 2 else 1.0
    return SensitivityVector(
        lw.scores * factor,
        f"sensitivity-upper-bound-{p:g}",
        p,
        tol,
        lw.iterations,
        lw.residual,
        extra={"factor": factor},
    )


def _ratio(K, i, y, p):
    vals = np.abs(K @ y) ** p
    total = vals.sum()
    return float(vals[i] / total) if total > 0 else 0.0


def sensitivity_oracle(K, i: int, p: float, trials: int = 200, seed=None, refine_steps: int = 50) -> float:
    """Certified lower bound on the |x|^p-sensitivity of row ``i``.

    Maximizes the sensitivity ratio over ``y = K_i``, ``y = (K^T K)^+ K_i``
    (the exact maximizer when ``p = 2``) and ``trials`` Gaussian directions,
    then polishes the best candidate by gradient ascent on the log-ratio.
    """
    K = as_matrix(K, "K")
    ki = K[i]
    if not np.any(ki):
        return 0.0
    rng = np.random.default_rng(seed)
    cands = [ki, np.linalg.pinv(K.T @ K) @ ki]
    cands.extend(rng.standard_normal((trials, K.shape[1])))
    ratios = [_ratio(K, i, y, p) for y in cands]
    best = int(np.argmax(ratios))
    y, r = np.array(cands[best], dtype=np.float64), ratios[best]
    if p == 2:
        return r

    lr = 0.1
    for _ in range(refine_steps):
        proj = K @ y
        if proj[i] == 0:
            break
        absp = np.abs(proj)
        total = np.sum(absp**p)
        grad = p * ki / proj[i] - p * (K.T @ (np.sign(proj) * absp ** (p - 1))) / total
        gn = np.linalg.norm(grad)
        if gn == 0:
            break
        cand = y + lr * np.linalg.norm(y) * grad / gn
        rc = _ratio(K, i, cand, p)
        if rc > r:
            y, r = cand, rc
            lr *= 1.5
        else:
            lr *= 0.5
    return r
