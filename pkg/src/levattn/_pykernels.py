"""Pure-Python (numpy) implementations of the hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used
when the extension is not built or when ``LEVATTN_BACKEND=python``.

Packed online state
-------------------
The one-pass streaming state stores the running Gram matrix ``M`` and its
pseudoinverse ``N`` in a single ``(d, d + 1)`` buffer: ``M[i, j]`` (i <= j)
lives at ``buf[i, j + 1]`` and ``N[i, j]`` (i >= j) at ``buf[i, j]``.
"""
import numpy as np


def new_online_buffer(d):
    return np.zeros((d, d + 1))


def unpack_gram(buf):
    d = buf.shape[0]
    upper = np.triu(buf[:, 1:])
    return upper + np.triu(upper, 1).T if d else upper


def unpack_pinv(buf):
    lower = np.tril(buf[:, :-1])
    return lower + np.tril(lower, -1).T


def _store(buf, gram, pinv):
    d = buf.shape[0]
    iu = np.triu_indices(d)
    il = np.tril_indices(d)
    buf[iu[0], iu[1] + 1] = gram[iu]
    buf[il] = pinv[il]


def gram_update(buf, row):
    """Add ``row row^T`` to the packed Gram (upper triangle only)."""
    d = buf.shape[0]
    iu = np.triu_indices(d)
    buf[iu[0], iu[1] + 1] += np.outer(row, row)[iu]


def online_step(buf, row, span_tol):
    """Score one row against the prefix state, then absorb it.

    Returns the capped online leverage score of ``row``.
    """
    row = np.asarray(row, dtype=np.float64)
    s2 = float(row @ row)
    if s2 == 0.0:
        return 0.0
    gram = unpack_gram(buf)
    pinv = unpack_pinv(buf)
    a = pinv @ row
    res = row - gram @ a
    rho2 = float(res @ res)
    s = float(row @ a)
    if rho2 > span_tol * s2:
        score = 1.0
        e = res / rho2
        pinv = pinv - np.outer(a, e) - np.outer(e, a) + (1.0 + s) * np.outer(e, e)
    else:
        score = min(1.0, max(0.0, s))
        pinv = pinv - np.outer(a, a) / (1.0 + s)
    gram = gram + np.outer(row, row)
    _store(buf, gram, pinv)
    return score


def online_scores(K, span_tol):
    K = np.ascontiguousarray(K, dtype=np.float64)
    n, d = K.shape
    buf = new_online_buffer(d)
    scores = np.empty(n)
    for j in range(n):
        scores[j] = online_step(buf, K[j], span_tol)
    return scores, buf


def khatri_rao_power(K, h):
    """Row-wise ``h``-fold Kronecker power, ordering as ``np.kron``."""
    K = np.ascontiguousarray(K, dtype=np.float64)
    n, d = K.shape
    out = np.ones((n, 1))
    for _ in range(h):
        out = (out[:, :, None] * K[:, None, :]).reshape(n, -1)
    return out


def powered_scores(rows, q, p):
    """``|<row, q>|^p`` for every row."""
    return np.abs(np.asarray(rows) @ np.asarray(q)) ** p
