"""Dense linear algebra primitives shared by every other module.

Matrices are plain C-contiguous ``float64`` numpy arrays; :func:`as_matrix`
is the single validation point (2-D, finite).
"""
from __future__ import annotations

import numpy as np

from levattn._backend import kernels

#: Eigenvalues of a Gram matrix at or below ``PINV_RTOL * max eigenvalue``
#: are treated as zero by every pseudoinverse in the package.
PINV_RTOL = 1e-10

#: Default cap on the width ``d**h`` of a Khatri-Rao row power.
KHATRI_RAO_CAP = 2**24


class DimensionError(ValueError):
    pass


def as_matrix(x, name="matrix"):
    """Return ``x`` as a finite, C-contiguous 2-D float64 array."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def as_vector(x, dim=None, name="vector"):
    v = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if dim is not None and v.shape[0] != dim:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains NaN or Inf")
    return v


class GramState:
    """Running ``K^T K`` built from one row at a time."""

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.gram = np.zeros((self.dim, self.dim))
        self.count = 0

    def accumulate(self, row) -> "GramState":
        row = as_vector(row, self.dim, "row")
        self.gram += np.outer(row, row)
        self.count += 1
        return self

    @property
    def words(self) -> int:
        return self.dim * self.dim


def gram_accumulate(state: GramState, row) -> GramState:
    return state.accumulate(row)


class Factorization:
    """Eigen/SVD factorization of a PSD Gram matrix ``K^T K``.

    Holds ``V`` (columns are right singular vectors of ``K``) and the Gram
    eigenvalues ``lam = sigma**2``. ``sigma_vt`` is the d x d block
    ``Sigma V^T`` used to evaluate ``||K q||`` without touching ``K``.
    """

    def __init__(self, eigvals, eigvecs, kind, row_leverage=None):
        lam = np.clip(np.asarray(eigvals, dtype=np.float64), 0.0, None)
        self.kind = kind
        self.eigvals = lam
        self.eigvecs = np.asarray(eigvecs, dtype=np.float64)
        top = lam.max() if lam.size else 0.0
        self.keep = lam > PINV_RTOL * top if top > 0 else np.zeros(lam.shape, bool)
        self.rank = int(self.keep.sum())
        self.sigma_vt = np.sqrt(lam)[:, None] * self.eigvecs.T
        self._row_leverage = row_leverage

    @classmethod
    def from_gram(cls, gram) -> "Factorization":
        g = as_matrix(gram, "gram")
        g = 0.5 * (g + g.T)
        lam, V = np.linalg.eigh(g)
        return cls(lam[::-1], V[:, ::-1], "singular-value")

    @classmethod
    def from_matrix(cls, K, method="svd") -> "Factorization":
        """Factor ``K`` directly; also records per-row leverage scores.

        ``method="qr"`` takes a thin QR of ``K`` and then an SVD of the
        d x d triangle; ``method="svd"`` takes a thin SVD of ``K``.
        """
        K = as_matrix(K, "K")
        if method == "svd":
            U, s, Vt = np.linalg.svd(K, full_matrices=False)
            kind = "singular-value"
        elif method == "qr":
            Q, R = np.linalg.qr(K)
            Ur, s, Vt = np.linalg.svd(R, full_matrices=False)
            U = Q @ Ur
            kind = "orthogonal-triangular"
        else:
            raise ValueError(f"unknown factorization method {method!r}")
        lam = s**2
        top = lam.max() if lam.size else 0.0
        keep = lam > PINV_RTOL * top if top > 0 else np.zeros(lam.shape, bool)
        lev = np.einsum("ij,ij->i", U[:, keep], U[:, keep])
        return cls(lam, Vt.T, kind, row_leverage=lev)

    def quadratic_form(self, V):
        """``v^T (K^T K)^+ v`` for a vector, or row-wise for a matrix."""
        V = np.asarray(V, dtype=np.float64)
        d = self.eigvecs.shape[0]
        if V.shape[-1] != d:
            raise DimensionError(f"expected last dimension {d}, got {V.shape[-1]}")
        proj = V @ self.eigvecs[:, self.keep]
        return (proj**2 / self.eigvals[self.keep]).sum(axis=-1)

    def norm_squared(self, q):
        """``||K q||_2^2`` via ``||Sigma V^T q||_2^2``."""
        y = self.sigma_vt @ np.asarray(q, dtype=np.float64)
        return float(y @ y)

    def gram(self):
        return (self.eigvecs * self.eigvals) @ self.eigvecs.T

    @property
    def row_leverage(self):
        if self._row_leverage is None:
            raise AttributeError("row leverage only available for from_matrix factorizations")
        return self._row_leverage


def pinv_quadratic_form(fact: Factorization, v) -> float:
    v = as_vector(v, fact.eigvecs.shape[0], "v")
    return float(fact.quadratic_form(v))


def gram_of(K):
    K = as_matrix(K, "K")
    return K.T @ K


def khatri_rao_row_power(row, half_p: int, cap: int = KHATRI_RAO_CAP):
    """Flattened ``half_p``-fold tensor power of ``row`` (``np.kron`` order)."""
    row = as_vector(row, name="row")
    return khatri_rao_rows(row[None, :], half_p, cap)[0]


def khatri_rao_rows(K, half_p: int, cap: int = KHATRI_RAO_CAP):
    """Apply :func:`khatri_rao_row_power` to every row of ``K``."""
    K = as_matrix(K, "K")
    half_p = int(half_p)
    if half_p < 1:
        raise ValueError("half_p must be >= 1")
    width = K.shape[1] ** half_p
    if width > cap:
        raise OverflowError(f"lift width {K.shape[1]}**{half_p} = {width} exceeds cap {cap}")
    return kernels.khatri_rao_power(K, half_p)


def gaussian_sketch(m: int, n: int, seed=None):
    """Dense Gaussian JL matrix ``B`` of shape ``(n, m)`` with entries N(0, 1/m).

    ``||B^T x||^2`` approximates ``||x||^2`` for ``x`` of length ``n``.
    """
    if m < 1 or n < 1:
        raise ValueError("sketch dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, m)) / np.sqrt(m)
