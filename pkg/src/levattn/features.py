"""Feature maps for the generalized attention problem.

Attention is ``<psi(q), phi(k)>^2`` normalized over keys. A polynomial map
of degree ``h`` (the Khatri-Rao row power) turns ``|<q, k>|^{2h}`` into that
form, so every even-power attention reduces to the squared case.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from levattn.linalg import KHATRI_RAO_CAP, as_matrix, khatri_rao_rows


@dataclass(frozen=True)
class FeatureMap:
    kind: str  # "identity" | "polynomial" | "user"
    half_p: int = 1
    key_map: Optional[Callable] = None
    query_map: Optional[Callable] = None
    cap: int = KHATRI_RAO_CAP

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def polynomial(cls, half_p: int, cap: int = KHATRI_RAO_CAP):
        if half_p < 1:
            raise ValueError("polynomial degree must be >= 1")
        return cls("polynomial", int(half_p), cap=cap)

    @classmethod
    def user(cls, key_map, query_map=None):
        """Row transforms ``phi`` (keys) and ``psi`` (queries, default ``phi``)."""
        return cls("user", key_map=key_map, query_map=query_map or key_map)

    @classmethod
    def parse(cls, text: str):
        """``"identity"`` or ``"poly:h"``."""
        if text in ("identity", "id"):
            return cls.identity()
        if text.startswith("poly:"):
            return cls.polynomial(int(text.split(":", 1)[1]))
        raise ValueError(f"unknown feature map {text!r}")

    @property
    def equivalent_p(self) -> Optional[float]:
        """Power ``p`` such that this map realizes ``|<q,k>|^p``, if any."""
        if self.kind == "identity":
            return 2.0
        if self.kind == "polynomial":
            return 2.0 * self.half_p
        return None

    def output_dim(self, d: int) -> int:
        if self.kind == "polynomial":
            return d**self.half_p
        if self.kind == "identity":
            return d
        return int(np.asarray(self.key_map(np.zeros(d))).size)

    def _apply(self, X, fn):
        X = as_matrix(X)
        if self.kind == "identity":
            return X
        if self.kind == "polynomial":
            return khatri_rao_rows(X, self.half_p, self.cap)
        return as_matrix(np.array([np.ravel(fn(x)) for x in X]))

    def keys(self, K):
        return self._apply(K, self.key_map)

    def queries(self, Q):
        return self._apply(Q, self.query_map)

    def __str__(self):
        if self.kind == "polynomial":
            return f"poly:{self.half_p}"
        return self.kind
