"""Bounded-memory universal sets over a one-way stream of key rows.

Two algorithms, both exact (same set as the batch leverage threshold):

* two passes: accumulate ``K^T K``, then re-read and threshold leverage;
* one pass: keep ``K^T K`` plus every row whose online leverage (against the
  rows before it) is ``>= epsilon``; at the end re-score the kept rows
  against the final Gram. Online scores dominate final scores, so no
  qualifying row is dropped.

Memory is counted in 64-bit float words. The one-pass state packs the
Gram and its pseudoinverse into a single ``d x (d + 1)`` buffer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from levattn._backend import kernels
from levattn.linalg import Factorization, GramState, as_vector
from levattn.sensitivities import SPAN_TOL, leverage_from_factorization
from levattn.universal_set import UniversalSet, check_epsilon

#: Scalar bookkeeping words (row count, candidate count) charged to a stream.
SCALAR_WORDS = 2


class StreamLengthError(ValueError):
    pass


@dataclass
class MemoryReport:
    dim: int
    rows: int
    candidates: int
    peak_words: int
    index_words: int
    online_score_sum: float

    def bound(self, slack_words: int = 64) -> int:
        return self.dim**2 + self.candidates * self.dim + slack_words

    def as_text(self) -> str:
        items = [
            ("dim", self.dim),
            ("rows", self.rows),
            ("candidates", self.candidates),
            ("peak_words", self.peak_words),
            ("index_words", self.index_words),
            ("online_score_sum", repr(float(self.online_score_sum))),
        ]
        return "\n".join(f"{k}: {v}" for k, v in items) + "\n"


@dataclass
class StreamState:
    """One-pass state: packed Gram/pseudoinverse plus stored candidate rows."""

    dim: int
    epsilon: float
    buf: np.ndarray = None
    count: int = 0
    cand_index: list = field(default_factory=list)
    cand_rows: list = field(default_factory=list)
    online_sum: float = 0.0
    peak_words: int = 0

    def __post_init__(self):
        if self.buf is None:
            self.buf = kernels.new_online_buffer(self.dim)

    def words_held(self) -> int:
        return self.buf.size + len(self.cand_rows) * self.dim + SCALAR_WORDS

    def push(self, row) -> float:
        row = as_vector(row, self.dim, "row")
        score = kernels.online_step(self.buf, row, SPAN_TOL)
        self.online_sum += score
        if score >= self.epsilon:
            self.cand_index.append(self.count)
            self.cand_rows.append(row.copy())
        self.count += 1
        self.peak_words = max(self.peak_words, self.words_held())
        return score

    def finish(self) -> UniversalSet:
        gram = kernels.unpack_gram(self.buf)
        self.buf = np.zeros((0, 1))
        fact = Factorization.from_gram(gram) if self.dim else None
        # factorization replaces the packed buffer: eigenvectors d^2 + eigenvalues d
        held = self.dim * self.dim + self.dim + len(self.cand_rows) * self.dim + SCALAR_WORDS
        self.peak_words = max(self.peak_words, held)
        if not self.cand_rows:
            return UniversalSet([], self.epsilon, self.dim / self.epsilon, "leverage")
        lev = leverage_from_factorization(fact, np.array(self.cand_rows))
        keep = [j for j, s in zip(self.cand_index, lev) if s >= self.epsilon]
        return UniversalSet(keep, self.epsilon, self.dim / self.epsilon, "leverage")

    def report(self) -> MemoryReport:
        return MemoryReport(
            self.dim, self.count, len(self.cand_rows), self.peak_words, len(self.cand_index), self.online_sum
        )


def _rows(stream):
    for row in stream:
        yield np.asarray(row, dtype=np.float64).ravel()


def one_pass_universal_set(stream, epsilon: float, dim=None, report: bool = False):
    """Single pass over ``stream`` (any iterable of rows)."""
    epsilon = check_epsilon(epsilon)
    state = None
    for row in _rows(stream):
        if state is None:
            state = StreamState(row.shape[0] if dim is None else dim, epsilon)
        state.push(row)
    if state is None:
        state = StreamState(dim or 0, epsilon)
        uset = UniversalSet([], epsilon, 0.0, "leverage")
    else:
        uset = state.finish()
    return (uset, state.report()) if report else uset


def two_pass_universal_set(stream, epsilon: float, dim=None, report: bool = False):
    """Two passes over a replayable ``stream`` (iterated twice)."""
    epsilon = check_epsilon(epsilon)
    gs = None
    for row in _rows(stream):
        if gs is None:
            gs = GramState(row.shape[0] if dim is None else dim)
        gs.accumulate(row)
    if gs is None:
        uset = UniversalSet([], epsilon, 0.0, "leverage")
        rep = MemoryReport(dim or 0, 0, 0, 0, 0, 0.0)
        return (uset, rep) if report else uset

    d, n = gs.dim, gs.count
    peak = gs.words + SCALAR_WORDS
    fact = Factorization.from_gram(gs.gram)
    del gs
    peak = max(peak, d * d + d + SCALAR_WORDS)

    keep = []
    seen = 0
    for row in _rows(stream):
        if seen >= n:
            raise StreamLengthError(f"second pass longer than first ({n} rows)")
        lev = leverage_from_factorization(fact, as_vector(row, d, "row"))[0]
        if lev >= epsilon:
            keep.append(seen)
        seen += 1
    if seen != n:
        raise StreamLengthError(f"second pass has {seen} rows, first had {n}")
    uset = UniversalSet(keep, epsilon, d / epsilon, "leverage")
    rep = MemoryReport(d, n, 0, peak, len(keep), float("nan"))
    return (uset, rep) if report else uset
