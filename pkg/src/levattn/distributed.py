"""Simulated coordinator protocol for keys sharded across servers.

Server 0 coordinates. Each other server sends its local Gram ``(K^i)^T K^i``
up; the coordinator sums them (in shard order) and broadcasts ``K^T K`` to
every server; each server replies with its rows of leverage ``>= epsilon``.
Messages go through an in-process channel and are logged with their size in
64-bit words.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from levattn.linalg import DimensionError, Factorization, as_matrix, gram_of
from levattn.sensitivities import leverage_from_factorization
from levattn.universal_set import UniversalSet, check_epsilon

COORDINATOR = 0


@dataclass
class Shard:
    server_id: int
    keys: np.ndarray

    def __post_init__(self):
        self.keys = as_matrix(self.keys, f"shard {self.server_id}")

    @property
    def local_gram(self):
        return gram_of(self.keys)


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    kind: str
    words: int


@dataclass
class ProtocolTranscript:
    messages: list = field(default_factory=list)

    def send(self, sender, receiver, kind, words):
        self.messages.append(Message(sender, receiver, kind, int(words)))

    @property
    def total_words(self) -> int:
        return sum(m.words for m in self.messages)

    def words_by_kind(self):
        out = {}
        for m in self.messages:
            out[m.kind] = out.get(m.kind, 0) + m.words
        return out


def expected_words(s: int, d: int, candidate_counts) -> int:
    """Closed-form traffic: Grams up, Gram broadcast, candidate rows back."""
    return (s - 1) * d * d + s * d * d + sum(candidate_counts) * d


def shard_matrix(K, sizes):
    """Split ``K`` row-wise into consecutive shards of the given sizes."""
    K = as_matrix(K, "K")
    if sum(sizes) != K.shape[0]:
        raise ValueError("shard sizes must sum to the number of rows")
    bounds = np.cumsum([0, *sizes])
    return [Shard(i, K[bounds[i] : bounds[i + 1]]) for i in range(len(sizes))]


def distributed_universal_set(shards, epsilon: float, max_workers=None):
    """Returns ``(UniversalSet, ProtocolTranscript)`` with global row indices."""
    epsilon = check_epsilon(epsilon)
    if not shards:
        raise ValueError("need at least one shard")
    d = shards[0].keys.shape[1]
    for sh in shards:
        if sh.keys.shape[1] != d:
            raise DimensionError(f"shard {sh.server_id} has {sh.keys.shape[1]} columns, expected {d}")
    offsets = np.cumsum([0] + [sh.keys.shape[0] for sh in shards])
    transcript = ProtocolTranscript()

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        local = list(pool.map(lambda sh: sh.local_gram, shards))
        for i in range(1, len(shards)):
            transcript.send(i, COORDINATOR, "gram", d * d)
        total = local[0].copy()
        for g in local[1:]:
            total += g
        for i in range(len(shards)):
            transcript.send(COORDINATOR, i, "broadcast", d * d)

        def local_candidates(sh):
            fact = Factorization.from_gram(total)
            if sh.keys.shape[0] == 0:
                return np.zeros(0, dtype=np.int64)
            lev = leverage_from_factorization(fact, sh.keys)
            return np.flatnonzero(lev >= epsilon)

        found = list(pool.map(local_candidates, shards))

    indices = []
    for i, local_idx in enumerate(found):
        transcript.send(i, COORDINATOR, "candidates", len(local_idx) * d)
        indices.extend(int(offsets[i] + j) for j in local_idx)
    uset = UniversalSet(indices, epsilon, d / epsilon, "leverage")
    return uset, transcript
