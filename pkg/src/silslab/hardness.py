"""Exact cover by 3-sets (X3C), its reduction to exact-fit SILS, and a
brute-force exact-cover oracle used to cross-check the reduction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .instance import SilsInstance

ORACLE_MAX_SETS = 25


@dataclass(frozen=True)
class X3cInstance:
    """Ground set {1..n} and a collection of 3-element subsets (1-based)."""

    n: int
    collection: tuple

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("ground set size must be a positive integer")
        sets = []
        for k, c in enumerate(self.collection):
            c = tuple(int(e) for e in c)
            if len(c) != 3 or len(set(c)) != 3:
                raise ValueError(f"subset {k} must have exactly 3 distinct elements, got {c}")
            if min(c) < 1 or max(c) > self.n:
                raise ValueError(f"subset {k} has elements outside 1..{self.n}: {c}")
            sets.append(c)
        object.__setattr__(self, "collection", tuple(sets))

    def incidence(self) -> np.ndarray:
        """n x |C| 0/1 matrix with a 1 where element i lies in set j."""
        A = np.zeros((self.n, len(self.collection)))
        for j, c in enumerate(self.collection):
            A[[e - 1 for e in c], j] = 1.0
        return A


def parse_x3c(text: str) -> X3cInstance:
    """First non-blank line: n.  Every further line: three elements of one subset."""
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError("empty X3C file")
    try:
        n = int(lines[0])
        sets = [tuple(int(t) for t in ln.replace(",", " ").split()) for ln in lines[1:]]
    except ValueError as exc:
        raise ValueError(f"malformed X3C file: {exc}") from exc
    return X3cInstance(n, tuple(sets))


def read_x3c(path) -> X3cInstance:
    with open(path) as fh:
        return parse_x3c(fh.read())


def reduce_x3c(x3c: X3cInstance) -> SilsInstance:
    """M = incidence matrix, b = 1_n, sigma = n/3.

    When 3 does not divide n, sigma = ceil(n/3): each column sums to 3, so
    1^T M x = n is impossible and the instance is infeasible, as it should be.
    Zero columns pad M when the collection has fewer than sigma sets; they
    cannot help, since 1^T M x = 3 * sum(x) forces n/3 nonzeros on real sets.
    """
    sigma = -(-x3c.n // 3)
    M = x3c.incidence()
    if M.shape[1] < sigma:
        M = np.hstack([M, np.zeros((x3c.n, sigma - M.shape[1]))])
    return SilsInstance(M, np.ones(x3c.n), sigma)


def cover_from_solution(x3c: X3cInstance, x) -> list:
    """Indices of the sets picked by a SILS0 solution of the reduced instance."""
    x = np.asarray(x)
    m = len(x3c.collection)
    return [int(j) for j in np.flatnonzero(x[:m] != 0)]


def is_exact_cover(x3c: X3cInstance, picks: Sequence[int]) -> bool:
    counts = np.zeros(x3c.n, dtype=int)
    for j in picks:
        for e in x3c.collection[j]:
            counts[e - 1] += 1
    return bool(np.all(counts == 1))


def _subset_unions(words: np.ndarray):
    """Union bitsets and set counts of all 2^k subcollections of k sets (rows of words)."""
    k, W = words.shape
    union = np.zeros((1 << k, W), dtype=np.uint64)
    count = np.zeros(1 << k, dtype=np.int64)
    for j in range(k):
        half = 1 << j
        union[half:2 * half] = union[:half] | words[j]
        count[half:2 * half] = count[:half] + 1
    return union, count


def exact_cover_oracle(x3c: X3cInstance) -> Optional[list]:
    """Exhaustive search over all 2^|C| subcollections; first exact cover by bitmask order.

    A subcollection of 3-sets is an exact cover iff it has n/3 members and
    their union is the ground set.  Masks are split into a low and a high
    half so each half's unions are tabulated once.
    """
    m = len(x3c.collection)
    if m > ORACLE_MAX_SETS:
        raise ValueError(f"oracle budget: |C| = {m} exceeds {ORACLE_MAX_SETS}")
    if x3c.n % 3:
        return None
    W = -(-x3c.n // 64)
    words = np.zeros((m, W), dtype=np.uint64)
    for j, c in enumerate(x3c.collection):
        for e in c:
            words[j, (e - 1) // 64] |= np.uint64(1) << np.uint64((e - 1) % 64)
    full = np.zeros(W, dtype=np.uint64)
    for e in range(x3c.n):
        full[e // 64] |= np.uint64(1) << np.uint64(e % 64)
    lo = m // 2
    lu, lc = _subset_unions(words[:lo])
    hu, hc = _subset_unions(words[lo:])
    need = x3c.n // 3
    for h in range(hu.shape[0]):
        ok = (lc + hc[h] == need) & np.all((lu | hu[h]) == full, axis=1)
        hit = np.flatnonzero(ok)
        if hit.size:
            mask = int(hit[0]) | (h << lo)
            return [j for j in range(m) if mask >> j & 1]
    return None
