"""Brute-force oracles for the sparse integer least-squares problem and its
exact-feasibility version."""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Iterator, Optional

import numpy as np

from .instance import SilsInstance, SparseSignVector

BUDGET = 10 ** 8
UNIQUENESS_TOL = 1e-9
FEAS_TOL = 1e-9


@dataclass
class ExactResult:
    best_x: SparseSignVector
    best_value: float
    unique: bool
    second_best_value: float
    candidates: int = 0


def gosper_supports(d: int, k: int) -> Iterator[tuple]:
    """All k-subsets of range(d), in increasing order of their bitmask (Gosper's hack)."""
    if k == 0:
        yield ()
        return
    if k > d:
        return
    mask = (1 << k) - 1
    limit = 1 << d
    while mask < limit:
        yield tuple(i for i in range(d) if mask >> i & 1)
        c = mask & -mask
        r = mask + c
        mask = (((r ^ mask) >> 2) // c) | r


def sign_patterns(k: int) -> np.ndarray:
    """All {-1, +1}^k in lexicographic order (-1 before +1)."""
    bits = (np.arange(2 ** k)[:, None] >> np.arange(k - 1, -1, -1)[None, :]) & 1
    return np.where(bits == 1, 1.0, -1.0)


def enumeration_size(d: int, sigma: int) -> int:
    return comb(d, sigma) * 2 ** sigma


def _check_budget(inst: SilsInstance, budget: int) -> None:
    size = enumeration_size(inst.d, inst.sigma)
    if size > budget:
        raise ValueError(f"enumeration needs {size} candidates, budget is {budget}")


def _chunks(inst: SilsInstance, chunk: int):
    """Yield (supports array K x sigma, values K x 2^sigma) over all candidates."""
    pats = sign_patterns(inst.sigma)
    buf = []
    for sup in gosper_supports(inst.d, inst.sigma):
        buf.append(sup)
        if len(buf) == chunk:
            yield _evaluate(inst, np.array(buf), pats)
            buf = []
    if buf:
        yield _evaluate(inst, np.array(buf), pats)


def _evaluate(inst: SilsInstance, sups: np.ndarray, pats: np.ndarray):
    MS = inst.M[:, sups]                       # n x K x sigma
    R = np.einsum("nks,ps->kpn", MS, pats) - inst.b[None, None, :]
    return sups, np.einsum("kpn,kpn->kp", R, R) / inst.n


def solve_exact(inst: SilsInstance, uniqueness_tol: float = UNIQUENESS_TOL,
                budget: int = BUDGET) -> ExactResult:
    _check_budget(inst, budget)
    pats = sign_patterns(inst.sigma)
    chunk = max(1, 200000 // (inst.n * len(pats)))
    best_key = None
    best_val = second = np.inf
    count = 0
    for sups, vals in _chunks(inst, chunk):
        count += vals.size
        flat = vals.ravel()
        m = float(flat.min())
        ties = np.flatnonzero(flat == m)
        keys = []
        for idx in ties:
            k, p = divmod(int(idx), len(pats))
            keys.append((tuple(int(i) for i in sups[k]), tuple(int(s) for s in pats[p])))
        key = min(keys)
        if ties.size > 1:
            chunk_second = m
        else:
            chunk_second = float(np.partition(flat, 1)[1]) if flat.size > 1 else np.inf
        # merge: (min by value, then lexicographic key)
        if m < best_val:
            second = min(best_val, chunk_second)
            best_val, best_key = m, key
        elif m == best_val:
            second = m
            best_key = min(best_key, key)
        else:
            second = min(second, m)
    x = np.zeros(inst.d, dtype=int)
    x[list(best_key[0])] = best_key[1]
    return ExactResult(SparseSignVector(x), best_val, second - best_val > uniqueness_tol, second, count)


def solve_sils0(inst: SilsInstance, tol: float = FEAS_TOL, budget: int = BUDGET) -> Optional[SparseSignVector]:
    """Some x in {0, +-1}^d with sigma nonzeros and |Mx - b| <= tol entrywise, or None."""
    _check_budget(inst, budget)
    pats = sign_patterns(inst.sigma)
    for sup in gosper_supports(inst.d, inst.sigma):
        R = inst.M[:, list(sup)] @ pats.T - inst.b[:, None]
        ok = np.flatnonzero(np.abs(R).max(axis=0) <= tol)
        if ok.size:
            x = np.zeros(inst.d, dtype=int)
            x[list(sup)] = pats[ok[0]].astype(int)
            return SparseSignVector(x)
    return None
