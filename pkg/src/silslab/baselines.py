"""l1 baselines: Lasso by cyclic coordinate descent, Dantzig Selector by a
two-phase dense simplex, plus k-fold cross-validation and the fixed parameter
rules used for the low-coherence experiments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .rng import CounterStream


@dataclass
class LassoParams:
    tol: float = 1e-8
    kkt_tol: float = 1e-6
    max_sweeps: int = 100_000
    # every this many sweeps, take a line-searched Newton step on the current support
    polish_every: int = 3


@dataclass
class DantzigParams:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-6
    pivot_tol: float = 1e-9
    max_pivots: int = 50_000


@dataclass
class BaselineResult:
    z: np.ndarray
    objective_or_l1: float
    kkt_violation: float
    parameter: float
    cv_trace: Optional[list] = None
    iterations: int = 0
    duality_gap: float = 0.0
    feas_residual: float = 0.0


class ConvergenceError(RuntimeError):
    pass


def soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


# --- Lasso -----------------------------------------------------------------------

def lasso_objective(M, b, z, lam: float) -> float:
    r = M @ z - b
    return float(r @ r) / (2 * M.shape[0]) + lam * float(np.abs(z).sum())


def lasso_kkt_violation(M, b, z, lam: float) -> float:
    """Largest violation of 0 in grad + lam * subdifferential(|z|_1)."""
    g = M.T @ (M @ z - b) / M.shape[0]
    on = z != 0
    v_on = np.abs(g[on] + lam * np.sign(z[on]))
    v_off = np.maximum(np.abs(g[~on]) - lam, 0.0)
    return float(max(v_on.max(initial=0.0), v_off.max(initial=0.0)))


def lasso(M, b, lam: float, params: Optional[LassoParams] = None, z0=None,
          trace_objective: bool = False) -> BaselineResult:
    """argmin (1/2n)|Mz - b|^2 + lam |z|_1 by cyclic coordinate descent (covariance updates)."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    p = params or LassoParams()
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    n, d = M.shape
    G = M.T @ M / n
    c = M.T @ b / n
    diag = np.diag(G).copy()
    z = np.zeros(d) if z0 is None else np.array(z0, dtype=float)
    Gz = G @ z
    history = []
    for sweep in range(1, p.max_sweeps + 1):
        biggest = 0.0
        for j in range(d):
            if diag[j] == 0.0:
                new = 0.0
            else:
                rho = c[j] - Gz[j] + diag[j] * z[j]
                new = soft(rho, lam) / diag[j]
            step = new - z[j]
            if step != 0.0:
                Gz += G[:, j] * step
                z[j] = new
                biggest = max(biggest, abs(step))
        if trace_objective:
            history.append(lasso_objective(M, b, z, lam))
        if biggest < p.tol:
            break
        if p.polish_every and sweep % p.polish_every == 0:
            zp = _subspace_step(G, c, z, lam)
            if zp is not None:
                z = zp
                Gz = G @ z
                if trace_objective:
                    history.append(lasso_objective(M, b, z, lam))
                if lasso_kkt_violation(M, b, z, lam) <= p.tol:
                    break
    else:
        raise ConvergenceError(f"coordinate descent did not converge in {p.max_sweeps} sweeps")
    res = BaselineResult(z, lasso_objective(M, b, z, lam), lasso_kkt_violation(M, b, z, lam),
                         float(lam), iterations=sweep)
    if trace_objective:
        res.cv_trace = history
    return res


def _subspace_step(G, c, z, lam):
    """One Newton step on the current orthant face, line-searched and clipped.

    On the face {sign(z_A) fixed, z_Ac = 0} the objective is the quadratic
    q(z_A) = z_A'G_AA z_A/2 - (c_A - lam s)'z_A.  The step goes along the
    least-squares Newton direction (or, on a singular face, a null-space
    descent direction), stops at the exact minimizer or at the first
    coordinate that would change sign (set to 0), so the objective never
    increases.  Returns None when no descent is available.
    """
    A = np.flatnonzero(z)
    if A.size == 0:
        return None
    s = np.sign(z[A])
    GA = G[np.ix_(A, A)]
    g = GA @ z[A] - (c[A] - lam * s)
    p = np.linalg.lstsq(GA, -g, rcond=None)[0]
    resid = -g - GA @ p
    if resid @ resid > 1e-12 * (g @ g):
        # singular face and g outside range(G_AA): q = resid lies in the null
        # space, so the objective falls linearly along it until a sign boundary
        p = resid
    slope = float(g @ p)
    if slope >= 0:
        return None
    curv = float(p @ GA @ p)
    t = -slope / curv if curv > 1e-12 * (p @ p) * max(1.0, np.trace(GA)) else np.inf
    cross = -z[A] / np.where(p != 0, p, np.inf)
    cross = np.where(cross > 0, cross, np.inf)
    hit = int(np.argmin(cross))
    clipped = cross[hit] < t
    t = min(t, cross[hit])
    if not np.isfinite(t):
        return None
    out = z.copy()
    out[A] = z[A] + t * p
    if clipped:
        out[A[hit]] = 0.0
    return out


# --- dense two-phase simplex --------------------------------------------------------

class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    y: np.ndarray
    objective: float
    dual_objective: float
    pivots: int


class _Tableau:
    """Dense tableau over the equality system F w = rhs, w >= 0.

    Pricing is largest-coefficient until a run of degenerate pivots, then
    Bland's rule for the rest of the phase.  The tableau is rebuilt from the
    original data every ``refresh`` pivots to stop round-off drift.
    """

    def __init__(self, F, rhs, basis, tol, refresh=100, degenerate_limit=50):
        self.F, self.rhs, self.basis = F, rhs, list(basis)
        self.tol, self.refresh, self.degenerate_limit = tol, refresh, degenerate_limit
        self.pivots = 0

    def rebuild(self, cost):
        m, ncols = self.F.shape
        B = self.F[:, self.basis]
        T = np.empty((m + 1, ncols + 1))
        T[:m, :ncols] = np.linalg.solve(B, self.F)
        T[:m, -1] = np.linalg.solve(B, self.rhs)
        y = np.linalg.solve(B.T, cost[self.basis])
        T[-1, :ncols] = cost - y @ self.F
        T[-1, -1] = -cost[self.basis] @ T[:m, -1]
        self.T = T
        return y

    def solve(self, cost, max_pivots):
        self.rebuild(cost)
        m = self.F.shape[0]
        bland, streak, since = False, 0, 0
        while True:
            T = self.T
            red = T[-1, :-1]
            if bland:
                cand = np.flatnonzero(red < -self.tol)
                if cand.size == 0:
                    break
                col = int(cand[0])
            else:
                col = int(np.argmin(red))
                if red[col] >= -self.tol:
                    break
            colv = T[:m, col]
            pos = colv > self.tol
            if not pos.any():
                if since:
                    self.rebuild(cost)
                    since = 0
                    continue
                raise LPError("LP is unbounded")
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / colv[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + self.tol)
            r = int(ties[np.argmin(np.asarray(self.basis)[ties])])
            T[r] /= T[r, col]
            f = T[:, col].copy()
            f[r] = 0.0
            T -= np.outer(f, T[r])
            self.basis[r] = col
            self.pivots += 1
            since += 1
            streak = streak + 1 if best <= self.tol else 0
            if streak > self.degenerate_limit:
                bland = True
            if since >= self.refresh:
                self.rebuild(cost)
                since = 0
            if self.pivots > max_pivots:
                raise LPError(f"simplex exceeded {max_pivots} pivots")
        return self.rebuild(cost)


def linprog_le(c, A, h, pivot_tol: float = 1e-9, max_pivots: int = 50_000) -> LPResult:
    """min c^T x  s.t.  A x <= h, x >= 0, by the two-phase tableau method.

    Returns primal x and the multipliers y <= 0 of the equality form
    A x + s = h (dual: max h^T y s.t. A^T y <= c, y <= 0).
    """
    c = np.asarray(c, float)
    A = np.asarray(A, float)
    h = np.asarray(h, float)
    m, n = A.shape
    flip = np.flatnonzero(h < 0)
    k = flip.size
    sgn = np.ones(m)
    sgn[flip] = -1.0
    F = np.zeros((m, n + m + k))
    F[:, :n] = A * sgn[:, None]
    F[:, n:n + m] = np.diag(sgn)
    F[flip, n + m + np.arange(k)] = 1.0
    rhs = h * sgn
    basis = np.arange(n, n + m)
    basis[flip] = n + m + np.arange(k)
    tab = _Tableau(F, rhs, basis, pivot_tol)
    if k:
        cost1 = np.zeros(n + m + k)
        cost1[n + m:] = 1.0
        tab.solve(cost1, max_pivots)
        if cost1[tab.basis] @ tab.T[:m, -1] > 1e-7 * max(1.0, np.abs(h).max()):
            raise LPError("LP is infeasible")
        # pivot remaining (zero-level) artificials out of the basis
        for r in range(m):
            if tab.basis[r] >= n + m:
                row = tab.T[r, :n + m]
                nz = np.flatnonzero(np.abs(row) > pivot_tol)
                if nz.size == 0:
                    raise LPError("redundant equality row; not expected for inequality LPs")
                j = int(nz[np.argmax(np.abs(row[nz]))])
                tab.basis[r] = j
                tab.rebuild(cost1)
    tab.F = F[:, :n + m]
    cost = np.concatenate([c, np.zeros(m)])
    y_flipped = tab.solve(cost, max_pivots)
    xfull = np.zeros(n + m)
    xfull[tab.basis] = np.maximum(tab.T[:m, -1], 0.0)
    x = xfull[:n]
    y = y_flipped * sgn
    return LPResult(x, y, float(c @ x), float(h @ y), tab.pivots)


# --- Dantzig selector --------------------------------------------------------------

def dantzig(M, b, eta: float, params: Optional[DantzigParams] = None) -> BaselineResult:
    """argmin |z|_1 s.t. |M^T (M z - b)|_inf <= eta, as an LP in z = u - v."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    p = params or DantzigParams()
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    d = M.shape[1]
    A = M.T @ M
    g = M.T @ b
    if np.abs(g).max(initial=0.0) <= eta:
        z = np.zeros(d)
        return BaselineResult(z, 0.0, 0.0, float(eta), duality_gap=0.0,
                              feas_residual=_ds_residual(A, g, z, eta))
    Aub = np.block([[A, -A], [-A, A]])
    hub = np.concatenate([eta + g, eta - g])
    # scale rows to unit size; the feasible set is unchanged
    scale = max(np.abs(A).max(), np.abs(g).max(), eta)
    lp = linprog_le(np.ones(2 * d), Aub / scale, hub / scale, p.pivot_tol, p.max_pivots)
    z = lp.x[:d] - lp.x[d:]
    l1 = float(np.abs(z).sum())
    # weak duality: any y <= 0 with Aub^T y <= 1 bounds the optimum below by hub^T y
    y = np.minimum(lp.y, 0.0) / scale
    viol = np.maximum(Aub.T @ y - 1.0, 0.0).max(initial=0.0)
    lower = float(hub @ y) if viol <= 1e-9 else -np.inf
    gap = l1 - lower
    res = BaselineResult(z, l1, float(viol), float(eta), iterations=lp.pivots,
                         duality_gap=float(gap), feas_residual=_ds_residual(A, g, z, eta))
    return res


def _ds_residual(A, g, z, eta) -> float:
    return float(max(0.0, np.abs(A @ z - g).max(initial=0.0) - eta))


# --- parameter rules and cross-validation ----------------------------------------------

def lasso_rule(n: int, d: int) -> float:
    return 2.0 * np.sqrt(np.log(d) / n)


def dantzig_rule(rho: float, d: int) -> float:
    return 2.0 * rho * (1.25 + np.sqrt(np.log(d)))


def default_grid(M, b, method: str, points: int = 20) -> np.ndarray:
    M = np.asarray(M, float)
    b = np.asarray(b, float)
    if method == "lasso":
        top = np.abs(M.T @ b / M.shape[0]).max()
        return top * np.logspace(-3, 0, points)
    if method == "dantzig":
        top = np.abs(M.T @ b).max()
        return top * np.logspace(-2, np.log10(2.0), points)
    raise ValueError(f"unknown method {method!r}")


def _fit(method, M, b, t, z0=None):
    if method == "lasso":
        return lasso(M, b, t, z0=z0)
    if method == "dantzig":
        return dantzig(M, b, t)
    raise ValueError(f"unknown method {method!r}")


def cross_validate(M, b, method: str, grid: Optional[Sequence] = None, folds: int = 10,
                   seed: int = 0) -> BaselineResult:
    """k-fold CV on rows; held-out error (1/n_fold)|Mz - b|^2; ties go to the larger parameter."""
    M = np.asarray(M, float)
    b = np.asarray(b, float)
    n = M.shape[0]
    if folds < 2 or n < folds:
        raise ValueError("need folds >= 2 and n >= folds")
    grid = default_grid(M, b, method) if grid is None else np.asarray(grid, float)
    if grid.size == 0:
        raise ValueError("empty parameter grid")
    order = CounterStream(seed).permutation(n)
    parts = np.array_split(order, folds)
    errs = np.zeros(grid.size)
    # walk each fold's path from the largest parameter down, warm-starting the Lasso
    path = np.argsort(-grid, kind="stable")
    for test in parts:
        train = np.setdiff1d(order, test)
        z = None
        for k in path:
            z = _fit(method, M[train], b[train], float(grid[k]), z).z
            r = M[test] @ z - b[test]
            errs[k] += float(r @ r) / test.size
    errs /= folds
    best = errs.min()
    ties = np.flatnonzero(errs <= best + 1e-12 * max(1.0, abs(best)))
    pick = float(grid[ties].max())
    res = _fit(method, M, b, pick)
    res.cv_trace = [(float(t), float(e)) for t, e in zip(grid, errs)]
    return res
