"""The l1-augmented SDP relaxation and a two-block ADMM solver for it.

The relaxation lifts x to W = (1, x)(1, x)^T and solves

    min  tr(C W)   s.t.  W PSD,  W_11 = 1,  tr(W_x) = sigma,
                         sum |W_x| <= sigma^2,  diag(W_x) <= 1,

where C = gram_lift(inst) and W_x is W without its first row and column.
ADMM alternates a PSD projection with a projection onto the polytope cut out
by the four linear/l1 constraints.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .instance import SilsInstance, SparseSignVector, as_vector, gram_lift, objective


class Status(enum.Enum):
    CONVERGED = "Converged"
    MAXITER = "MaxIter"
    INFEASIBLE = "Infeasible"


@dataclass
class SolverParams:
    rho: float = 1.0
    max_iter: int = 20000
    feas_tol: float = 1e-7
    opt_tol: float = 1e-6
    dykstra_max_iter: int = 500
    dykstra_tol: float = 1e-10
    rank_one_tol: float = 1e-6
    rounding_residue: float = 0.1
    # "exact" solves the polytope projection through its KKT system,
    # "dykstra" runs the alternating-projection cycle
    projection: str = "exact"
    adapt_every: int = 100
    adapt_ratio: float = 10.0
    # extra continuation rounds (each 10x tighter) when rounding looks valid
    # but the rank-one eigenvalue test is not yet met
    refine_rounds: int = 2

    def __post_init__(self):
        for name in ("rho", "feas_tol", "opt_tol", "dykstra_tol", "rank_one_tol", "rounding_residue"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.dykstra_max_iter < 1:
            raise ValueError("iteration limits must be positive")
        if self.projection not in ("exact", "dykstra"):
            raise ValueError("projection must be 'exact' or 'dykstra'")


@dataclass
class SdpSolution:
    W: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    status: Status
    rho: float = 1.0
    state: Optional[tuple] = None
    # certified lower bound on the relaxation's optimum (-inf unless converged)
    dual_bound: float = -np.inf

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


# --- projections ------------------------------------------------------------

def project_psd(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if not np.all(np.isfinite(S)):
        raise ValueError("non-finite input to PSD projection")
    S = (S + S.T) / 2
    # only the positive part is needed; near a low-rank solution this is cheap
    try:
        lam, V = scipy.linalg.eigh(S, subset_by_value=(0.0, np.inf), driver="evr", check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError):
        # the subset driver occasionally fails on clustered spectra; fall back to the full one
        lam, V = np.linalg.eigh(S)
        keep = lam > 0
        lam, V = lam[keep], V[:, keep]
    if lam.size == 0:
        return np.zeros_like(S)
    R = (V * lam) @ V.T
    return (R + R.T) / 2


def project_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection onto {||v||_1 <= radius} via the sorted simplex projection."""
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    idx = np.nonzero(u * k > css - radius)[0][-1]
    theta = (css[idx] - radius) / (idx + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def constraint_violation(W, sigma: int) -> dict:
    """Violation of each non-PSD constraint (0 when satisfied)."""
    W = np.asarray(W, dtype=float)
    Wx = W[1:, 1:]
    return {
        "w11": abs(W[0, 0] - 1.0),
        "trace": abs(np.trace(Wx) - sigma),
        "l1": max(np.abs(Wx).sum() - sigma ** 2, 0.0),
        "diag": max(np.max(np.diag(Wx)) - 1.0, 0.0),
    }


def is_feasible(W, sigma: int, tol: float) -> bool:
    v = constraint_violation(W, sigma)
    lam_min = np.linalg.eigvalsh((W + W.T) / 2)[0]
    return max(v.values()) <= tol and lam_min >= -tol


def project_polytope(S, sigma: int, params: Optional[SolverParams] = None, return_info: bool = False):
    """Dykstra cycle over the sets {W_11 = 1}, {tr W_x = sigma}, {diag W_x <= 1}
    and {sum |W_x| <= sigma^2}.  Returns W, or (W, converged, sweeps)."""
    params = params or SolverParams()
    X = np.array(S, dtype=float)
    X = (X + X.T) / 2
    d = X.shape[0] - 1
    if not 1 <= sigma <= d:
        raise ValueError("sigma must lie in [1, d]")
    idx = np.arange(1, d + 1)

    def p_w11(Y):
        Y = Y.copy()
        Y[0, 0] = 1.0
        return Y

    def p_trace(Y):
        Y = Y.copy()
        Y[idx, idx] += (sigma - Y[idx, idx].sum()) / d
        return Y

    def p_diag(Y):
        Y = Y.copy()
        Y[idx, idx] = np.minimum(Y[idx, idx], 1.0)
        return Y

    def p_l1(Y):
        Y = Y.copy()
        Wx = project_l1_ball(Y[1:, 1:].ravel(), float(sigma ** 2)).reshape(d, d)
        Y[1:, 1:] = (Wx + Wx.T) / 2
        return Y

    projs = (p_w11, p_trace, p_diag, p_l1)
    incs = [np.zeros_like(X) for _ in projs]
    converged = False
    sweeps = 0
    for sweeps in range(1, params.dykstra_max_iter + 1):
        start = X
        moved = 0.0
        for k, proj in enumerate(projs):
            Y = X + incs[k]
            Xn = proj(Y)
            inc = Y - Xn
            moved = max(moved, np.abs(inc - incs[k]).max())
            incs[k] = inc
            X = Xn
        # the end point of a sweep can stall while the increments still move
        if max(np.abs(X - start).max(), moved) < params.dykstra_tol:
            converged = True
            break
    if return_info:
        return X, converged, sweeps
    return X


def _soft(t, tau):
    return np.sign(t) * np.maximum(np.abs(t) - tau, 0.0)


def _diag_for_tau(vd: np.ndarray, tau: float, sigma: int):
    """Diagonal block of the KKT solution, min(1, soft(v - nu, tau)) summing to sigma.

    Returns (diag, slope) where slope is d/dtau of sum |diag| along the
    current linear piece.
    """
    d = vd.size
    if sigma == d:
        return np.ones(d), 0.0
    # g(nu) = sum_i min(1, soft(v_i - nu, tau)) is continuous, nonincreasing and
    # piecewise linear with kinks at v_i - tau - 1, v_i - tau, v_i + tau
    bps = np.sort(np.concatenate([vd - tau - 1.0, vd - tau, vd + tau]))
    gv = np.minimum(_soft(vd[None, :] - bps[:, None], tau), 1.0).sum(axis=1)
    j = int(np.searchsorted(-gv, -sigma, side="left"))
    if j >= bps.size:
        # past the last kink every entry is negative and g has slope -d
        nu = bps[-1] + (gv[-1] - sigma) / d
    else:
        # j == 0 would need sigma >= d, handled above
        a, b = bps[j - 1], bps[j]
        ga, gb = gv[j - 1], gv[j]
        nu = a if ga == gb else a + (ga - sigma) * (b - a) / (ga - gb)
    t = vd - nu
    dg = np.minimum(_soft(t, tau), 1.0)
    n_pos = np.count_nonzero((dg > 0) & (dg < 1))
    n_neg = np.count_nonzero(dg < 0)
    slope = 0.0
    if n_pos + n_neg:
        dnu = (n_neg - n_pos) / (n_pos + n_neg)
        slope = n_pos * (-dnu - 1.0) + n_neg * (dnu - 1.0)
    return dg, slope


def project_polytope_exact(S, sigma: int, tau0: Optional[float] = None, return_tau: bool = False):
    """Exact Euclidean projection onto the same polytope via its KKT conditions.

    The first row and column are free except W_11 = 1.  On W_x the solution is
    soft-thresholding by a common l1 multiplier tau, with the diagonal shifted
    by the trace multiplier and clamped at 1.  The map tau -> sum |W_x(tau)| is
    nonincreasing and piecewise linear, so tau is found by Newton steps on the
    current piece, safeguarded by bisection.  ``tau0`` warm-starts the search.
    """
    X = np.array(S, dtype=float)
    X = (X + X.T) / 2
    d = X.shape[0] - 1
    if not 1 <= sigma <= d:
        raise ValueError("sigma must lie in [1, d]")
    V = X[1:, 1:]
    vd = np.diag(V).copy()
    off = np.abs(V)
    np.fill_diagonal(off, 0.0)
    off_sorted = np.sort(off[off > 0])[::-1]
    off_css = np.concatenate([[0.0], np.cumsum(off_sorted)])
    radius = float(sigma ** 2)

    def l1(tau):
        k = int(np.searchsorted(-off_sorted, -tau, side="left"))
        dg, slope = _diag_for_tau(vd, tau, sigma)
        return off_css[k] - k * tau + np.abs(dg).sum(), slope - k, dg

    f, df, dg = l1(0.0)
    tau = 0.0
    if f > radius:
        lo, hi = 0.0, np.inf
        tau = tau0 if tau0 is not None and tau0 > 0 else 0.0
        if tau > 0:
            f, df, dg = l1(tau)
        tol = 1e-13 * radius
        for _ in range(100):
            err = f - radius
            if abs(err) <= tol:
                break
            if err > 0:
                lo = tau
            else:
                hi = tau
            step = tau - err / df if df < 0 else np.inf
            if lo < step < hi:
                tau = step
            elif np.isfinite(hi):
                tau = (lo + hi) / 2
            else:
                tau = max(2 * tau, off_sorted[0] if off_sorted.size else 1.0, 1.0)
            if np.isfinite(hi) and hi - lo <= 1e-15 * max(1.0, hi):
                break
            f, df, dg = l1(tau)
    Wx = _soft(V, tau)
    Wx[np.diag_indices(d)] = dg
    out = X.copy()
    out[0, 0] = 1.0
    out[1:, 1:] = Wx
    if return_tau:
        return out, tau
    return out


def dual_bound(C, Y, sigma: int) -> float:
    """Lagrangian lower bound on the relaxation's optimum from a multiplier Y for X = Z.

    Splits tr(C W) = tr((C + Y) X) - tr(Y Z) and minimizes each term alone, adding
    constraints every feasible W already satisfies so both minima are finite:
    tr X = 1 + sigma on the PSD side, and |W_1j| <= 1, diag(W_x) >= 0 on the
    polytope side.  The polytope term then has a closed form.
    """
    d = C.shape[0] - 1
    lam = float(np.linalg.eigvalsh(_sym(C + Y))[0])
    Yx = Y[1:, 1:]
    off = float(np.abs(Yx - np.diag(np.diag(Yx))).max()) if d > 1 else 0.0
    poly = (-Y[0, 0] - 2.0 * float(np.abs(Y[0, 1:]).sum())
            + float(np.sort(-np.diag(Yx))[:sigma].sum()) - (sigma * sigma - sigma) * off)
    return (1 + sigma) * lam + poly


def _sym(A):
    return (A + A.T) / 2


# --- lifting and rounding -----------------------------------------------------

def lift(x) -> np.ndarray:
    w = np.concatenate([[1.0], as_vector(x)])
    return np.outer(w, w)


def extract_rank_one(W, inst: SilsInstance, tol: float = 1e-6, sdp_objective: Optional[float] = None,
                     params: Optional[SolverParams] = None) -> Optional[SparseSignVector]:
    params = params or SolverParams()
    W = np.asarray(W, dtype=float)
    lam = np.linalg.eigvalsh((W + W.T) / 2)[::-1]
    if lam[0] <= 0 or (lam.size > 1 and lam[1] / lam[0] > tol):
        return None
    col = W[1:, 0]
    r = np.clip(np.rint(col), -1, 1)
    if np.abs(col - r).max() > params.rounding_residue:
        return None
    x = SparseSignVector(r.astype(int))
    if len(x.support) != inst.sigma:
        return None
    if sdp_objective is None:
        sdp_objective = float(np.sum(gram_lift(inst) * W))
    if abs(objective(inst, x) - sdp_objective) > 10 * params.opt_tol:
        return None
    return x


# --- ADMM -----------------------------------------------------------------------

def solve_sdp(inst: SilsInstance, params: Optional[SolverParams] = None,
              trace_residuals: bool = False, state: Optional[tuple] = None) -> SdpSolution:
    """Two-block ADMM on the relaxation.

    The cost is divided by its largest entry before iterating, so ``rho`` is
    relative to the scale of the data; the reported objective is unscaled.
    Residuals are r = ||X - Z||_F and s = rho ||Z - Z_prev||_F in scaled units.
    Converged also requires tr(C Z) <= dual_bound + opt_tol, so the reported
    objective is a lower bound on the SILS optimum up to opt_tol.
    ``state`` continues a previous run on the same instance (see ``SdpSolution.state``).
    """
    params = params or SolverParams()
    C = gram_lift(inst)
    if not np.all(np.isfinite(C)):
        raise ValueError("NaN or inf in instance")
    scale = float(np.abs(C).max()) or 1.0
    Cs = C / scale
    sigma = inst.sigma
    d = inst.d
    tau = [None]
    rho = params.rho

    def proj(S):
        if params.projection == "dykstra":
            return project_polytope(S, sigma, params)
        out, tau[0] = project_polytope_exact(S, sigma, tau[0], return_tau=True)
        return out

    # start from the feasible point that spreads the trace evenly
    Z = np.zeros((d + 1, d + 1))
    Z[0, 0] = 1.0
    Z[np.arange(1, d + 1), np.arange(1, d + 1)] = sigma / d
    U = np.zeros_like(Z)
    if state is not None:
        Z, U, rho, tau[0] = state
        Z, U = Z.copy(), U.copy()
    r = s = np.inf
    history = []
    status = Status.MAXITER
    it = 0
    for it in range(1, params.max_iter + 1):
        X = project_psd(Z - U - Cs / rho)
        Z_prev = Z
        Z = proj(X + U)
        U = U + X - Z
        r = float(np.linalg.norm(X - Z))
        s = float(rho * np.linalg.norm(Z - Z_prev))
        if trace_residuals:
            history.append(max(r, s))
        if r <= params.feas_tol and s <= params.feas_tol:
            # residuals live in scaled units; also certify the objective to opt_tol
            bound = scale * dual_bound(Cs, rho * U, sigma)
            if float(np.sum(C * Z)) <= bound + params.opt_tol:
                status = Status.CONVERGED
                break
        if it % params.adapt_every == 0:
            if r > params.adapt_ratio * s:
                rho *= 2.0
                U /= 2.0
            elif s > params.adapt_ratio * r:
                rho /= 2.0
                U *= 2.0
    W = (Z + Z.T) / 2
    bound = scale * dual_bound(Cs, rho * U, sigma) if status is Status.CONVERGED else -np.inf
    sol = SdpSolution(W, float(np.sum(C * W)), r, s, it, status, rho, (Z, U, rho, tau[0]), bound)
    if trace_residuals:
        sol.history = np.array(history)
    return sol


def recover(inst: SilsInstance, params: Optional[SolverParams] = None):
    """Solve the relaxation and try to read off a rank-one solution."""
    params = params or SolverParams()
    sol = solve_sdp(inst, params)
    x = None
    p = params
    for k in range(params.refine_rounds + 1):
        if not sol.converged:
            break
        x = extract_rank_one(sol.W, inst, params.rank_one_tol, sol.objective, params)
        if x is not None or k == params.refine_rounds or not _rounds_cleanly(sol.W, inst, params):
            break
        p = replace(p, feas_tol=p.feas_tol / 10)
        total = sol.iterations
        sol = solve_sdp(inst, p, state=sol.state)
        sol.iterations += total
    return sol, x


def _rounds_cleanly(W, inst: SilsInstance, params: SolverParams) -> bool:
    col = W[1:, 0]
    r = np.clip(np.rint(col), -1, 1)
    return np.abs(col - r).max() <= params.rounding_residue and np.count_nonzero(r) == inst.sigma
