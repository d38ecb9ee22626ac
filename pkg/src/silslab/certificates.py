"""Dual certificates for the SDP relaxation and checkers for the sufficient
recovery conditions built on them.

Theorem families handled here (ids follow the report convention):

* ``F``: the KKT certificate itself (conditions F1-F4 plus uniqueness).
* ``A``: decomposition condition on the matrix Theta (general instances).
* ``B``: two-parameter condition (general instances).
* ``C``: low-coherence corollary of ``B``.
* ``D``: population-level condition for sub-Gaussian designs (heuristic:
  its absolute constants are unknown and default to 1).
* ``E``: ``A`` specialised to the linear model b = M z* + eps.

Numerical discipline: every ">= 0" test allows slack ``SLACK`` and every
strict inequality needs a margin above ``STRICT``.  A margin is always
reported as (right-hand side - left-hand side) so positive means "holds".
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .instance import GroundTruth, SilsInstance, as_vector, coherence, max_norm

SLACK = 1e-9
STRICT = 1e-9
PINV_CUTOFF = 1e-10
RECON_TOL = 1e-8
DELTA_GRID = (0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
MU2_POINTS = 20


class Check(NamedTuple):
    passed: bool
    margin: float


def _le(lhs: float, rhs: float) -> Check:
    m = float(rhs - lhs)
    return Check(bool(m >= -SLACK), m)


def _lt(lhs: float, rhs: float) -> Check:
    m = float(rhs - lhs)
    return Check(bool(m > STRICT), m)


VACUOUS = Check(True, float("inf"))


class CertificateError(ValueError):
    """Raised when a certificate cannot be assembled; ``report`` holds the margins."""

    def __init__(self, msg: str, report: "ConditionReport"):
        super().__init__(msg)
        self.report = report


@dataclass
class ConditionReport:
    theorem_id: str
    conditions: dict = field(default_factory=dict)
    witness: Optional[dict] = None
    grid: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    heuristic: bool = False

    @property
    def passed(self) -> bool:
        return bool(self.conditions) and all(c.passed for c in self.conditions.values())

    def failures(self) -> list:
        return [k for k, c in self.conditions.items() if not c.passed]

    def to_text(self) -> str:
        lines = [f"theorem {self.theorem_id}", f"passed {int(self.passed)}"]
        if self.heuristic:
            lines.append("heuristic 1")
        for k, c in self.conditions.items():
            lines.append(f"condition {k} {'pass' if c.passed else 'fail'} {c.margin:.10g}")
        if self.witness:
            for k, v in self.witness.items():
                if np.isscalar(v):
                    lines.append(f"witness {k} {float(v):.10g}")
        for k, v in self.values.items():
            if np.isscalar(v):
                lines.append(f"value {k} {float(v):.10g}")
        lines.append(f"grid_points {len(self.grid)}")
        for note in self.notes:
            lines.append(f"note {note}")
        return "\n".join(lines) + "\n"


@dataclass
class DualData:
    S: np.ndarray
    y_star: np.ndarray
    Y11_star: float
    theta: float
    mu3_star: float
    delta: float
    mu2_star: float


@dataclass
class DualCertificate:
    dual: DualData
    p_star: np.ndarray
    Yx_star: np.ndarray
    H: np.ndarray
    nu: float
    conditions: dict = field(default_factory=dict)
    report: Optional[ConditionReport] = None


# --- shared quantities --------------------------------------------------------

def _sym(A):
    return (A + A.T) / 2


def _eigmin(A) -> float:
    return float(np.linalg.eigvalsh(_sym(A))[0]) if A.size else float("inf")


def _pinv_psd(A, cutoff: float = PINV_CUTOFF) -> np.ndarray:
    """Pseudo-inverse of a symmetric matrix, dropping eigenvalues below cutoff * lambda_max."""
    lam, V = np.linalg.eigh(_sym(A))
    top = np.abs(lam).max() if lam.size else 0.0
    keep = np.abs(lam) > cutoff * top
    return (V[:, keep] / lam[keep]) @ V[:, keep].T


def _sign_vector(x_star, d: int, sigma: int) -> np.ndarray:
    x = as_vector(x_star)
    if x.shape != (d,):
        raise ValueError(f"x_star has length {x.shape[0]}, expected {d}")
    if not np.all(np.isin(x, (-1.0, 0.0, 1.0))):
        raise ValueError("x_star must have entries in {-1, 0, 1}")
    if np.count_nonzero(x) != sigma:
        raise ValueError(f"x_star has {np.count_nonzero(x)} nonzeros, expected sigma = {sigma}")
    return x


class _Setup:
    """Everything that depends only on (M, b, x*)."""

    def __init__(self, inst: SilsInstance, x_star):
        self.inst = inst
        self.sigma = inst.sigma
        self.x = _sign_vector(x_star, inst.d, inst.sigma)
        self.K = _sym(inst.M.T @ inst.M / inst.n)
        self.y = -inst.M.T @ inst.b / inst.n
        self.S = np.flatnonzero(self.x)
        self.Sc = np.flatnonzero(self.x == 0)
        S, Sc = self.S, self.Sc
        self.xS = self.x[S]
        self.yS, self.ySc = self.y[S], self.y[Sc]
        self.KSS = self.K[np.ix_(S, S)]
        self.KScS = self.K[np.ix_(Sc, S)]
        self.KScSc = self.K[np.ix_(Sc, Sc)]
        self.Y11 = float(-(self.yS @ self.xS))
        self.lam_min = _eigmin(self.KSS)
        self.base = float(np.min((-self.yS - self.KSS @ self.xS) / self.xS))
        ny = float(np.linalg.norm(self.yS))
        self.cos_theta = self.Y11 / (np.sqrt(self.sigma) * ny) if ny > 0 else 0.0
        self.ySc_inf = float(np.abs(self.ySc).max()) if Sc.size else 0.0
        self.H0 = np.eye(self.sigma) - np.outer(self.xS, self.xS) / self.sigma

    @property
    def theta(self) -> float:
        return float(np.arccos(np.clip(self.cos_theta, -1.0, 1.0)))

    def require_y11(self):
        if not self.Y11 > 0:
            raise ValueError(f"Y11* = {self.Y11:.6g} <= 0: no certificate of this form exists")

    def mu3(self, delta: float) -> float:
        return (self.lam_min - delta + self.base) / self.sigma

    def mu2_upper(self, delta: float) -> float:
        return -self.lam_min + delta

    def mu2_grid(self, delta: float) -> np.ndarray:
        hi = self.mu2_upper(delta)
        return np.linspace(-self.lam_min - 2.0, hi, MU2_POINTS)

    def tan2_over_sigma(self) -> float:
        # (1 - cos^2) / (sigma cos^2); equals f_n(y_S)^2
        c2 = self.cos_theta ** 2
        return (1.0 - c2) / (self.sigma * c2)


def _grid_search(theorem_id: str, setup: _Setup, evaluate: Callable, delta_grid, mu2_grid,
                 fixed: Optional[dict] = None) -> ConditionReport:
    """Evaluate conditions on the (delta, mu2) grid and keep the best point.

    Best = passing points first, then the largest minimum margin; ties go to
    the earlier grid point.  ``report.grid`` keeps (delta, mu2, min margin, passed)
    for every point.
    """
    report = ConditionReport(theorem_id)
    fixed = fixed or {}
    best_key, best = None, None
    for delta in delta_grid:
        delta = float(delta)
        if not delta > 0:
            raise ValueError("delta must be positive")
        mus = setup.mu2_grid(delta) if mu2_grid is None else np.asarray(mu2_grid, dtype=float)
        for mu2 in mus:
            conds, extra = evaluate(delta, float(mu2))
            conds = {**fixed, **conds}
            ok = all(c.passed for c in conds.values())
            m = min(c.margin for c in conds.values())
            report.grid.append((delta, float(mu2), m, ok))
            key = (ok, m)
            if best_key is None or key > best_key:
                best_key, best = key, (delta, float(mu2), conds, extra)
    delta, mu2, conds, extra = best
    report.conditions = conds
    report.values.update({"delta": delta, "mu2_star": mu2, "mu3_star": setup.mu3(delta)})
    report.values.update({k: v for k, v in extra.items() if np.isscalar(v)})
    if report.passed:
        report.witness = {"delta": delta, "mu2_star": mu2, "mu3_star": setup.mu3(delta), **extra}
    return report


def _precondition_report(theorem_id: str, Y11: float) -> Optional[ConditionReport]:
    if Y11 > 0:
        return None
    rep = ConditionReport(theorem_id, {"Y11_positive": Check(False, float(Y11))})
    rep.notes.append("precondition Y11* > 0 fails")
    return rep


# --- dual data and the certificate ---------------------------------------------

def dual_data(inst: SilsInstance, x_star, delta: float, mu2_star: float) -> DualData:
    st = _Setup(inst, x_star)
    st.require_y11()
    return DualData(S=st.S, y_star=st.y, Y11_star=st.Y11, theta=st.theta,
                    mu3_star=st.mu3(delta), delta=float(delta), mu2_star=float(mu2_star))


def build_p_star(dual: DualData, inst: SilsInstance, x_star) -> np.ndarray:
    x = _sign_vector(x_star, inst.d, inst.sigma)
    S = dual.S
    if np.any(x[S] == 0) or not np.array_equal(np.flatnonzero(x), S):
        raise ValueError("x_star support does not match the dual data")
    K_SS = _sym(inst.M.T @ inst.M / inst.n)[np.ix_(S, S)]
    xS = x[S]
    rhs = -K_SS @ xS - inst.sigma * dual.mu3_star * xS - dual.y_star[S] - dual.mu2_star * xS
    p = np.zeros(inst.d)
    p[S] = rhs / xS
    return p


def _assemble(st: _Setup, dual: DualData, p: np.ndarray, Y_ScS: np.ndarray,
              Y_ScSc_fn: Callable) -> tuple:
    S, Sc = st.S, st.Sc
    d = st.inst.d
    Y = np.zeros((d, d))
    Y_SS = st.KSS + dual.mu3_star * np.outer(st.xS, st.xS) + np.diag(p[S] + dual.mu2_star)
    Y[np.ix_(S, S)] = Y_SS
    Y[np.ix_(Sc, S)] = Y_ScS
    Y[np.ix_(S, Sc)] = Y_ScS.T
    H_SS = Y_SS - np.outer(st.yS, st.yS) / st.Y11
    H_ScS = Y_ScS - np.outer(st.ySc, st.yS) / st.Y11
    Y[np.ix_(Sc, Sc)] = _sym(Y_ScSc_fn(H_SS, H_ScS))
    H = Y - np.outer(st.y, st.y) / st.Y11
    return _sym(Y), _sym(H)


def _b_conditions(st: _Setup, delta: float, mu2: float) -> tuple:
    mu3 = st.mu3(delta)
    conds = {"mu2_range": _le(mu2, st.mu2_upper(delta)), "mu3_nonneg": _le(0.0, mu3)}
    # the (S^c, S) block is the one that enters F3
    b1 = max_norm(st.KScS + np.outer(st.ySc, st.xS) / st.sigma)
    conds["B1"] = _le(b1, mu3)
    if st.Sc.size:
        b2 = (max_norm(st.KScSc + mu2 * np.eye(st.Sc.size))
              + st.ySc_inf ** 2 / st.Y11
              + st.tan2_over_sigma() * st.ySc_inf ** 2 / delta)
    else:
        b2 = 0.0
    conds["B2"] = _lt(b2, mu3)
    return conds, {"B1_lhs": b1, "B2_lhs": b2}


def build_certificate_general(inst: SilsInstance, x_star, delta: float, mu2_star: float) -> DualCertificate:
    st = _Setup(inst, x_star)
    st.require_y11()
    conds, extra = _b_conditions(st, delta, mu2_star)
    if not all(c.passed for c in conds.values()):
        rep = ConditionReport("B", conds, values=extra)
        raise CertificateError(f"B-conditions fail: {rep.failures()}", rep)
    dual = dual_data(inst, x_star, delta, mu2_star)
    p = build_p_star(dual, inst, x_star)
    nu = conds["B2"].margin
    Y_ScS = -np.outer(st.ySc, st.xS) / st.sigma

    def lower_right(H_SS, H_ScS):
        return (nu * np.eye(st.Sc.size) + np.outer(st.ySc, st.ySc) / st.Y11
                + H_ScS @ _pinv_psd(H_SS) @ H_ScS.T)

    Y, H = _assemble(st, dual, p, Y_ScS, lower_right)
    return _finish(DualCertificate(dual, p, Y, H, nu), inst, x_star)


def theta_matrix(inst: SilsInstance, x_star, delta: float, mu2_star: float) -> np.ndarray:
    """The matrix Theta of the decomposition condition, written with y* = -M^T b / n."""
    st = _Setup(inst, x_star)
    st.require_y11()
    return _theta(st, delta, mu2_star)


def _theta(st: _Setup, delta: float, mu2: float) -> np.ndarray:
    P = st.KScS.T - np.outer(st.yS, st.ySc) / st.Y11
    T = (st.KScSc + mu2 * np.eye(st.Sc.size) - np.outer(st.ySc, st.ySc) / st.Y11
         - P.T @ st.H0 @ P / delta)
    return _sym(T)


def _decomposition_checks(theta, theta1, theta2, mu3: float) -> dict:
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    if theta1.shape != theta.shape or theta2.shape != theta.shape:
        return {"reconstruction": Check(False, float("-inf"))}
    resid = float(np.linalg.norm(theta1 + theta2 - theta))
    lmin = _eigmin(theta1)
    t2 = max_norm(theta2)
    return {
        "reconstruction": _le(resid, RECON_TOL),
        "theta1_psd": _le(0.0, lmin),
        "theta2_maxnorm": _le(t2, mu3),
        # Theta1 > 0 with |Theta2| <= mu3, or Theta1 >= 0 with |Theta2| < mu3
        "strict": Check(bool(lmin > STRICT or mu3 - t2 > STRICT), float(max(lmin, mu3 - t2))),
    }


def build_certificate_sparse(inst: SilsInstance, x_star, delta: float, mu2_star: float,
                             theta1, theta2) -> DualCertificate:
    st = _Setup(inst, x_star)
    st.require_y11()
    mu3 = st.mu3(delta)
    theta = _theta(st, delta, mu2_star)
    checks = _decomposition_checks(theta, theta1, theta2, mu3)
    checks["mu2_range"] = _le(mu2_star, st.mu2_upper(delta))
    hard = ("reconstruction", "theta1_psd", "theta2_maxnorm", "mu2_range")
    if not all(checks[k].passed for k in hard if k in checks):
        rep = ConditionReport("A", checks)
        raise CertificateError(f"decomposition rejected: {rep.failures()}", rep)
    theta1 = np.asarray(theta1, dtype=float)
    dual = dual_data(inst, x_star, delta, mu2_star)
    p = build_p_star(dual, inst, x_star)
    nu = mu3 - max_norm(theta2)
    w = st.KScS @ st.xS / st.sigma - st.ySc * (st.yS @ st.xS) / (st.Y11 * st.sigma)
    Y_ScS = st.KScS - np.outer(w, st.xS)
    P = st.KScS.T - np.outer(st.yS, st.ySc) / st.Y11

    def lower_right(H_SS, H_ScS):
        return (theta1 + nu * np.eye(st.Sc.size) + np.outer(st.ySc, st.ySc) / st.Y11
                + P.T @ st.H0 @ P / delta)

    Y, H = _assemble(st, dual, p, Y_ScS, lower_right)
    return _finish(DualCertificate(dual, p, Y, H, nu), inst, x_star)


def _finish(cert: DualCertificate, inst, x_star) -> DualCertificate:
    rep = check_certificate(cert, inst, x_star)
    cert.report = rep
    cert.conditions = {k: rep.conditions[k] for k in ("F1", "F2", "F3", "F4", "lambda2H")}
    return cert


def check_certificate(cert: DualCertificate, inst: SilsInstance, x_star) -> ConditionReport:
    st = _Setup(inst, x_star)
    dual = cert.dual
    S, Sc = st.S, st.Sc
    H, Y = cert.H, cert.Yx_star
    H_SS = H[np.ix_(S, S)]
    H_ScS = H[np.ix_(Sc, S)]
    H_ScSc = H[np.ix_(Sc, Sc)]
    D = st.K - Y
    mu3 = dual.mu3_star
    conds = {}
    if Sc.size:
        schur = H_ScSc - H_ScS @ _pinv_psd(H_SS) @ H_ScS.T
        conds["F1"] = _le(0.0, _eigmin(schur))
        conds["F2"] = _le(float(np.abs(H_ScS @ st.xS).max()), 0.0)
        conds["F3"] = _le(max_norm(D[np.ix_(Sc, S)]), mu3)
        conds["F4"] = _le(max_norm(D[np.ix_(Sc, Sc)] + dual.mu2_star * np.eye(Sc.size)), mu3)
    else:
        conds.update(F1=VACUOUS, F2=VACUOUS, F3=VACUOUS, F4=VACUOUS)
    conds["p_nonneg"] = _le(0.0, float(cert.p_star.min()))
    conds["mu3_nonneg"] = _le(0.0, mu3)
    lam_ss = np.linalg.eigvalsh(_sym(H_SS))
    conds["lambda2_HSS"] = _le(dual.delta, float(lam_ss[1])) if lam_ss.size > 1 else VACUOUS
    lam = np.linalg.eigvalsh(_sym(H))
    conds["lambda2H"] = Check(bool(lam[1] > STRICT), float(lam[1])) if lam.size > 1 else VACUOUS
    rep = ConditionReport("F", conds)
    sub = D + np.diag(cert.p_star + dual.mu2_star)
    rep.values["subgradient_residual"] = max_norm(sub[np.ix_(S, S)] + mu3 * np.outer(st.xS, st.xS))
    rep.values["HSS_null_residual"] = float(np.abs(H_SS @ st.xS).max())
    rep.values["H_residual"] = max_norm(H - Y + np.outer(dual.y_star, dual.y_star) / dual.Y11_star)
    rep.values["nu"] = cert.nu
    if rep.passed:
        rep.witness = {"delta": dual.delta, "mu2_star": dual.mu2_star, "mu3_star": mu3}
    return rep


# --- theorem checkers -----------------------------------------------------------

def check_thm_general(inst: SilsInstance, x_star, delta_grid: Sequence = DELTA_GRID,
                      mu2_grid: Optional[Sequence] = None) -> ConditionReport:
    st = _Setup(inst, x_star)
    pre = _precondition_report("B", st.Y11)
    if pre:
        return pre
    rep = _grid_search("B", st, lambda dl, m2: _b_conditions(st, dl, m2), delta_grid, mu2_grid)
    rep.values.update(Y11_star=st.Y11, cos_theta=st.cos_theta)
    return rep


def check_certificate_grid(inst: SilsInstance, x_star, delta_grid: Sequence = DELTA_GRID,
                           mu2_grid: Optional[Sequence] = None) -> ConditionReport:
    """Build the general certificate at every grid point and check F1-F4 directly."""
    st = _Setup(inst, x_star)
    pre = _precondition_report("F", st.Y11)
    if pre:
        return pre

    def evaluate(delta, mu2):
        try:
            cert = build_certificate_general(inst, x_star, delta, mu2)
        except CertificateError as exc:
            # no certificate of this form here; surface the failing construction conditions
            return exc.report.conditions, {}
        return cert.report.conditions, {k: v for k, v in cert.report.values.items() if np.isscalar(v)}

    return _grid_search("F", st, evaluate, delta_grid, mu2_grid)


def low_coherence_deltas(inst: SilsInstance, x_star, delta: float) -> dict:
    """Delta_1 and Delta_2 of the low-coherence corollary.

    ``Delta2`` is the value under which the corollary's proof goes through;
    ``Delta2_printed`` keeps the sign and missing 1/delta of the displayed formula.
    """
    st = _Setup(inst, x_star)
    st.require_y11()
    return _deltas(st, delta)


def _deltas(st: _Setup, delta: float) -> dict:
    m = float(np.min(-st.yS / st.xS))
    r2 = st.ySc_inf ** 2
    tan2 = (1.0 - st.cos_theta ** 2) / st.cos_theta ** 2
    return {
        "Delta1": m - st.ySc_inf,
        "Delta2": m - st.sigma * r2 / st.Y11 - tan2 * r2 / delta,
        "Delta2_printed": m - st.sigma * r2 / st.Y11 + tan2 * r2,
    }


def check_cor_low_coherence(inst: SilsInstance, x_star, Delta: Optional[float] = None,
                            delta_grid: Sequence = DELTA_GRID,
                            mu2_grid: Optional[Sequence] = None) -> ConditionReport:
    """Low-coherence conditions C1-C3.

    With ``Delta=None`` each grid point uses the largest admissible Delta,
    namely the left-hand side of C1.
    """
    col = np.sqrt((inst.M ** 2).sum(axis=0))
    if col.max() > 1.0 + 1e-12:
        raise ValueError(f"columns of M must have norm <= 1 (max is {col.max():.6g})")
    if Delta is not None and not Delta > 0:
        raise ValueError("Delta must be positive")
    st = _Setup(inst, x_star)
    pre = _precondition_report("C", st.Y11)
    if pre:
        return pre
    mu = coherence(inst.M.T @ inst.M)
    kx = float(np.abs(st.KSS @ st.xS).max())
    diag_sc = np.diag(st.KScSc)

    def evaluate(delta, mu2):
        dd = _deltas(st, delta)
        c1 = st.lam_min - delta - kx + min(dd["Delta1"], dd["Delta2"])
        D = c1 if Delta is None else Delta
        conds = {"mu2_range": _le(mu2, st.mu2_upper(delta)),
                 "Delta_positive": _lt(0.0, D),
                 "C1": _le(D, c1)}
        c2 = float(np.abs(diag_sc + mu2).max()) if diag_sc.size else 0.0
        conds["C2"] = _lt(c2, D / st.sigma)
        conds["C3"] = _lt(mu, D / st.sigma)
        return conds, {**dd, "Delta": D, "C1_lhs": c1, "C2_lhs": c2}

    rep = _grid_search("C", st, evaluate, delta_grid, mu2_grid)
    rep.values["coherence"] = mu
    return rep


def check_thm_sparse(inst: SilsInstance, x_star, delta_grid: Sequence = DELTA_GRID,
                     mu2_grid: Optional[Sequence] = None, decomposition=None) -> ConditionReport:
    """Decomposition conditions A1-A2 on a general instance.

    ``decomposition`` may be a fixed pair (Theta1, Theta2), a callable
    ``(delta, mu2) -> (Theta1, Theta2)``, or None for the shift split
    Theta1 = Theta + tI, Theta2 = -tI with t = max(0, -lambda_min(Theta)).
    """
    st = _Setup(inst, x_star)
    pre = _precondition_report("A", st.Y11)
    if pre:
        return pre
    a1 = float(np.abs(st.KScS @ st.xS + st.ySc).max()) / st.sigma if st.Sc.size else 0.0

    def evaluate(delta, mu2):
        mu3 = st.mu3(delta)
        theta = _theta(st, delta, mu2)
        t1, t2 = _split(theta, decomposition, delta, mu2)
        conds = {"mu2_range": _le(mu2, st.mu2_upper(delta)), "mu3_nonneg": _le(0.0, mu3),
                 "A1": _le(a1, mu3)}
        conds.update({f"A2_{k}": v for k, v in _decomposition_checks(theta, t1, t2, mu3).items()})
        return conds, {"A1_lhs": a1, "theta_lambda_min": _eigmin(theta)}

    return _grid_search("A", st, evaluate, delta_grid, mu2_grid)


def shift_decomposition(theta) -> tuple:
    t = max(0.0, -_eigmin(theta)) if theta.size else 0.0
    k = theta.shape[0]
    return theta + t * np.eye(k), -t * np.eye(k)


def _split(theta, decomposition, delta, mu2):
    if decomposition is None:
        return shift_decomposition(theta)
    if callable(decomposition):
        return decomposition(delta, mu2)
    return decomposition


def theta_sparse_matrix(inst: SilsInstance, truth: GroundTruth, delta: float, mu2_star: float) -> np.ndarray:
    """Theta written through the linear-model pieces (M^T M / n, M^T eps / n, z*)."""
    z = _sign_vector(truth.z_star, inst.d, inst.sigma)
    S, Sc = np.flatnonzero(z), np.flatnonzero(z == 0)
    zS = z[S]
    K = _sym(inst.M.T @ inst.M / inst.n)
    e = inst.M.T @ as_vector(truth.eps) / inst.n
    eSc = e[Sc]
    y = -inst.M.T @ inst.b / inst.n
    yS = y[S]
    Y11 = float(-(yS @ zS))
    if not Y11 > 0:
        raise ValueError("Y11* <= 0")
    sig = inst.sigma
    H0 = np.eye(sig) - np.outer(zS, zS) / sig
    KScS = K[np.ix_(Sc, S)]
    w = KScS @ zS
    J = np.eye(sig) + np.outer(zS, yS) / Y11
    Bm = J @ H0 @ J.T / delta + np.outer(zS, zS) / Y11
    cross = KScS @ J @ H0 @ yS / (delta * Y11)
    T = (K[np.ix_(Sc, Sc)] + mu2_star * np.eye(Sc.size)
         - np.outer(eSc, eSc) / Y11
         - (yS @ H0 @ yS) / (delta * Y11 ** 2) * np.outer(eSc, eSc)
         - np.outer(eSc, w) / Y11 - np.outer(w, eSc) / Y11
         - np.outer(cross, eSc) - np.outer(eSc, cross)
         - KScS @ Bm @ KScS.T)
    return _sym(T)


def check_thm_sparse_recovery(inst: SilsInstance, truth: GroundTruth, delta_grid: Sequence = DELTA_GRID,
                              mu2_grid: Optional[Sequence] = None, decomposition=None) -> ConditionReport:
    z = _sign_vector(truth.z_star, inst.d, inst.sigma)
    st = _Setup(inst, z)
    pre = _precondition_report("E", st.Y11)
    if pre:
        return pre
    e = inst.M.T @ as_vector(truth.eps) / inst.n
    e1 = float(np.abs(e[st.Sc]).max()) / st.sigma if st.Sc.size else 0.0
    base_e = float(np.min(e[st.S] / st.xS))
    worst = [0.0]

    def evaluate(delta, mu2):
        mu3 = (st.lam_min - delta + base_e) / st.sigma
        theta = theta_sparse_matrix(inst, truth, delta, mu2)
        worst[0] = max(worst[0], float(np.linalg.norm(theta - _theta(st, delta, mu2))))
        t1, t2 = _split(theta, decomposition, delta, mu2)
        conds = {"mu2_range": _le(mu2, st.mu2_upper(delta)), "mu3_nonneg": _le(0.0, mu3),
                 "E1": _le(e1, mu3)}
        conds.update({f"E2_{k}": v for k, v in _decomposition_checks(theta, t1, t2, mu3).items()})
        return conds, {"E1_lhs": e1, "theta_lambda_min": _eigmin(theta)}

    rep = _grid_search("E", st, evaluate, delta_grid, mu2_grid)
    rep.values["theta_identity_residual"] = worst[0]
    rep.values["mu3_identity_residual"] = abs(base_e - st.base)
    return rep


# --- population-level (sub-Gaussian design) conditions ----------------------------

@dataclass
class StochasticParams:
    n: int
    d: Optional[int] = None
    L: float = 1.0
    rho: float = 0.0
    c1: float = 1.0
    B: float = 1.0
    B1: float = 1.0
    B2: float = 1.0
    delta: Optional[float] = None
    mu2_hat: Optional[float] = None


def fn_value(x, xS) -> float:
    """sqrt(|x|^2 / (x^T xS)^2 - 1/sigma); the radicand is >= 0 by Cauchy-Schwarz."""
    x, xS = np.asarray(x, float), np.asarray(xS, float)
    t = float(x @ xS)
    return float(np.sqrt(max(0.0, (x @ x) / t ** 2 - 1.0 / xS.size)))


def fn_grad(x, xS) -> np.ndarray:
    x, xS = np.asarray(x, float), np.asarray(xS, float)
    t = float(x @ xS)
    f = fn_value(x, xS)
    return (x * t - xS * (x @ x)) / (t ** 3 * f)


def fn_grad_norm(x, xS) -> float:
    """Closed form sqrt(sigma) |x| / (x^T xS)^2 of the gradient norm."""
    x, xS = np.asarray(x, float), np.asarray(xS, float)
    return float(np.sqrt(xS.size) * np.linalg.norm(x) / (x @ xS) ** 2)


def check_thm_stochastic(cov, z_star, x_star, sigma: int, params: StochasticParams,
                         delta_grid: Sequence = DELTA_GRID) -> ConditionReport:
    """Population conditions D1-D3.  Heuristic: the concentration constants are guesses."""
    Sig = _sym(np.asarray(cov, dtype=float))
    d = Sig.shape[0] if params.d is None else params.d
    z = as_vector(z_star)
    x = _sign_vector(x_star, Sig.shape[0], sigma)
    n, L = params.n, params.L
    S, Sc = np.flatnonzero(x), np.flatnonzero(x == 0)
    xS = x[S]
    yh = -Sig @ z
    yS, ySc = yh[S], yh[Sc]
    Y11 = float(-(yS @ xS))
    pre = _precondition_report("D", Y11)
    if pre:
        pre.heuristic = True
        return pre
    lnd = np.log(d)
    lam_n = params.B2 * L * np.sqrt((params.rho ** 2 + L ** 2 * (z @ z)) * lnd / n)
    conc = params.B * L ** 2 * np.sqrt(lnd / n)
    SSS = Sig[np.ix_(S, S)]
    lam_min = _eigmin(SSS)
    base = float(np.min((-yS - SSS @ xS) / xS))
    slack_ss = params.c1 * L * np.sqrt(sigma / n)
    fval = fn_value(yS, xS)
    grad_norm = fn_grad_norm(yS, xS)
    # D1 asks f_n to be (ell_n / sqrt(sigma))-Lipschitz, so ell_n = sqrt(sigma) * |grad f_n|
    ell = np.sqrt(sigma) * grad_norm
    ySc_inf = float(np.abs(ySc).max()) if Sc.size else 0.0
    d2_lhs = (max_norm(Sig[np.ix_(Sc, S)] + np.outer(ySc, xS) / sigma) + conc + lam_n / sigma
              if Sc.size else lam_n / sigma)

    def mu3_hat(delta):
        return (lam_min - delta + base - lam_n - params.B1 * L ** 2 * np.sqrt(sigma * lnd / n)
                - slack_ss) / sigma

    class _Shim:
        # lets the shared grid search use the population bound on mu2
        def mu2_grid(self, delta):
            hi = -lam_min - slack_ss + delta
            return np.linspace(hi - 2.0, hi, MU2_POINTS)

        def mu3(self, delta):
            return mu3_hat(delta)

    def evaluate(delta, mu2):
        m3 = mu3_hat(delta)
        conds = {"D1": Check(bool(np.isfinite(ell)), float(ell)),
                 "D2": _le(d2_lhs, m3),
                 "mu2_range": _le(mu2, -lam_min - slack_ss + delta)}
        denom = Y11 - sigma * lam_n
        gamma = (fval + ell * lam_n) ** 2 * (ySc_inf + lam_n) ** 2 / delta
        gamma_printed = gamma * delta
        if denom > 0:
            lhs = (max_norm(Sig[np.ix_(Sc, Sc)] + mu2 * np.eye(Sc.size)) + conc
                   + (ySc_inf + lam_n) ** 2 / denom + gamma) if Sc.size else 0.0
            conds["D3"] = _le(lhs, m3)
        else:
            lhs = float("inf")
            conds["D3"] = Check(False, float("-inf"))
        return conds, {"D2_lhs": d2_lhs, "D3_lhs": lhs, "gamma_n": gamma,
                       "gamma_n_printed": gamma_printed}

    deltas = delta_grid if params.delta is None else [params.delta]
    mus = None if params.mu2_hat is None else [params.mu2_hat]
    rep = _grid_search("D", _Shim(), evaluate, deltas, mus)
    rep.heuristic = True
    rep.values.update(lambda_n=lam_n, ell_n=ell, f_n=fval, grad_norm=grad_norm,
                      Y11_hat=Y11, Y11_hat_over_sigma=Y11 / sigma,
                      cos_theta_hat=Y11 / (np.sqrt(sigma) * np.linalg.norm(yS)))
    rep.notes.append("D1 uses the gradient norm at the population point as the Lipschitz constant")
    rep.notes.append("concentration constants c1, B, B1, B2 are user guesses")
    return rep


# --- explicit decomposition for the high-coherence model ------------------------

@dataclass
class Model2Decomposition:
    theta1: np.ndarray
    theta2: np.ndarray
    constants: dict
    valid: bool
    checks: dict = field(default_factory=dict)
    delta: float = 1.0
    mu2_star: float = 0.0
    pieces: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.theta1, self.theta2, self.constants, self.valid))


def model2_default_parameters(inst: SilsInstance, truth: GroundTruth) -> tuple:
    """(delta, mu2*) = (1 + max(lambda_min(K_SS) - 1 - c'', 0), -c'')."""
    cpp = truth.model_params[2]
    S = np.flatnonzero(truth.z_star)
    K_SS = _sym(inst.M.T @ inst.M / inst.n)[np.ix_(S, S)]
    return 1.0 + max(_eigmin(K_SS) - 1.0 - cpp, 0.0), -cpp


def model2_theta_decomposition(inst: SilsInstance, truth: GroundTruth, delta: Optional[float] = None,
                               mu2_star: Optional[float] = None, C8: float = 1.0,
                               c_tilde: float = 0.01, c_check: float = 0.01) -> Model2Decomposition:
    if truth.m1 is None or truth.model_params is None:
        raise ValueError("the decomposition needs the M = M1 + M2 split and (c, c', c'')")
    _, cp, _ = truth.model_params
    dflt = model2_default_parameters(inst, truth)
    delta = dflt[0] if delta is None else float(delta)
    mu2_star = dflt[1] if mu2_star is None else float(mu2_star)
    z = _sign_vector(truth.z_star, inst.d, inst.sigma)
    st = _Setup(inst, z)
    st.require_y11()
    n, d, sig = inst.n, inst.d, inst.sigma
    S, Sc = st.S, st.Sc
    zS, yS, Y11 = st.xS, st.yS, st.Y11
    M1 = np.asarray(truth.m1, dtype=float)
    M2 = inst.M - M1
    # M1 restricted to S^c has identical columns; average them against roundoff
    m = M1[:, Sc].mean(axis=1)
    u = M1[:, S].T @ m / n
    c1 = float(m @ m) / n
    v = M2[:, Sc].T @ m / n
    G = M2[:, Sc].T @ M1[:, S] / n
    K2 = M2[:, Sc].T @ M2[:, Sc] / n
    e = (inst.M.T @ as_vector(truth.eps) / n)[Sc]
    one = np.ones(Sc.size)
    H0 = st.H0
    J = np.eye(sig) + np.outer(zS, yS) / Y11
    B = J @ H0 @ J.T / delta + np.outer(zS, zS) / Y11
    c_hat = float(u @ B @ u)
    c_bar = cp * sig - c_hat - C8 * sig * np.sqrt(np.log(d) / n) - c_tilde - c_check
    constants = {"c_bar": c_bar, "c_hat": c_hat, "c_tilde": c_tilde, "c_check": c_check,
                 "c1": c1, "C8": C8}
    if not c_bar > 0:
        raise ValueError(f"c_bar = {c_bar:.6g} <= 0: decomposition unavailable at this size")
    uz = float(u @ zS)
    g = G @ zS
    Gbu = G @ B @ u
    K_ScS = st.KScS
    cross = K_ScS @ J @ H0 @ yS / (delta * Y11)
    wB = np.sqrt(c_tilde) * one - uz / (Y11 * np.sqrt(c_tilde)) * e
    q = np.sqrt(c_bar) * one - Gbu / np.sqrt(c_bar)
    r = np.sqrt(c_check) * one + v / np.sqrt(c_check)
    P = {
        "theta2_A": -np.outer(e, e) / Y11,
        "theta1_B": np.outer(wB, wB),
        "theta2_B": (-(np.outer(e, g) + np.outer(g, e)) / Y11
                     - uz ** 2 / (Y11 ** 2 * c_tilde) * np.outer(e, e)),
        "theta2_C": -(np.outer(cross, e) + np.outer(e, cross)),
        "theta2_D": -(yS @ H0 @ yS) / (delta * Y11 ** 2) * np.outer(e, e),
        "theta1_E": (c_hat - u @ B @ u) * np.outer(one, one) + np.outer(q, q),
        "theta2_E": -np.outer(Gbu, Gbu) / c_bar - G @ B @ G.T,
        "theta1_F": (c1 - c_bar - c_hat - c_tilde - c_check) * np.outer(one, one) + np.outer(r, r),
        "theta2_F": -np.outer(v, v) / c_check + K2 + mu2_star * np.eye(Sc.size),
    }
    theta1 = _sym(sum(val for k, val in P.items() if k.startswith("theta1")))
    theta2 = _sym(sum(val for k, val in P.items() if k.startswith("theta2")))
    theta = _theta(st, delta, mu2_star)
    mu3 = st.mu3(delta)
    checks = _decomposition_checks(theta, theta1, theta2, mu3)
    valid = all(checks[k].passed for k in ("reconstruction", "theta1_psd", "theta2_maxnorm"))
    return Model2Decomposition(theta1, theta2, constants, bool(valid), checks, delta, mu2_star, P)
