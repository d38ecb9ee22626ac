"""Problem data, objective evaluation, matrix utilities and recovery metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ZERO_TOL = 1e-4


@dataclass(frozen=True)
class SilsInstance:
    """The triple (M, b, sigma) of a sparse integer least-squares problem."""

    M: np.ndarray
    b: np.ndarray
    sigma: int

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if M.ndim != 2:
            raise ValueError("M must be a 2-d array")
        n, d = M.shape
        if n < 1 or d < 1:
            raise ValueError("M must have at least one row and column")
        if b.shape != (n,):
            raise ValueError(f"b has length {b.shape[0]}, expected {n}")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(b))):
            raise ValueError("instance entries must be finite")
        sigma = int(self.sigma)
        if sigma != self.sigma or not 1 <= sigma <= d:
            raise ValueError(f"sigma must be an integer in [1, {d}], got {self.sigma}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def d(self) -> int:
        return self.M.shape[1]


@dataclass
class GroundTruth:
    """Linear-model data b = M z_star + eps attached to generated instances.

    ``m1`` and ``model_params`` are only set for Model 2 instances; they hold
    the rank-structured part of M and (c, c', c'') respectively.
    """

    z_star: np.ndarray
    eps: np.ndarray
    cov: Optional[np.ndarray] = None
    noise_param: float = 0.0
    m1: Optional[np.ndarray] = None
    model_params: Optional[tuple] = None


@dataclass(frozen=True)
class SparseSignVector:
    x: np.ndarray
    support: tuple = field(default=())

    def __post_init__(self):
        x = np.asarray(self.x)
        if not np.all(np.isin(x, (-1, 0, 1))):
            raise ValueError("entries must lie in {-1, 0, 1}")
        x = x.astype(int)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "support", tuple(int(i) for i in np.flatnonzero(x)))

    @classmethod
    def from_array(cls, x) -> "SparseSignVector":
        return cls(np.rint(np.asarray(x, dtype=float)).astype(int))

    def __len__(self):
        return self.x.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SparseSignVector):
            return NotImplemented
        return np.array_equal(self.x, other.x)

    def __hash__(self):
        return hash(self.x.tobytes())


@dataclass
class MetricsRow:
    nonzeros: int
    tpr: float
    prediction_error: float
    successful_recovery_rate: float
    snr: Optional[float] = None


def as_vector(x) -> np.ndarray:
    if isinstance(x, SparseSignVector):
        return x.x.astype(float)
    return np.asarray(x, dtype=float).reshape(-1)


def objective(inst: SilsInstance, x) -> float:
    """(1/n) ||M x - b||^2."""
    x = as_vector(x)
    if x.shape != (inst.d,):
        raise ValueError(f"x has length {x.shape[0]}, expected {inst.d}")
    r = inst.M @ x - inst.b
    return float(r @ r) / inst.n


def gram_lift(inst: SilsInstance) -> np.ndarray:
    """(1/n) A^T A with A = (-b, M); the cost matrix of the lifted problem."""
    A = np.hstack([-inst.b[:, None], inst.M])
    C = A.T @ A / inst.n
    return (C + C.T) / 2


def coherence(psi) -> float:
    """Largest |psi_ij| / sqrt(psi_ii psi_jj) over i != j, with 0/0 = 0."""
    psi = np.asarray(psi, dtype=float)
    if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
        raise ValueError("coherence needs a square matrix")
    if psi.shape[0] < 2:
        return 0.0
    dg = np.sqrt(np.abs(np.diag(psi)))
    denom = np.outer(dg, dg)
    num = np.abs(psi)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
    # for PSD input a zero diagonal forces a zero row; anything left there is
    # underflow (e.g. a 1e-300 entry whose square vanishes), so it counts as 0
    np.fill_diagonal(ratio, 0.0)
    return float(ratio.max())


def inf_op_norm(P) -> float:
    """Operator norm induced by the infinity norm: the largest absolute row sum."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return float(np.abs(P).sum(axis=1).max())


def max_norm(P) -> float:
    """Entrywise (Chebyshev) norm."""
    P = np.asarray(P, dtype=float)
    return float(np.abs(P).max()) if P.size else 0.0


def support(z, tol: float = ZERO_TOL) -> np.ndarray:
    return np.flatnonzero(np.abs(as_vector(z)) > tol)


def top_sigma(z, sigma: int) -> np.ndarray:
    """Indices of the sigma largest |z_i|; ties go to the lower index."""
    a = np.abs(as_vector(z))
    order = np.lexsort((np.arange(a.size), -a))
    return np.sort(order[:sigma])


def snr(cov, z_star, noise_param: float) -> float:
    from .generators import psd_sqrt

    z_star = as_vector(z_star)
    S = np.flatnonzero(z_star)
    root = psd_sqrt(np.asarray(cov, dtype=float))
    v = root[:, S] @ z_star[S]
    if noise_param == 0:
        return float("inf")
    return float(v @ v) / noise_param ** 2


def metrics(z, truth: GroundTruth, M, sigma: int, tol: float = ZERO_TOL) -> MetricsRow:
    z = as_vector(z)
    z_star = as_vector(truth.z_star)
    M = np.asarray(M, dtype=float)
    if z.shape != z_star.shape or M.shape[1] != z.shape[0]:
        raise ValueError("dimension mismatch between z, z_star and M")
    true_supp = set(np.flatnonzero(z_star).tolist())
    if not true_supp:
        raise ValueError("z_star has empty support")
    est = set(support(z, tol).tolist())
    signal = M @ z_star
    denom = float(signal @ signal)
    if denom == 0:
        raise ValueError("M z_star = 0: prediction error undefined")
    r = M @ (z - z_star)
    top = set(top_sigma(z, sigma).tolist())
    row_snr = None
    if truth.cov is not None:
        row_snr = snr(truth.cov, z_star, truth.noise_param)
    return MetricsRow(
        nonzeros=len(est),
        tpr=len(true_supp & est) / len(true_supp),
        prediction_error=float(r @ r) / denom,
        successful_recovery_rate=len(true_supp & top) / len(true_supp),
        snr=row_snr,
    )


# --- instance text format --------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.16e}"


def _rows(A) -> list:
    A = np.atleast_2d(A)
    return [" ".join(_fmt(v) for v in row) for row in A]


def dumps_instance(inst: SilsInstance, truth: Optional[GroundTruth] = None) -> str:
    lines = [f"{inst.n} {inst.d} {inst.sigma}"]
    lines += _rows(inst.M)
    lines += _rows(inst.b[None, :])
    if truth is not None:
        lines.append("#z_star")
        lines += _rows(as_vector(truth.z_star)[None, :])
        lines.append("#eps")
        lines += _rows(as_vector(truth.eps)[None, :])
        if truth.cov is not None:
            lines.append("#cov")
            lines += _rows(truth.cov)
        lines.append("#noise_param")
        lines.append(_fmt(truth.noise_param))
        if truth.m1 is not None:
            lines.append("#m1")
            lines += _rows(truth.m1)
        if truth.model_params is not None:
            lines.append("#model_params")
            lines.append(" ".join(_fmt(v) for v in truth.model_params))
    return "\n".join(lines) + "\n"


def loads_instance(text: str):
    """Parse the instance text format; returns (instance, truth or None)."""
    raw = [ln.strip() for ln in text.splitlines()]
    raw = [ln for ln in raw if ln]
    if not raw:
        raise ValueError("empty instance file")
    try:
        n, d, sigma = (int(t) for t in raw[0].split())
    except ValueError as exc:
        raise ValueError(f"bad header line: {raw[0]!r}") from exc
    if len(raw) < n + 2:
        raise ValueError("instance file truncated")

    def parse(line, width):
        vals = [float(t) for t in line.split()]
        if len(vals) != width:
            raise ValueError(f"expected {width} values, got {len(vals)}")
        return vals

    M = np.array([parse(raw[1 + i], d) for i in range(n)])
    b = np.array(parse(raw[n + 1], n))
    inst = SilsInstance(M, b, sigma)

    sections: dict = {}
    current = None
    for line in raw[n + 2:]:
        if line.startswith("#"):
            current = line[1:].strip()
            sections[current] = []
        elif current is None:
            raise ValueError(f"unexpected line outside a section: {line!r}")
        else:
            sections[current].append(line)
    if not sections:
        return inst, None
    if "z_star" not in sections or "eps" not in sections:
        raise ValueError("ground-truth sections need both #z_star and #eps")
    z_star = np.array(parse(sections["z_star"][0], d))
    eps = np.array(parse(sections["eps"][0], n))
    cov = None
    if "cov" in sections:
        cov = np.array([parse(r, d) for r in sections["cov"]])
    noise = float(sections["noise_param"][0]) if "noise_param" in sections else 0.0
    m1 = None
    if "m1" in sections:
        m1 = np.array([parse(r, d) for r in sections["m1"]])
    params = None
    if "model_params" in sections:
        params = tuple(float(t) for t in sections["model_params"][0].split())
    return inst, GroundTruth(z_star, eps, cov, noise, m1, params)


def write_instance(path, inst: SilsInstance, truth: Optional[GroundTruth] = None) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_instance(inst, truth))


def read_instance(path):
    with open(path) as fh:
        return loads_instance(fh.read())
