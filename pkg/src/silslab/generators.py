"""Seeded synthetic instances for the three linear-model families.

All randomness comes from :class:`~silslab.rng.CounterStream`.  Draws are
taken in a fixed order: matrix entries (row-major), then the signs of z*, then
the noise vector.  Only the Gaussian case of the sub-Gaussian models is
generated.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .instance import GroundTruth, SilsInstance
from .rng import CounterStream

NEG_EIG_TOL = 1e-10


@dataclass(frozen=True)
class ModelSpec:
    model_id: int
    n: int
    d: int
    sigma: int
    noise_param: float = 0.0
    c: float = 1.2
    c_prime: float = 1.05
    c_dprime: float = 1.0
    seed: int = 0
    # "random": i.i.d. uniform signs on the support; "ones": z*_S = 1
    signs: str = "random"

    def __post_init__(self):
        if self.model_id not in (1, 2, 3):
            raise ValueError(f"model_id must be 1, 2 or 3, got {self.model_id}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if not 1 <= self.sigma <= self.d:
            raise ValueError("sigma must lie in [1, d]")
        if self.model_id == 2 and self.sigma >= self.d:
            raise ValueError("Model 2 requires sigma < d")
        if self.noise_param < 0:
            raise ValueError("noise_param must be nonnegative")
        if self.model_id == 2 and not (self.c > 1 and self.c_prime > 1 and self.c_dprime > 0):
            raise ValueError("Model 2 requires c > 1, c' > 1, c'' > 0")
        if self.signs not in ("random", "ones"):
            raise ValueError("signs must be 'random' or 'ones'")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def with_seed(self, seed: int) -> "ModelSpec":
        return replace(self, seed=int(seed) % 2 ** 64)


def psd_sqrt(S, tol: float = NEG_EIG_TOL) -> np.ndarray:
    """Symmetric square root by eigendecomposition; small negative eigenvalues clamp to 0."""
    S = np.asarray(S, dtype=float)
    S = (S + S.T) / 2
    lam, V = np.linalg.eigh(S)
    if lam.size and lam[0] < -tol:
        raise ValueError(f"matrix is not PSD: smallest eigenvalue {lam[0]:.3e}")
    R = (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T
    return (R + R.T) / 2


def model2_cov(d: int, sigma: int, c: float, cp: float, cpp: float):
    """Return (Sigma, Sigma_1, Sigma_2) with Sigma = Sigma_1 + Sigma_2."""
    s1 = np.zeros((d, d))
    s1[:sigma, :sigma] = c * np.eye(sigma)
    s1[:sigma, sigma:] = 1.0
    s1[sigma:, :sigma] = 1.0
    s1[sigma:, sigma:] = cp * sigma
    s2 = np.zeros((d, d))
    s2[sigma:, sigma:] = cpp * np.eye(d - sigma)
    return s1 + s2, s1, s2


def _block_average(R, sigma: int, rank_one_tail: bool = False) -> np.ndarray:
    """Project onto matrices invariant under permutations within [sigma] and within the rest.

    The Model 2 covariance blocks have this symmetry, so their exact square roots
    do too.  Eigen-solver round-off breaks it at about sqrt(eps) because the
    tail of Sigma_1 is rank one; averaging restores it exactly.  For Sigma_1
    every w with 1^T w = 0 on the tail is a null vector, so the tail block of
    the root is a multiple of 1 1^T (``rank_one_tail``) and the tail columns
    of M1 come out identical.
    """
    R = R.copy()
    for rows, cols in ((slice(0, sigma), slice(0, sigma)), (slice(sigma, None), slice(sigma, None)),
                       (slice(0, sigma), slice(sigma, None))):
        B = R[rows, cols]
        if rows == cols and B.shape[0] > 1:
            off = ~np.eye(B.shape[0], dtype=bool)
            B[off] = B[off].mean()
            B[~off] = B[off].mean() if rank_one_tail and rows.start == sigma else np.diag(B).mean()
        elif B.size:
            B[...] = B.mean()
    R[sigma:, :sigma] = R[:sigma, sigma:].T
    return R


def _signed_support(stream: CounterStream, spec: ModelSpec, k: int) -> np.ndarray:
    if spec.signs == "ones":
        return np.ones(k)
    return stream.signs(k)


def _noise(stream: CounterStream, spec: ModelSpec) -> np.ndarray:
    g = stream.normal(spec.n)
    return spec.noise_param * g


def _observe(M, z, raw_eps):
    # record eps as b - Mz so the identity holds bit for bit
    Mz = M @ z
    b = Mz + raw_eps
    return b, b - Mz


def gen_model1(spec: ModelSpec):
    if spec.model_id != 1:
        raise ValueError("gen_model1 needs model_id = 1")
    n, d, s = spec.n, spec.d, spec.sigma
    st = CounterStream(spec.seed)
    M = st.normal(n * d).reshape(n, d)
    mags = np.where(np.arange(d) < s, 2.0, 1.0)
    z = mags * _signed_support(st, spec, d)
    b, eps = _observe(M, z, _noise(st, spec))
    truth = GroundTruth(z, eps, np.eye(d), spec.noise_param)
    return SilsInstance(M, b, s), truth


def gen_model2(spec: ModelSpec):
    """Rows of M are N(0, Sigma) with the block covariance of the high-coherence model.

    M is sampled as M1 + M2 with M1 = G' Sigma_1^{1/2} and M2 = G'' Sigma_2^{1/2};
    M1 is kept in the ground truth because the explicit certificate needs it.
    """
    if spec.model_id != 2:
        raise ValueError("gen_model2 needs model_id = 2")
    n, d, s = spec.n, spec.d, spec.sigma
    cov, s1, _ = model2_cov(d, s, spec.c, spec.c_prime, spec.c_dprime)
    if np.linalg.eigvalsh(cov)[0] < -NEG_EIG_TOL:
        raise ValueError("Model 2 covariance is not PSD for these parameters")
    r1 = _block_average(psd_sqrt(s1), s, rank_one_tail=True)
    st = CounterStream(spec.seed)
    g1 = st.normal(n * d).reshape(n, d)
    g2 = st.normal(n * (d - s)).reshape(n, d - s)
    M1 = g1 @ r1
    M = M1.copy()
    M[:, s:] += np.sqrt(spec.c_dprime) * g2
    z = np.zeros(d)
    z[:s] = _signed_support(st, spec, s)
    b, eps = _observe(M, z, _noise(st, spec))
    truth = GroundTruth(z, eps, cov, spec.noise_param, m1=M1,
                        model_params=(spec.c, spec.c_prime, spec.c_dprime))
    return SilsInstance(M, b, s), truth


def gen_model3(spec: ModelSpec):
    if spec.model_id != 3:
        raise ValueError("gen_model3 needs model_id = 3")
    n, d, s = spec.n, spec.d, spec.sigma
    st = CounterStream(spec.seed)
    M = st.normal(n * d).reshape(n, d)
    z = np.zeros(d)
    z[:s] = _signed_support(st, spec, s)
    b, eps = _observe(M, z, _noise(st, spec))
    return SilsInstance(M, b, s), GroundTruth(z, eps, np.eye(d), spec.noise_param)


def generate(spec: ModelSpec):
    return {1: gen_model1, 2: gen_model2, 3: gen_model3}[spec.model_id](spec)
