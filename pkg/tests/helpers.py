"""Instance builders shared by several test files."""
import numpy as np

from silslab.certificates import DELTA_GRID
from silslab.instance import SilsInstance


def orthogonal_instance(n=6, d=4, sigma=2, x=None, seed=0):
    """Noiseless instance with M^T M / n = I_d and b = M x."""
    g = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(g.standard_normal((n, d)))
    M = np.sqrt(n) * Q
    if x is None:
        x = np.zeros(d)
        x[:sigma] = 1.0
    return SilsInstance(M, M @ x, sigma), np.asarray(x, float)


def near_orthogonal_corpus(count, n=12, d=8, sigma=2, seed=1):
    """Column-normalized, nearly orthogonal designs with a sparse sign signal.

    Yields (instance, x, delta_grid).  On these the low-coherence conditions
    can hold, provided delta is scaled to the 1/n size of M^T M / n.
    """
    rng = np.random.default_rng(seed)
    grid = np.array(DELTA_GRID) / n / 10
    for _ in range(count):
        Q, _ = np.linalg.qr(rng.standard_normal((n, d)))
        M = Q + rng.uniform(0, 0.02) * rng.standard_normal((n, d))
        M /= np.sqrt((M ** 2).sum(0)).max()
        x = np.zeros(d)
        S = rng.choice(d, sigma, replace=False)
        x[S] = rng.choice([-1.0, 1.0], sigma)
        b = M @ x + rng.uniform(0, 0.02) * rng.standard_normal(n)
        yield SilsInstance(M, b, sigma), x, grid


def positive_y11_sign(inst, sigma_set):
    """A sign vector on the given support with Y11* > 0."""
    y = -inst.M.T @ inst.b / inst.n
    x = np.zeros(inst.d)
    x[sigma_set] = np.where(y[sigma_set] > 0, -1.0, 1.0)
    return x
