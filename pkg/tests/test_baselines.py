import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from silslab.baselines import (LPError, cross_validate, dantzig, dantzig_rule, default_grid, lasso,
                               lasso_kkt_violation, lasso_objective, lasso_rule, linprog_le, soft)
from silslab.generators import ModelSpec, generate


def test_soft_threshold():
    assert soft(np.array([3.0, -0.5, -2.0]), 1.0).tolist() == [2.0, 0.0, -1.0]


def test_lasso_least_squares_limit(rng):
    M = rng.standard_normal((5, 5)) + 3 * np.eye(5)
    b = rng.standard_normal(5)
    r = lasso(M, b, 0.0)
    assert np.abs(r.z - np.linalg.solve(M, b)).max() <= 1e-6


def test_lasso_threshold_law(rng):
    M, b = rng.standard_normal((12, 6)), rng.standard_normal(12)
    top = np.abs(M.T @ b / 12).max()
    for lam in (top, 1.5 * top):
        assert np.all(lasso(M, b, lam).z == 0)
    assert np.any(lasso(M, b, 0.9 * top).z != 0)
    with pytest.raises(ValueError):
        lasso(M, b, -1.0)


@given(st.integers(0, 10_000), st.floats(1e-3, 1.0))
def test_lasso_kkt_property(seed, frac):
    g = np.random.default_rng(seed)
    n, d = int(g.integers(3, 20)), int(g.integers(2, 15))
    M, b = g.standard_normal((n, d)), g.standard_normal(n)
    lam = frac * np.abs(M.T @ b / n).max()
    r = lasso(M, b, lam)
    assert r.kkt_violation <= 1e-6
    assert r.kkt_violation == lasso_kkt_violation(M, b, r.z, lam)


def test_lasso_monotone_objective(rng):
    M, b = rng.standard_normal((15, 30)), rng.standard_normal(15)
    r = lasso(M, b, 0.05, trace_objective=True)
    h = np.array(r.cv_trace)
    assert np.all(np.diff(h) <= 1e-12 * max(1.0, h[0]))
    assert h[-1] == pytest.approx(lasso_objective(M, b, r.z, 0.05))


def test_lasso_warm_start_same_answer(rng):
    M, b = rng.standard_normal((20, 10)), rng.standard_normal(20)
    cold = lasso(M, b, 0.1).z
    warm = lasso(M, b, 0.1, z0=lasso(M, b, 0.3).z).z
    assert np.abs(cold - warm).max() <= 1e-6


def test_lp_against_scipy(rng):
    for _ in range(30):
        m, n = int(rng.integers(2, 12)), int(rng.integers(2, 12))
        A = rng.standard_normal((m, n))
        h = rng.standard_normal(m) + 0.5
        c = rng.uniform(0.1, 2, n)
        ref = linprog(c, A_ub=A, b_ub=h, bounds=(0, None), method="highs")
        if ref.status == 2:
            with pytest.raises(LPError):
                linprog_le(c, A, h)
            continue
        lp = linprog_le(c, A, h)
        assert lp.objective == pytest.approx(ref.fun, abs=1e-8)
        assert np.all(A @ lp.x <= h + 1e-8) and np.all(lp.x >= 0)
        # dual certificate: y <= 0, A^T y <= c, equal objectives
        assert np.all(lp.y <= 1e-10) and np.all(A.T @ lp.y <= c + 1e-8)
        assert lp.dual_objective == pytest.approx(lp.objective, abs=1e-8)


def test_dantzig_examples(rng):
    M = rng.standard_normal((6, 6)) + 3 * np.eye(6)
    b = rng.standard_normal(6)
    r0 = dantzig(M, b, 0.0)
    assert np.abs(r0.z - np.linalg.solve(M, b)).max() <= 1e-6
    top = np.abs(M.T @ b).max()
    assert np.all(dantzig(M, b, top).z == 0)
    with pytest.raises(ValueError):
        dantzig(M, b, -0.1)


def test_dantzig_optimality_vs_scipy(rng):
    for _ in range(20):
        n, d = int(rng.integers(4, 20)), int(rng.integers(2, 12))
        M, b = rng.standard_normal((n, d)), rng.standard_normal(n)
        eta = rng.uniform(0.05, 0.8) * np.abs(M.T @ b).max()
        r = dantzig(M, b, eta)
        A, g = M.T @ M, M.T @ b
        ref = linprog(np.ones(2 * d), A_ub=np.block([[A, -A], [-A, A]]),
                      b_ub=np.concatenate([eta + g, eta - g]), bounds=(0, None), method="highs")
        assert r.objective_or_l1 == pytest.approx(ref.fun, rel=1e-8, abs=1e-9)
        assert r.feas_residual <= 1e-7 and abs(r.duality_gap) <= 1e-6


def test_dantzig_l1_below_truth():
    for seed in range(10):
        inst, truth = generate(ModelSpec(3, 15, 40, 2, noise_param=0.5, seed=seed))
        eta = dantzig_rule(0.5, 40)
        r = dantzig(inst.M, inst.b, eta)
        if np.abs(inst.M.T @ (inst.M @ truth.z_star - inst.b)).max() <= eta:
            assert r.objective_or_l1 <= np.abs(truth.z_star).sum() + 1e-9


def test_rules():
    assert lasso_rule(15, 40) == pytest.approx(2 * np.sqrt(np.log(40) / 15))
    assert dantzig_rule(0.5, 40) == pytest.approx(1.25 + np.sqrt(np.log(40)))


def test_default_grids(rng):
    M, b = rng.standard_normal((10, 4)), rng.standard_normal(10)
    gl = default_grid(M, b, "lasso")
    gd = default_grid(M, b, "dantzig")
    assert gl.size == gd.size == 20
    assert gl[-1] == pytest.approx(np.abs(M.T @ b / 10).max())
    assert gd[0] == pytest.approx(1e-2 * np.abs(M.T @ b).max())
    with pytest.raises(ValueError):
        default_grid(M, b, "ridge")


def test_cv_single_grid_point(rng):
    M, b = rng.standard_normal((20, 5)), rng.standard_normal(20)
    r = cross_validate(M, b, "lasso", grid=[0.1], folds=4)
    assert r.parameter == 0.1 and np.allclose(r.z, lasso(M, b, 0.1).z)
    with pytest.raises(ValueError):
        cross_validate(M, b, "lasso", grid=[])
    with pytest.raises(ValueError):
        cross_validate(M, b, "lasso", folds=1)


def test_cv_noiseless_duplicated_rows(rng):
    M0 = rng.standard_normal((10, 4))
    M = np.vstack([M0, M0])
    z = np.array([1.0, 0, -1, 0])
    b = M @ z
    top = np.abs(M.T @ b / 20).max()
    grid = top * np.array([1e-6, 1e-3, 0.5, 1.0, 2.0])
    r = cross_validate(M, b, "lasso", grid=grid, folds=5)
    errs = dict(r.cv_trace)
    assert errs[grid[0]] < 1e-8
    assert r.parameter < top


def test_cv_dantzig_runs_and_is_deterministic(rng):
    M, b = rng.standard_normal((20, 6)), rng.standard_normal(20)
    a = cross_validate(M, b, "dantzig", folds=5, seed=3)
    c = cross_validate(M, b, "dantzig", folds=5, seed=3)
    assert a.parameter == c.parameter and np.array_equal(a.z, c.z)
    assert a.feas_residual <= 1e-7


def test_cv_lasso_model2_dense():
    nnz = []
    for seed in range(6):
        inst, _ = generate(ModelSpec(2, 30, 40, 2, noise_param=0.5, signs="ones", seed=seed))
        r = cross_validate(inst.M, inst.b, "lasso", seed=seed)
        nnz.append(np.count_nonzero(np.abs(r.z) > 1e-4))
    assert np.mean(nnz) > 2
