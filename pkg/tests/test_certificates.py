import dataclasses

import numpy as np
import pytest

from helpers import near_orthogonal_corpus, orthogonal_instance, positive_y11_sign
from silslab.certificates import (DELTA_GRID, CertificateError, StochasticParams, build_certificate_general,
                                  build_certificate_sparse, build_p_star, check_certificate,
                                  check_certificate_grid, check_cor_low_coherence, check_thm_general,
                                  check_thm_sparse, check_thm_sparse_recovery, check_thm_stochastic,
                                  dual_data, fn_grad, fn_grad_norm, fn_value, low_coherence_deltas,
                                  model2_theta_decomposition, shift_decomposition, theta_matrix,
                                  theta_sparse_matrix)
from silslab.exact import solve_exact
from silslab.generators import ModelSpec, generate
from silslab.instance import SilsInstance

F_KEYS = ("F1", "F2", "F3", "F4", "lambda2H")


# --- dual data -------------------------------------------------------------------

def test_orthogonal_dual_data():
    inst, x = orthogonal_instance(n=9, d=5, sigma=2, x=[1, 0, -1, 0, 0])
    dd = dual_data(inst, x, 0.5, -0.5)
    assert np.allclose(dd.y_star[[0, 2]], -x[[0, 2]], atol=1e-12)
    assert dd.Y11_star == pytest.approx(2.0) and dd.theta == pytest.approx(0.0, abs=1e-7)
    assert dd.mu3_star == pytest.approx(0.25)
    p = build_p_star(dd, inst, x)
    # closed form: p_S = -sigma mu3 - mu2 = -(1 - delta) - mu2 = 0 here
    assert np.allclose(p, 0, atol=1e-12)


def test_mu3_strictly_decreasing_in_delta(rng):
    inst = SilsInstance(rng.standard_normal((10, 5)), rng.standard_normal(10), 2)
    x = positive_y11_sign(inst, [0, 3])
    mu3 = [dual_data(inst, x, dl, 0.0).mu3_star for dl in DELTA_GRID]
    assert np.all(np.diff(mu3) < 0)


def test_mu3_large_n_model3():
    inst, truth = generate(ModelSpec(3, 20000, 10, 2, noise_param=0.5, seed=4))
    for delta in (0.25, 0.5):
        mu3 = dual_data(inst, truth.z_star, delta, 0.0).mu3_star
        assert abs(mu3 - (1 - delta) / 2) < 0.1 / 2


def test_y11_nonpositive_rejected():
    inst = SilsInstance(np.eye(3), [1.0, -1.0, 0.0], 2)
    x = np.array([1.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        dual_data(inst, x, 0.5, 0.0)
    rep = check_thm_general(inst, x)
    assert not rep.passed and "Y11_positive" in rep.conditions


def test_min_p_closed_form():
    g = np.random.default_rng(21)
    for _ in range(50):
        n, d = int(g.integers(3, 12)), int(g.integers(3, 8))
        s = int(g.integers(1, d))
        inst = SilsInstance(g.standard_normal((n, d)), g.standard_normal(n), s)
        S = g.choice(d, s, replace=False)
        x = positive_y11_sign(inst, S)
        delta, mu2 = float(g.choice(DELTA_GRID)), float(g.normal())
        dd = dual_data(inst, x, delta, mu2)
        p = build_p_star(dd, inst, x)
        K = inst.M.T @ inst.M / n
        lam = np.linalg.eigvalsh(K[np.ix_(S, S)])[0]
        assert p[S].min() == pytest.approx(-lam + delta - mu2, abs=1e-10)
        assert np.all(np.delete(p, S) == 0)
        top = dual_data(inst, x, delta, -lam + delta)
        assert build_p_star(top, inst, x)[S].min() == pytest.approx(0.0, abs=1e-10)


# --- general certificate -----------------------------------------------------------

def test_orthogonal_certificate_margins():
    inst, x = orthogonal_instance(n=9, d=5, sigma=2, x=[1, 0, -1, 0, 0])
    delta, mu2 = 0.5, -0.95
    mu3 = 0.25
    rep = check_thm_general(inst, x, [delta], [mu2])
    assert rep.passed
    assert rep.conditions["B1"].margin == pytest.approx(mu3)
    assert rep.conditions["B2"].margin == pytest.approx(mu3 - 0.05)
    cert = build_certificate_general(inst, x, delta, mu2)
    assert all(cert.conditions[k].passed for k in F_KEYS)
    assert cert.nu == pytest.approx(mu3 - 0.05)
    assert cert.report.conditions["F3"].margin == pytest.approx(mu3)
    assert cert.report.conditions["F4"].margin == pytest.approx(mu3 - abs(1 + mu2 - cert.nu))


def test_b_failure_raises_with_margins():
    inst, x = orthogonal_instance(n=9, d=5, sigma=2, x=[1, 0, -1, 0, 0])
    with pytest.raises(CertificateError) as exc:
        build_certificate_general(inst, x, 0.5, -2.0)
    assert "B2" in exc.value.report.failures()


def _certified_model3(count, seed0=0):
    out, seed = [], seed0
    while len(out) < count:
        inst, truth = generate(ModelSpec(3, 40, 8, 2, noise_param=0.1, seed=seed))
        seed += 1
        rep = check_thm_general(inst, truth.z_star)
        if rep.passed:
            out.append((inst, truth, rep.witness))
    return out


@pytest.fixture(scope="module")
def certified():
    return _certified_model3(100)


def test_construction_identities(certified):
    for inst, truth, w in certified:
        cert = build_certificate_general(inst, truth.z_star, w["delta"], w["mu2_star"])
        v = cert.report.values
        assert v["HSS_null_residual"] <= 1e-9
        assert v["subgradient_residual"] <= 1e-9 and v["H_residual"] <= 1e-9
        assert cert.report.conditions["F2"].margin >= -1e-9
        assert cert.report.conditions["lambda2_HSS"].passed
        assert cert.report.passed


def test_certified_model3_end_to_end(certified):
    from silslab.sdp import recover
    for inst, truth, w in certified[:5]:
        r = solve_exact(inst)
        assert r.unique and np.array_equal(r.best_x.x, truth.z_star)
        _, x = recover(inst)
        assert x is not None and np.array_equal(x.x, truth.z_star)


def test_f2_linear_response(certified):
    inst, truth, w = certified[0]
    cert = build_certificate_general(inst, truth.z_star, w["delta"], w["mu2_star"])
    S, Sc = np.flatnonzero(truth.z_star), np.flatnonzero(truth.z_star == 0)
    xS = truth.z_star[S]
    a = 3e-3
    H = cert.H.copy()
    bump = np.zeros((len(Sc), len(S)))
    bump[1] = a * xS / len(S)
    H[np.ix_(Sc, S)] += bump
    H[np.ix_(S, Sc)] += bump.T
    rep = check_certificate(dataclasses.replace(cert, H=H), inst, truth.z_star)
    assert not rep.conditions["F2"].passed
    assert rep.conditions["F2"].margin == pytest.approx(-a, rel=1e-6)


def test_certificate_grid_matches_b(certified):
    inst, truth, w = certified[1]
    rep = check_certificate_grid(inst, truth.z_star)
    assert rep.passed and rep.theorem_id == "F"


# --- sparse certificate and Theta ---------------------------------------------------

def test_sparse_certificate_trivial_and_rejected():
    inst, x = orthogonal_instance(n=9, d=5, sigma=2, x=[1, 0, -1, 0, 0])
    delta, mu2, mu3 = 0.5, -0.95, 0.25
    theta = theta_matrix(inst, x, delta, mu2)
    assert np.allclose(theta, 0.05 * np.eye(3), atol=1e-12)
    cert = build_certificate_sparse(inst, x, delta, mu2, theta, np.zeros_like(theta))
    assert all(cert.conditions[k].passed for k in F_KEYS)
    T2 = -(mu3 + 0.01) * np.eye(3)
    with pytest.raises(CertificateError) as exc:
        build_certificate_sparse(inst, x, delta, mu2, theta - T2, T2)
    assert exc.value.report.failures() == ["theta2_maxnorm"]
    with pytest.raises(CertificateError) as exc:
        build_certificate_sparse(inst, x, delta, mu2, theta + 1e-6, np.zeros_like(theta))
    assert "reconstruction" in exc.value.report.failures()


def test_shift_decomposition(rng):
    A = rng.standard_normal((4, 4))
    T = (A + A.T) / 2
    t1, t2 = shift_decomposition(T)
    assert np.allclose(t1 + t2, T) and np.linalg.eigvalsh(t1)[0] >= -1e-12


def test_theta_identity_random_linear_models():
    worst, seen = 0.0, 0
    for seed in range(200):
        model = 1 + seed % 3
        d = 6
        inst, truth = generate(ModelSpec(model, 10 + seed % 7, d, 2, noise_param=0.7, seed=seed))
        z = np.sign(truth.z_star) * (np.arange(d) < 2)
        truth = dataclasses.replace(truth, z_star=z, eps=inst.b - inst.M @ z)
        if -(-inst.M.T @ inst.b / inst.n)[:2] @ z[:2] <= 0:
            continue
        for delta, mu2 in ((0.5, -1.0), (1.0, 0.3)):
            A = theta_sparse_matrix(inst, truth, delta, mu2)
            B = theta_matrix(inst, z, delta, mu2)
            worst = max(worst, np.linalg.norm(A - B) / max(1.0, np.linalg.norm(B)))
        seen += 1
    assert seen >= 50 and worst <= 1e-9


def test_e1_noiseless_collapse():
    inst, x = orthogonal_instance(n=9, d=5, sigma=2, x=[1, 0, -1, 0, 0])
    from silslab.instance import GroundTruth
    truth = GroundTruth(x, np.zeros(9))
    rep = check_thm_sparse_recovery(inst, truth, [0.5], [-0.95])
    assert rep.conditions["E1"].passed and rep.values["E1_lhs"] == pytest.approx(0, abs=1e-12)
    assert rep.passed
    assert np.allclose(theta_sparse_matrix(inst, truth, 0.5, -0.95), 0.05 * np.eye(3), atol=1e-12)


def test_thm_sparse_orthogonal():
    inst, x = orthogonal_instance(n=9, d=5, sigma=2, x=[1, 0, -1, 0, 0])
    assert check_thm_sparse(inst, x, [0.5], [-0.95]).passed


# --- low coherence ------------------------------------------------------------------

def test_low_coherence_orthonormal_case():
    n, d = 10, 5
    inst, x = orthogonal_instance(n=n, d=d, sigma=2, x=[1, 0, -1, 0, 0])
    unit = SilsInstance(inst.M / np.sqrt(n), inst.b / np.sqrt(n), 2)
    grid = np.array(DELTA_GRID) / n / 10
    rep = check_cor_low_coherence(unit, x, None, grid, [-1.0 / n])
    assert rep.passed and rep.values["coherence"] < 1e-12
    w = rep.witness
    assert check_thm_general(unit, x, [w["delta"]], [w["mu2_star"]]).passed
    dd = low_coherence_deltas(unit, x, w["delta"])
    assert dd["Delta1"] == pytest.approx(1 / n) and dd["Delta2"] == pytest.approx(1 / n)


def test_low_coherence_rejections():
    inst, x = orthogonal_instance(n=10, d=5, sigma=2, x=[1, 0, -1, 0, 0])
    with pytest.raises(ValueError):
        check_cor_low_coherence(inst, x)
    unit = SilsInstance(inst.M / np.sqrt(10), inst.b / np.sqrt(10), 2)
    with pytest.raises(ValueError):
        check_cor_low_coherence(unit, x, Delta=0.0)


def test_low_coherence_fails_on_model2():
    inst, truth = generate(ModelSpec(2, 200, 10, 2, noise_param=0.5, seed=0))
    M = inst.M / np.sqrt((inst.M ** 2).sum(0)).max()
    unit = SilsInstance(M, inst.b / np.sqrt((inst.M ** 2).sum(0)).max(), 2)
    rep = check_cor_low_coherence(unit, truth.z_star)
    assert not rep.passed and rep.values["coherence"] > 0.3


def test_chain_on_near_orthogonal_corpus():
    c_hits = 0
    for inst, x, grid in near_orthogonal_corpus(60):
        rep = check_cor_low_coherence(inst, x, None, grid)
        if not rep.passed:
            continue
        c_hits += 1
        w = rep.witness
        assert check_thm_general(inst, x, [w["delta"]], [w["mu2_star"]]).passed
        cert = build_certificate_general(inst, x, w["delta"], w["mu2_star"])
        assert all(cert.conditions[k].passed for k in F_KEYS)
    assert c_hits >= 20


# --- population conditions -------------------------------------------------------

def test_fn_gradient_finite_differences():
    g = np.random.default_rng(5)
    for _ in range(20):
        s = int(g.integers(2, 6))
        xS = g.choice([-1.0, 1.0], s)
        x = -xS * g.uniform(0.5, 2, s)
        grad = fn_grad(x, xS)
        h = 1e-6
        fd = np.array([(fn_value(x + h * e, xS) - fn_value(x - h * e, xS)) / (2 * h) for e in np.eye(s)])
        assert np.linalg.norm(fd - grad) <= 1e-5 * np.linalg.norm(grad)
        assert fn_grad_norm(x, xS) == pytest.approx(np.linalg.norm(grad), rel=1e-10)


def test_stochastic_identity_and_model1_values():
    d, s = 12, 3
    z = np.zeros(d)
    z[:s] = [1, -1, 1]
    rep = check_thm_stochastic(np.eye(d), z, z, s, StochasticParams(n=10 ** 6, rho=0.5))
    v = rep.values
    assert rep.heuristic
    assert v["Y11_hat_over_sigma"] == pytest.approx(1) and v["cos_theta_hat"] == pytest.approx(1)
    assert v["f_n"] == 0
    z1 = np.where(np.arange(d) < s, 2.0, 1.0) * np.where(np.arange(d) % 2, -1, 1)
    x1 = np.sign(z1) * (np.arange(d) < s)
    rep1 = check_thm_stochastic(np.eye(d), z1, x1, s, StochasticParams(n=10 ** 6))
    assert rep1.values["Y11_hat_over_sigma"] == pytest.approx(2)


def test_stochastic_precondition():
    rep = check_thm_stochastic(np.eye(3), np.array([1.0, -1, 0]), np.array([1.0, 1, 0]), 2,
                               StochasticParams(n=100))
    assert not rep.passed and rep.heuristic


# --- high-coherence decomposition -------------------------------------------------

def test_model2_reconstruction_whenever_assembled():
    built = 0
    for seed in range(10):
        inst, truth = generate(ModelSpec(2, 4000, 12, 2, noise_param=0.5, seed=seed))
        try:
            dec = model2_theta_decomposition(inst, truth)
        except ValueError:
            continue
        built += 1
        theta = theta_matrix(inst, truth.z_star, dec.delta, dec.mu2_star)
        assert np.linalg.norm(dec.theta1 + dec.theta2 - theta) <= 1e-8
    assert built >= 5


def test_model2_small_n():
    # at desk-scale n the construction assembles but is not a valid split ...
    inst, truth = generate(ModelSpec(2, 30, 40, 2, noise_param=0.5, seed=0))
    dec = model2_theta_decomposition(inst, truth)
    assert not dec.valid and dec.checks["reconstruction"].passed
    # ... or is unavailable outright
    inst, truth = generate(ModelSpec(2, 30, 40, 2, noise_param=0.5, seed=1))
    with pytest.raises(ValueError, match="c_bar"):
        model2_theta_decomposition(inst, truth)


def test_model2_large_n_frozen():
    # d=30, sigma=3, rho=0.5, n=63488: seed 0 misses the Theta2 bound by ~0.009
    valid, passed = [], []
    for seed in range(6):
        inst, truth = generate(ModelSpec(2, 63488, 30, 3, noise_param=0.5, seed=seed))
        dec = model2_theta_decomposition(inst, truth)
        valid.append(dec.valid)
        rep = check_thm_sparse_recovery(inst, truth, [dec.delta], [dec.mu2_star],
                                        decomposition=(dec.theta1, dec.theta2))
        passed.append(rep.passed)
        assert 2.3 < dec.constants["c_hat"] < 3.1
    assert valid == [False, True, True, True, True, True]
    assert passed == valid


def test_model2_decomposition_needs_split():
    inst, truth = generate(ModelSpec(3, 30, 5, 2, seed=0))
    with pytest.raises(ValueError):
        model2_theta_decomposition(inst, truth)
