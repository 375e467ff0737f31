import math
from dataclasses import replace

import numpy as np
import pytest

from cbdc_nk.config import SHOCKS, TaylorCoefficients
from cbdc_nk.model import EQUATIONS, IDX
from cbdc_nk.perturbation import (BlanchardKahnError, Derivatives, PerturbationError, PrunedState,
                                  differentiate, first_order_residual, pruned_mean, second_order_residual,
                                  shock_covariance, simulate_pruned, solve_first_order,
                                  solve_second_order, solve_sylvester, step_pruned)
from cbdc_nk.pipeline import solve_model
from cbdc_nk.steady_state import solve_steady_state

from conftest import MONO, calibrated, solution


# -- derivatives against finite differences ---------------------------------

def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def test_jacobian_and_hessian_match_finite_differences(mono):
    system = mono.steady.system
    x = mono.steady.vector
    v0 = system.stacked_point(x, x, x)
    J, H = system.jacobian_and_hessian(v0)
    n = system.n_vars

    def F(v):
        return system.residual(v[:n], v[n:2 * n], v[2 * n:3 * n], v[3 * n:])

    scale = np.maximum(np.abs(v0), 0.05)
    rng = np.random.default_rng(7)
    worst1 = worst2 = 0.0
    for _ in range(100):
        d = rng.standard_normal(v0.size) * scale
        d /= np.linalg.norm(d / scale)
        h = 1e-5
        fd1 = (F(v0 + h * d) - F(v0 - h * d)) / (2 * h)
        worst1 = max(worst1, _rel(J @ d, fd1))
        fd2 = (system.jacobian(v0 + h * d) - system.jacobian(v0 - h * d)) / (2 * h) @ d
        worst2 = max(worst2, _rel(np.einsum("kab,a,b->k", H, d, d), fd2))
    assert worst1 <= 1e-6
    assert worst2 <= 1e-6


def test_taylor_rule_row(mono):
    d = mono.derivatives
    row = EQUATIONS.index("bond_rule")
    R, pi = mono.steady["R_bond"], mono.steady["pi"]
    rule = mono.steady.calibration.bond_rule
    assert d.f_curr[row, IDX["R_bond"]] == pytest.approx(1 / R, rel=1e-12)
    assert d.f_prev[row, IDX["R_bond"]] == pytest.approx(-rule.rho / R, rel=1e-12)
    assert d.f_curr[row, IDX["pi"]] * pi == pytest.approx(-0.75, rel=1e-12)
    assert d.f_shock[row, SHOCKS.index("e_R")] == -1.0


def test_ar1_rows(mono):
    d = mono.derivatives
    for shock, var in (("lambda", "lambda_pref"), ("a", "a_prod"), ("eta", "eta_goods")):
        row = EQUATIONS.index(f"{shock}_process")
        assert d.f_curr[row, IDX[var]] == 1.0
        assert d.f_prev[row, IDX[var]] == pytest.approx(-0.9)
        assert d.f_shock[row, SHOCKS.index(shock)] == -1.0
        assert np.count_nonzero(d.jacobian[row]) == 3


# -- determinacy ------------------------------------------------------------

def test_baseline_is_determinate(mono):
    assert mono.first.spectral_radius() < 1


def test_passive_bond_rule_fails_bk():
    cal = replace(calibrated(), bond_rule=TaylorCoefficients(rho=0.0, theta_pi=0.0, theta_y=0.0))
    ss = solve_steady_state(cal, MONO)
    with pytest.raises(BlanchardKahnError) as info:
        solve_first_order(differentiate(ss.system, ss))
    assert info.value.n_stable is not None and info.value.n_stable > info.value.n_required


# -- analytic toy models ------------------------------------------------------

def _toy(rho, beta, quadratic):
    """x_t = rho x_{t-1} + u_t ;  y_t = beta E y_{t+1} + x_t (or x_t^2)."""
    n, ne = 2, 1
    f_prev = np.array([[-rho, 0.0], [0.0, 0.0]])
    f_curr = np.array([[1.0, 0.0], [0.0 if quadratic else -1.0, 1.0]])
    f_next = np.array([[0.0, 0.0], [0.0, -beta]])
    f_shock = np.array([[-1.0], [0.0]])
    hess = np.zeros((n, 3 * n + ne, 3 * n + ne))
    if quadratic:
        hess[1, n, n] = -2.0
    return Derivatives(f_prev, f_curr, f_next, f_shock, hess, np.zeros(2), np.array([0]), ("x", "y"))


def test_first_order_scalar_oracle():
    rho, beta = 0.8, 0.95
    fo = solve_first_order(_toy(rho, beta, False))
    assert fo.g_y[:, 0] == pytest.approx([rho, rho / (1 - beta * rho)], rel=1e-12)
    assert fo.g_u[:, 0] == pytest.approx([1.0, 1 / (1 - beta * rho)], rel=1e-12)


def test_second_order_scalar_oracle():
    rho, beta, sd = 0.8, 0.95, 0.3
    d = _toy(rho, beta, True)
    fo = solve_first_order(d)
    assert np.allclose(fo.g_y[1], 0) and np.allclose(fo.g_u[1], 0)
    so = solve_second_order(d, fo, np.array([[sd ** 2]]))
    A = 1 / (1 - beta * rho ** 2)
    assert so.g_yy[1, 0, 0] == pytest.approx(2 * A * rho ** 2, rel=1e-12)
    assert so.g_yu[1, 0, 0] == pytest.approx(2 * A * rho, rel=1e-12)
    assert so.g_uu[1, 0, 0] == pytest.approx(2 * A, rel=1e-12)
    assert so.risk_constant[1] == pytest.approx(beta * A * sd ** 2 / (1 - beta), rel=1e-12)
    assert so.risk_constant[0] == pytest.approx(0.0, abs=1e-15)


def test_toy_explosive_root_fails_bk():
    with pytest.raises(BlanchardKahnError):
        solve_first_order(_toy(0.5, 1.5, False))


def test_sylvester_against_dense_solve():
    rng = np.random.default_rng(0)
    n, m = 5, 3
    A = rng.standard_normal((n, n)) + 4 * np.eye(n)
    B = rng.standard_normal((n, n))
    G = 0.5 * rng.standard_normal((m, m))
    C = rng.standard_normal((n, m * m))
    X = solve_sylvester(A, B, G, C)
    K = np.kron(G, G)
    big = np.kron(np.eye(m * m), A) + np.kron(K.T, B)
    dense = np.linalg.solve(big, C.reshape(-1, order="F")).reshape(n, m * m, order="F")
    assert np.allclose(X, dense, atol=1e-12)
    assert np.allclose(A @ X + B @ X @ K, C, atol=1e-12)


def test_sylvester_singular_block_is_reported():
    A = np.array([[1.0]])
    B = np.array([[-1.0]])
    with pytest.raises(PerturbationError, match="eigenvalue pair"):
        solve_sylvester(A, B, np.array([[1.0]]), np.array([[1.0]]))


# -- full model solution properties -----------------------------------------

def test_plug_back_residuals(mono):
    assert first_order_residual(mono.derivatives, mono.first) < 1e-9
    assert second_order_residual(mono.derivatives, mono.second) < 1e-8


def test_zero_covariance_has_no_risk_term(mono):
    so = solve_second_order(mono.derivatives, mono.first, np.zeros((7, 7)))
    assert np.max(np.abs(so.g_ss)) == 0.0


def test_risk_term_linear_in_variances(mono):
    cov = mono.second.shock_cov
    doubled = solve_second_order(mono.derivatives, mono.first, 2 * cov)
    assert _rel(doubled.g_ss, 2 * mono.second.g_ss) < 1e-6
    parts = [solve_second_order(mono.derivatives, mono.first, np.diag(np.eye(7)[i] * np.diag(cov))).g_ss
             for i in range(7)]
    assert _rel(sum(parts), mono.second.g_ss) < 1e-6


def test_welfare_risk_term_negative(mono):
    assert mono.second.risk_constant[IDX["W_welfare"]] < 0


def test_non_psd_covariance_rejected(mono):
    with pytest.raises(PerturbationError, match="semidefinite"):
        solve_second_order(mono.derivatives, mono.first, -np.eye(7))


def test_step_matches_vectorised(mono):
    rng = np.random.default_rng(1)
    u = rng.standard_normal((25, 7)) * np.sqrt(np.diag(mono.second.shock_cov))
    path = simulate_pruned(mono.second, u)
    st = PrunedState.zero(mono.first.n)
    for t in range(25):
        st, levels = step_pruned(mono.second, st, u[t])
        assert np.allclose(levels, path[t], rtol=1e-12, atol=1e-12)


def test_zero_variance_second_order_equals_first_order():
    sol = solution(preset="none")
    u = np.zeros((50, 7))
    assert np.array_equal(simulate_pruned(sol.second, u), simulate_pruned(sol.first, u))
    assert np.allclose(simulate_pruned(sol.first, u), sol.first.steady, atol=0)


def test_second_order_gap_shrinks_quadratically():
    sol = solution(preset="none")
    e = np.random.default_rng(2).standard_normal((30, 7))
    gaps = [np.max(np.abs(simulate_pruned(sol.second, e * h) - simulate_pruned(sol.first, e * h)))
            for h in (1e-2, 1e-3)]
    assert gaps[0] / gaps[1] == pytest.approx(100, rel=0.01)


def test_zero_innovation_path_constant_at_risky_steady_state(mono):
    so, fo = mono.second, mono.first
    s2 = np.linalg.solve(np.eye(len(fo.states)) - fo.transition, so.risk_constant[fo.states])
    second = fo.g_y @ s2 + so.risk_constant
    start = PrunedState(np.zeros(fo.n), second)
    path = simulate_pruned(so, np.zeros((200, 7)), start)
    assert np.max(np.abs(path - path[0])) < 1e-10


def test_long_simulation_bounded(mono):
    rng = np.random.default_rng(11)
    u = rng.standard_normal((10_000, 7)) * np.sqrt(np.diag(mono.second.shock_cov))
    path = simulate_pruned(mono.second, u)
    assert np.all(np.isfinite(path))
    dev = np.abs(path[:, IDX["y"]] / mono.steady["y"] - 1)
    assert dev.max() < 1.0


def test_pruned_mean_matches_simulation():
    cal = calibrated().with_shocks({"a": 0.0064, "g": 0.016})
    sol = solve_model(cal, MONO)
    so = sol.second
    rng = np.random.default_rng(5)
    u = rng.standard_normal((40_000, 7)) * np.sqrt(np.diag(so.shock_cov))
    path = simulate_pruned(so, u)[1000:]
    theory = pruned_mean(so)
    i = IDX["c"]
    shift = theory[i] - sol.first.steady[i]
    assert abs(path[:, i].mean() - theory[i]) < 0.1 * abs(shift) + 3 * path[:, i].std() / math.sqrt(400)


def test_shock_covariance_order():
    cov = shock_covariance({s: i / 10 for i, s in enumerate(SHOCKS)}, SHOCKS)
    assert np.allclose(np.diag(cov), [(i / 10) ** 2 for i in range(7)])
