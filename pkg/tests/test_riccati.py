"""Backward solvers against hand-derivable solutions and cross-route checks.

Oracles used here:

* A=0, B=R=Q=1, G=0 and no diffusion makes the P equation dP/dt = P^2 - 1,
  P(T) = 0, solved by P(t) = tanh(T - t).
* The explicitly solvable scalar family (A=B=alpha=sigma=sigma0=R=G=1, Q=3,
  T=1, no control diffusion) has logistic solutions
      P(t)  = (3 - e^{4(t-T)}) / (1 + e^{4(t-T)}),
      Pi(t) = 3 / (1 + 2 e^{3(t-T)}),
  with Gamma = Pi - P and Phi identically zero.
* With constant P, Gamma supplied by hand, the Phi equation is a scalar
  linear constant-coefficient ODE solved by quadrature.
* Terminal-node gains need no integration at all: K_z(T), K_m(T), c_u(T)
  follow from G and the coefficients alone.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lqmfg
from lqmfg import (ConvergenceError, DivergenceError, LqMfgModel,
                   SingularSigmaError, TimeGrid, UsageError)
from lqmfg.riccati import (build_feedback, interval_midpoints,
                           sigma_sequence, solve_Gamma_direct,
                           solve_Gamma_via_Pi, solve_P_direct,
                           solve_P_iterative, solve_Phi, solve_riccati)
from lqmfg.scenario import preset


def closed_form_model(steps=100):
    return LqMfgModel.from_constants(
        TimeGrid(1.0, steps), A=1.0, B=1.0, alpha=1.0, sigma=1.0,
        sigma0=1.0, Q=3.0, R=1.0, G=1.0, x0=[1.0])


def logistic_P(t, T=1.0):
    e = np.exp(4.0 * (t - T))
    return (3.0 - e) / (1.0 + e)


def logistic_Pi(t, T=1.0):
    return 3.0 / (1.0 + 2.0 * np.exp(3.0 * (t - T)))


# ---------------------------------------------------------------- midpoints

def test_midpoints_exact_for_cubic_sequences():
    M = 17
    j = np.arange(M + 1) / M
    v = j ** 3 - 2.0 * j ** 2 + 0.5
    mids = interval_midpoints(v)
    jm = (np.arange(M) + 0.5) / M
    exact = jm ** 3 - 2.0 * jm ** 2 + 0.5
    assert np.max(np.abs(mids - exact)) < 1e-13


def test_midpoints_exact_for_constants_and_short_grids():
    for M in (1, 2, 3, 5):
        v = np.full((M + 1, 2, 2), 0.7)
        mids = interval_midpoints(v)
        assert mids.shape == (M, 2, 2)
        np.testing.assert_allclose(mids, np.full((M, 2, 2), 0.7),
                                   rtol=0, atol=1e-15)
    # linear sequences are also reproduced exactly on the short stencils
    for M in (1, 2):
        v = np.arange(M + 1, dtype=float)
        np.testing.assert_allclose(interval_midpoints(v),
                                   np.arange(M) + 0.5, atol=1e-14)


def test_midpoints_reject_empty_grid():
    with pytest.raises(UsageError):
        interval_midpoints(np.zeros((1, 1, 1)))


@settings(max_examples=50, deadline=None)
@given(coeffs=st.tuples(*[st.floats(-4.0, 4.0) for _ in range(4)]),
       M=st.integers(3, 40))
def test_midpoints_exact_for_every_cubic(coeffs, M):
    a, b, c, d = coeffs
    j = np.arange(M + 1) / M
    v = a * j ** 3 + b * j ** 2 + c * j + d
    jm = (np.arange(M) + 0.5) / M
    exact = a * jm ** 3 + b * jm ** 2 + c * jm + d
    scale = 1.0 + np.max(np.abs(v))
    assert np.max(np.abs(interval_midpoints(v) - exact)) < 1e-12 * scale


# ------------------------------------------------------------------ P route

def test_P_matches_tanh_solution():
    model = LqMfgModel.from_constants(TimeGrid(1.0, 400), A=0.0, B=1.0,
                                      Q=1.0, R=1.0, G=0.0, x0=[0.0])
    P = solve_P_direct(model)
    exact = np.tanh(1.0 - model.grid.nodes)
    assert np.max(np.abs(P[:, 0, 0] - exact)) < 1e-8


def test_P_matches_logistic_solution():
    model = closed_form_model(100)
    P = solve_P_direct(model)
    err = np.max(np.abs(P[:, 0, 0] - logistic_P(model.grid.nodes)))
    assert err < 1e-7


def test_P_error_shrinks_with_fourth_order():
    errs = []
    for M in (50, 100, 200):
        model = closed_form_model(M)
        P = solve_P_direct(model)
        errs.append(np.max(np.abs(P[:, 0, 0] - logistic_P(model.grid.nodes))))
    assert errs[0] / errs[1] > 8.0
    assert errs[1] / errs[2] > 8.0


def test_P_terminal_condition_and_symmetry():
    rng = np.random.default_rng(3)
    Mx = rng.uniform(-1.0, 1.0, (2, 2))
    G = Mx.T @ Mx
    model = LqMfgModel.from_constants(
        TimeGrid(1.0, 50), A=rng.uniform(-1, 1, (2, 2)),
        B=rng.uniform(-1, 1, (2, 1)), C=rng.uniform(-1, 1, (2, 2)),
        D=rng.uniform(-1, 1, (2, 1)), Q=np.eye(2), R=np.eye(1) * 2.0,
        G=G, x0=[0.0, 0.0])
    P = solve_P_direct(model)
    np.testing.assert_allclose(P[-1], 0.5 * (G + G.T), atol=1e-15)
    asym = np.max(np.abs(P - np.transpose(P, (0, 2, 1))))
    assert asym == 0.0
    assert np.linalg.eigvalsh(P).min() > -1e-10


def test_singular_weighting_reported_with_location():
    # R = -0.5 is invalid, but the solver itself must diagnose it (validation
    # is the caller's job): Sigma(T) = R < r_min at the very first evaluation.
    model = LqMfgModel.from_constants(TimeGrid(1.0, 10), A=0.0, B=1.0,
                                      Q=1.0, R=-0.5, G=0.0, x0=[0.0])
    with pytest.raises(SingularSigmaError) as err:
        solve_P_direct(model)
    assert err.value.t == pytest.approx(1.0)
    assert err.value.min_eig == pytest.approx(-0.5)


def test_divergence_reports_node():
    # lambda*h far outside the RK4 stability region blows the iteration up
    model = LqMfgModel.from_constants(TimeGrid(1.0, 4), A=100.0, B=1.0,
                                      Q=1.0, R=1.0, G=0.0, x0=[0.0])
    with pytest.raises(DivergenceError) as err:
        solve_P_direct(model)
    assert err.value.node is not None


# -------------------------------------------------------------- iterative P

def test_iterative_agrees_with_direct():
    model = closed_form_model(100)
    P_dir = solve_P_direct(model)
    P_it, info = solve_P_iterative(model)
    assert info.iterations >= 2
    assert info.final_residual < 1e-10
    # residuals decrease monotonically once the scheme is in its basin
    assert all(a >= b for a, b in zip(info.residuals, info.residuals[1:]))
    assert np.max(np.abs(P_dir - P_it)) < 1e-8


def test_iterative_starts_above_solution():
    # first Lyapunov iterate (uncontrolled) must dominate the solution
    model = closed_form_model(50)
    P_it, _ = solve_P_iterative(model)
    from lqmfg.riccati import _solve_lyapunov, _node_coeffs
    cs = _node_coeffs(model)
    P0 = _solve_lyapunov(model.grid, model.G,
                         lambda j, stage: (cs[j].A, cs[j].C, cs[j].C0, cs[j].Q))
    gap = P0 - P_it
    assert np.linalg.eigvalsh(0.5 * (gap + np.transpose(gap, (0, 2, 1)))).min() \
        > -1e-10


def test_iteration_cap_raises():
    with pytest.raises(ConvergenceError) as err:
        solve_P_iterative(closed_form_model(50), max_iters=2)
    assert err.value.iterations == 2
    assert err.value.residual > err.value.tol


# ----------------------------------------------------------- Gamma and Phi

def test_gamma_from_logistic_difference():
    model = closed_form_model(100)
    P = solve_P_direct(model)
    Gam = solve_Gamma_direct(model, P)
    t = model.grid.nodes
    exact = logistic_Pi(t) - logistic_P(t)
    assert np.max(np.abs(Gam[:, 0, 0] - exact)) < 1e-7
    assert np.max(np.abs(Gam[-1])) == 0.0


def test_gamma_via_pi_matches_direct_on_structured_models():
    rng = np.random.default_rng(11)
    for trial in range(5):
        n = int(rng.integers(1, 3))
        Mx = rng.uniform(-1, 1, (n, n))
        G = Mx.T @ Mx
        Mq = rng.uniform(-1, 1, (n, n))
        model = LqMfgModel.from_constants(
            TimeGrid(1.0, 200),
            A=rng.uniform(-1, 1, (n, n)), B=rng.uniform(-1, 1, (n, 1)),
            alpha=float(rng.uniform(-1, 1)) * np.eye(n),
            C=rng.uniform(-1, 1, (n, n)), D=rng.uniform(-1, 1, (n, 1)),
            sigma=rng.uniform(-1, 1, (n, 1)),
            Q=Mq.T @ Mq, R=1.0 + float(rng.uniform(0, 1)), G=G,
            x0=np.zeros(n))
        P = solve_P_direct(model)
        Gam = solve_Gamma_direct(model, P)
        Gam_pi, report = solve_Gamma_via_Pi(model, P)
        assert report.condition_ok  # C0 = 0 kills the cross term
        assert np.max(np.abs(Gam - Gam_pi)) < 1e-8, f"trial {trial}"


def test_pi_route_rejects_nonscalar_alpha():
    model = LqMfgModel.from_constants(
        TimeGrid(1.0, 10), A=np.eye(2), B=np.ones((2, 1)),
        alpha=np.diag([1.0, 2.0]), Q=np.eye(2), R=1.0, G=np.eye(2),
        x0=[0.0, 0.0])
    P = solve_P_direct(model)
    with pytest.raises(UsageError):
        solve_Gamma_via_Pi(model, P)


def test_pi_route_rejects_nonzero_beta():
    model = closed_form_model(10)
    model = LqMfgModel.from_constants(model.grid, A=1.0, B=1.0, alpha=1.0,
                                      beta=0.3, Q=3.0, R=1.0, G=1.0,
                                      x0=[1.0])
    P = solve_P_direct(model)
    with pytest.raises(UsageError):
        solve_Gamma_via_Pi(model, P)


def test_phi_constant_coefficient_oracle_drift_channel():
    # With P = 0.7 and Gamma = 0.2 held constant, b = 1, the Phi equation is
    #   dPhi/dt = -(lam * Phi + f),  Phi(T) = 0,
    # lam = A - S B / Sigma - Gamma B^2 / Sigma = 0.5 - 0.7 - 0.2 = -0.4,
    # f = (P + Gamma) b = 0.9, so Phi(t) = (f / lam)(e^{lam (T - t)} - 1).
    grid = TimeGrid(1.0, 200)
    model = LqMfgModel.from_constants(grid, A=0.5, B=1.0, b=1.0, Q=1.0,
                                      R=1.0, G=0.0, x0=[0.0])
    cnt = grid.node_count
    P = np.full((cnt, 1, 1), 0.7)
    Gam = np.full((cnt, 1, 1), 0.2)
    Phi = solve_Phi(model, P, Gam)
    lam, f = -0.4, 0.9
    exact = (f / lam) * (np.exp(lam * (1.0 - grid.nodes)) - 1.0)
    assert np.max(np.abs(Phi[:, 0] - exact)) < 1e-10


def test_phi_constant_coefficient_oracle_diffusion_channel():
    # Same scheme but the forcing enters through the individual-noise channel:
    # A=0.2, B=1, C=0.3, D=0.5, sigma=2, R=1, P=0.6, Gamma=0.1 constant.
    grid = TimeGrid(1.0, 200)
    model = LqMfgModel.from_constants(grid, A=0.2, B=1.0, C=0.3, D=0.5,
                                      sigma=2.0, Q=1.0, R=1.0, G=0.0,
                                      x0=[0.0])
    cnt = grid.node_count
    Pv, Gv = 0.6, 0.1
    P = np.full((cnt, 1, 1), Pv)
    Gam = np.full((cnt, 1, 1), Gv)
    Phi = solve_Phi(model, P, Gam)
    Sig = 1.0 + 0.5 ** 2 * Pv
    S = Pv * 1.0 + 0.3 * Pv * 0.5
    lam = 0.2 - S / Sig - Gv / Sig
    f = (0.3 - S * 0.5 / Sig - Gv * 0.5 / Sig) * Pv * 2.0
    exact = (f / lam) * (np.exp(lam * (1.0 - grid.nodes)) - 1.0)
    assert np.max(np.abs(Phi[:, 0] - exact)) < 1e-10


def test_phi_zero_for_closed_form_family():
    model = closed_form_model(100)
    P = solve_P_direct(model)
    Gam = solve_Gamma_direct(model, P)
    Phi = solve_Phi(model, P, Gam)
    assert np.max(np.abs(Phi)) == 0.0  # zero forcing propagates exactly


# ------------------------------------------------------------ feedback law

def test_terminal_gains_need_no_integration():
    # At t = T the gains follow from G alone:
    # Sigma(T) = 2.5 + 2.5^2*5 + 6^2*5 = 213.75,
    # K_z(T) = -(2.8*5 + 2.5*5*0.6)/213.75 = -21.5/213.75,
    # K_m(T) = 0 (Gamma(T)=0, beta=beta0=0),
    # c_u(T) = -(2.5*5*0.8 + 6*5*0.3)/213.75 = -19/213.75.
    cfg = preset("netsec-numeric")
    model = cfg.model.build(50)
    summary = solve_riccati(model)
    law = summary.feedback
    assert summary.solution.Sigma[-1, 0, 0] == pytest.approx(213.75, abs=1e-12)
    assert law.K_z[-1, 0, 0] == pytest.approx(-21.5 / 213.75, abs=1e-12)
    assert law.K_m[-1, 0, 0] == pytest.approx(0.0, abs=1e-15)
    assert law.c_u[-1, 0] == pytest.approx(-19.0 / 213.75, abs=1e-12)


def test_feedback_shapes():
    model = LqMfgModel.from_constants(
        TimeGrid(1.0, 20), A=np.eye(2) * -0.5, B=np.ones((2, 1)),
        Q=np.eye(2), R=2.0, G=np.eye(2), x0=[0.0, 0.0])
    summary = solve_riccati(model)
    assert summary.feedback.K_z.shape == (21, 1, 2)
    assert summary.feedback.K_m.shape == (21, 1, 2)
    assert summary.feedback.c_u.shape == (21, 1)
    assert summary.solution.Sigma.shape == (21, 1, 1)


def test_sigma_sequence_matches_definition():
    model = closed_form_model(20)
    P = solve_P_direct(model)
    Sig = sigma_sequence(model, P)
    np.testing.assert_allclose(Sig[:, 0, 0], 1.0, atol=1e-15)  # D = D0 = 0


# ----------------------------------------------------------- orchestration

def test_solve_riccati_both_routes_bookkeeping():
    model = closed_form_model(100)
    summary = solve_riccati(model, p_method="both", gamma_method="both")
    assert summary.p_agreement is not None and summary.p_agreement < 1e-8
    assert summary.gamma_agreement is not None
    assert summary.gamma_agreement < 1e-7
    assert summary.iterative_iterations >= 2
    assert summary.pi_report is not None and summary.pi_report.condition_ok
    assert summary.pi_error is None


def test_solve_riccati_records_pi_precondition_failure():
    model = LqMfgModel.from_constants(TimeGrid(1.0, 20), A=1.0, B=1.0,
                                      alpha=1.0, beta=0.4, Q=3.0, R=1.0,
                                      G=1.0, x0=[1.0])
    summary = solve_riccati(model, gamma_method="both")
    assert summary.pi_error is not None
    assert "beta" in summary.pi_error
    assert summary.gamma_agreement is None
    assert summary.solution.Gamma.shape == (21, 1, 1)  # direct result kept


def test_solve_riccati_rejects_unknown_methods():
    model = closed_form_model(10)
    with pytest.raises(UsageError):
        solve_riccati(model, p_method="magic")
    with pytest.raises(UsageError):
        solve_riccati(model, gamma_method="magic")


def test_direct_solve_is_fast_enough_for_preset_grid():
    model = closed_form_model(1000)
    solve_riccati(model)  # warm-up
    t0 = time.perf_counter()
    solve_riccati(model)
    assert time.perf_counter() - t0 < 1.0
