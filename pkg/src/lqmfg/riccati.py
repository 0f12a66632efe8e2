"""Backward solvers for the coupled Riccati system and the feedback gains.

Three routes are implemented:

* ``solve_P_direct`` integrates the quadratic matrix equation for P backward
  with classical RK4.  The equation is non-standard: the control enters both
  diffusion channels, so the weighting is Sigma = R + D'PD + D0'PD0 rather
  than R alone.
* ``solve_P_iterative`` runs the monotone fixed-point scheme: a linear
  Lyapunov equation per iterate, with gains recomputed from the previous
  iterate.  The iterates decrease in the PSD order, which is checked.
* ``solve_Gamma_via_Pi`` substitutes Pi = P + Gamma, which turns the
  non-symmetric Gamma equation into a symmetric Riccati equation whenever
  alpha is a scalar multiple of the identity and beta = beta0 = 0.

``solve_Gamma_direct`` and ``solve_Phi`` complete the system, and
``build_feedback`` produces the decentralized gains (K_z, K_m, c_u).

Coefficient schedules are piecewise-constant per grid interval (left node).
Between nodes, previously computed matrix sequences (P when solving for
Gamma/Phi/Pi, the current iterate inside the Lyapunov scheme) are evaluated at
interval midpoints with a cubic 4-point stencil; holding them frozen at the
left node instead would drop the integrator to first order and miss the
tolerances the closed-form checks require.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg

from .errors import (ConvergenceError, DivergenceError, MonotonicityError,
                     SingularSigmaError, UsageError)
from .model import TOL_PSD, LqMfgModel, TimeGrid

DEFAULT_MAX_ITERS = 100
DEFAULT_ITER_TOL = 1e-10
PRECONDITION_ATOL = 1e-12


def _sym(X):
    return 0.5 * (X + X.T)


@dataclasses.dataclass(frozen=True)
class _C:
    """Coefficient values on one grid interval."""

    A: np.ndarray
    B: np.ndarray
    alpha: np.ndarray
    b: np.ndarray
    C: np.ndarray
    D: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    C0: np.ndarray
    D0: np.ndarray
    beta0: np.ndarray
    sigma0: np.ndarray
    Q: np.ndarray
    R: np.ndarray


def _node_coeffs(model: LqMfgModel):
    names = ("A", "B", "alpha", "b", "C", "D", "beta", "sigma",
             "C0", "D0", "beta0", "sigma0", "Q", "R")
    vals = {name: getattr(model, name).values for name in names}
    return [_C(**{name: vals[name][j] for name in names})
            for j in range(model.grid.node_count)]


def _spd_solver(Sig, r_min, t):
    """Return X -> Sigma^{-1} X via Cholesky, guarding the r_min floor."""
    S = _sym(np.asarray(Sig, float))
    w = np.linalg.eigvalsh(S)
    if w[0] < r_min:
        raise SingularSigmaError(t, w[0], r_min)
    cf = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
    return lambda X: scipy.linalg.cho_solve(cf, X, check_finite=False)


def interval_midpoints(values) -> np.ndarray:
    """Values of a node sequence at interval midpoints, cubic 4-point stencil.

    Input shape (M+1, ...), output (M, ...).  Exact for polynomials up to
    degree 3 in the node index, hence O(h^4) accurate for smooth sequences;
    constant sequences are reproduced exactly.
    """
    v = np.asarray(values, dtype=float)
    M = v.shape[0] - 1
    if M < 1:
        raise UsageError("need at least one interval")
    mids = np.empty((M,) + v.shape[1:])
    if M == 1:
        mids[0] = 0.5 * (v[0] + v[1])
    elif M == 2:
        mids[0] = (3.0 * v[0] + 6.0 * v[1] - v[2]) / 8.0
        mids[1] = (-v[0] + 6.0 * v[1] + 3.0 * v[2]) / 8.0
    else:
        mids[1:-1] = (-v[:-3] + 9.0 * v[1:-2] + 9.0 * v[2:-1] - v[3:]) / 16.0
        mids[0] = (5.0 * v[0] + 15.0 * v[1] - 5.0 * v[2] + v[3]) / 16.0
        mids[-1] = (v[-4] - 5.0 * v[-3] + 15.0 * v[-2] + 5.0 * v[-1]) / 16.0
    return mids


def _sigma_of(P, c):
    return c.R + c.D.T @ P @ c.D + c.D0.T @ P @ c.D0


def _p_rhs(P, c, r_min, t):
    solve = _spd_solver(_sigma_of(P, c), r_min, t)
    S = P @ c.B + c.C.T @ P @ c.D + c.C0.T @ P @ c.D0
    return -(P @ c.A + c.A.T @ P + c.C.T @ P @ c.C + c.C0.T @ P @ c.C0
             + c.Q - S @ solve(S.T))


def _gamma_rhs(Gam, P, c, r_min, t):
    solve = _spd_solver(_sigma_of(P, c), r_min, t)
    S = P @ c.B + c.C.T @ P @ c.D + c.C0.T @ P @ c.D0
    Th = c.D.T @ P @ c.beta + c.D0.T @ P @ c.beta0
    Acl = c.A - c.B @ solve(S.T)
    bracket = (Gam @ Acl + Acl.T @ Gam
               - Gam @ (c.B @ solve(Th))
               + c.C.T @ P @ c.beta + c.C0.T @ P @ c.beta0
               - S @ solve(Th)
               + (P + Gam) @ c.alpha
               - Gam @ c.B @ solve(c.B.T @ Gam))
    return c.Q - bracket


def _phi_rhs(Phi, P, Gam, c, r_min, t):
    solve = _spd_solver(_sigma_of(P, c), r_min, t)
    S = P @ c.B + c.C.T @ P @ c.D + c.C0.T @ P @ c.D0
    SigBt = solve(c.B.T)
    SigDt = solve(c.D.T)
    SigD0t = solve(c.D0.T)
    GB = Gam @ c.B
    lam = c.A.T - S @ SigBt - GB @ SigBt
    forcing = ((c.C.T - S @ SigDt - GB @ SigDt) @ (P @ c.sigma)
               + (c.C0.T - S @ SigD0t - GB @ SigD0t) @ (P @ c.sigma0)
               + (P + Gam) @ c.b)
    return -(lam @ Phi + forcing[:, 0])


def _pi_rhs(Pi, P, c, delta, r_min, t):
    solve = _spd_solver(_sigma_of(P, c), r_min, t)
    W = c.D.T @ P @ c.C + c.D0.T @ P @ c.C0
    Ahat = c.A - c.B @ solve(W)
    PD = P @ c.D
    PD0 = P @ c.D0
    SigDtP = solve(c.D.T @ P)
    SigD0tP = solve(c.D0.T @ P)
    M = (c.C.T @ (P - PD @ SigDtP) @ c.C
         + c.C0.T @ (P - PD0 @ SigD0tP) @ c.C0
         - c.C.T @ PD @ (SigD0tP @ c.C0)
         - c.C0.T @ PD0 @ (SigDtP @ c.C))
    return -(Pi @ Ahat + Ahat.T @ Pi + delta * Pi + M
             - Pi @ c.B @ solve(c.B.T @ Pi))


def solve_P_direct(model: LqMfgModel) -> np.ndarray:
    """Integrate the quadratic equation for P backward from P(T) = G.

    Classical RK4 on the grid step, symmetrizing after every step.  Returns
    the (M+1, n, n) node sequence.  Raises ``SingularSigmaError`` if the
    control weighting drops below r_min at any evaluation, and
    ``DivergenceError`` if an iterate goes non-finite or loses positive
    semidefiniteness beyond the tolerance.
    """
    grid = model.grid
    M, h = grid.steps, grid.h
    nodes = grid.nodes
    cs = _node_coeffs(model)
    r_min = model.r_min
    P = np.empty((M + 1, model.n, model.n))
    P[M] = _sym(model.G)
    for j in range(M - 1, -1, -1):
        c = cs[j]
        t1, tm, t0 = nodes[j + 1], nodes[j] + 0.5 * h, nodes[j]
        y = P[j + 1]
        k1 = _p_rhs(y, c, r_min, t1)
        k2 = _p_rhs(y - 0.5 * h * k1, c, r_min, tm)
        k3 = _p_rhs(y - 0.5 * h * k2, c, r_min, tm)
        k4 = _p_rhs(y - h * k3, c, r_min, t0)
        Pj = _sym(y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if not np.isfinite(Pj).all():
            raise DivergenceError("P diverged", node=j, t=nodes[j])
        w_min = float(np.linalg.eigvalsh(Pj)[0])
        if w_min < -TOL_PSD:
            raise DivergenceError("P lost positive semidefiniteness",
                                  node=j, t=nodes[j],
                                  detail=f"min eigenvalue {w_min:.3e}")
        P[j] = Pj
    return P


def _lyap_rhs(P, Ah, Ch, C0h, Qh):
    return -(P @ Ah + Ah.T @ P + Ch.T @ P @ Ch + C0h.T @ P @ C0h + Qh)


def _solve_lyapunov(grid: TimeGrid, G, coeff_at):
    """Backward RK4 for the linear Lyapunov equation.

    ``coeff_at(j, stage)`` returns (A_hat, C_hat, C0_hat, Q_hat) for
    stage in {"right", "mid", "left"} of interval j.
    """
    M, h = grid.steps, grid.h
    n = G.shape[0]
    P = np.empty((M + 1, n, n))
    P[M] = _sym(G)
    for j in range(M - 1, -1, -1):
        right = coeff_at(j, "right")
        mid = coeff_at(j, "mid")
        left = coeff_at(j, "left")
        y = P[j + 1]
        k1 = _lyap_rhs(y, *right)
        k2 = _lyap_rhs(y - 0.5 * h * k1, *mid)
        k3 = _lyap_rhs(y - 0.5 * h * k2, *mid)
        k4 = _lyap_rhs(y - h * k3, *left)
        Pj = _sym(y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if not np.isfinite(Pj).all():
            raise DivergenceError("Lyapunov iterate diverged", node=j,
                                  t=grid.nodes[j])
        P[j] = Pj
    return P


def _psi_transform(P_val, c, r_min, t):
    """(A_hat, C_hat, C0_hat, Q_hat) for the Lyapunov step, from one P value."""
    solve = _spd_solver(_sigma_of(P_val, c), r_min, t)
    Psi = solve((P_val @ c.B + c.C.T @ P_val @ c.D + c.C0.T @ P_val @ c.D0).T)
    return (c.A - c.B @ Psi, c.C - c.D @ Psi, c.C0 - c.D0 @ Psi,
            c.Q + Psi.T @ c.R @ Psi)


@dataclasses.dataclass(frozen=True)
class IterativeSolverState:
    """One iterate of the Lyapunov fixed-point scheme, with its transforms."""

    index: int
    P: np.ndarray        # (M+1, n, n)
    Psi: np.ndarray      # (M+1, k, n)
    A_hat: np.ndarray    # (M+1, n, n)
    C_hat: np.ndarray
    C0_hat: np.ndarray
    Q_hat: np.ndarray

    @classmethod
    def from_iterate(cls, model: LqMfgModel, P, index: int) -> "IterativeSolverState":
        P = np.asarray(P, float)
        cs = _node_coeffs(model)
        nodes = model.grid.nodes
        n, k, cnt = model.n, model.k, model.grid.node_count
        Psi = np.empty((cnt, k, n))
        A_hat = np.empty((cnt, n, n))
        C_hat = np.empty((cnt, n, n))
        C0_hat = np.empty((cnt, n, n))
        Q_hat = np.empty((cnt, n, n))
        for j in range(cnt):
            c = cs[j]
            solve = _spd_solver(_sigma_of(P[j], c), model.r_min, nodes[j])
            Psi[j] = solve((P[j] @ c.B + c.C.T @ P[j] @ c.D + c.C0.T @ P[j] @ c.D0).T)
            A_hat[j] = c.A - c.B @ Psi[j]
            C_hat[j] = c.C - c.D @ Psi[j]
            C0_hat[j] = c.C0 - c.D0 @ Psi[j]
            Q_hat[j] = c.Q + Psi[j].T @ c.R @ Psi[j]
        return cls(index, P, Psi, A_hat, C_hat, C0_hat, Q_hat)


@dataclasses.dataclass(frozen=True)
class IterativeInfo:
    iterations: int
    residuals: tuple[float, ...]

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def solve_P_iterative(model: LqMfgModel, max_iters: int = DEFAULT_MAX_ITERS,
                      tol: float = DEFAULT_ITER_TOL):
    """Monotone Lyapunov iteration for P.

    P_0 solves the plain Lyapunov equation with weight Q; each subsequent
    iterate re-linearizes around the previous one (gain Psi_i) and solves a
    Lyapunov equation with weight Q + Psi' R Psi.  The sequence decreases in
    the PSD order down to the Riccati solution.

    Returns (P, IterativeInfo).  Raises ``MonotonicityError`` if an iterate
    fails to sit below its predecessor beyond tolerance, ``ConvergenceError``
    if max_iters is exhausted.
    """
    grid = model.grid
    cs = _node_coeffs(model)
    nodes = grid.nodes
    r_min = model.r_min
    mid_times = nodes[:-1] + 0.5 * grid.h

    def plain_coeffs(j, stage):
        c = cs[j]
        return (c.A, c.C, c.C0, c.Q)

    P_prev = _solve_lyapunov(grid, model.G, plain_coeffs)

    residuals = []
    for i in range(max_iters):
        P_mid = interval_midpoints(P_prev)

        def transformed(j, stage, _P=P_prev, _Pm=P_mid):
            c = cs[j]
            if stage == "right":
                return _psi_transform(_P[j + 1], c, r_min, nodes[j + 1])
            if stage == "mid":
                return _psi_transform(_Pm[j], c, r_min, mid_times[j])
            return _psi_transform(_P[j], c, r_min, nodes[j])

        P_next = _solve_lyapunov(grid, model.G, transformed)

        diff = P_prev - P_next
        min_eigs = np.linalg.eigvalsh(0.5 * (diff + np.transpose(diff, (0, 2, 1))))[:, 0]
        worst = int(np.argmin(min_eigs))
        if min_eigs[worst] < -TOL_PSD:
            raise MonotonicityError(i + 1, worst, min_eigs[worst])

        res = float(np.sqrt((diff ** 2).sum(axis=(1, 2))).max())
        residuals.append(res)
        P_prev = P_next
        if res < tol:
            return P_next, IterativeInfo(i + 1, tuple(residuals))

    raise ConvergenceError(max_iters, residuals[-1], tol)


def solve_Gamma_direct(model: LqMfgModel, P) -> np.ndarray:
    """Integrate the mean-field correction Gamma backward from Gamma(T) = 0.

    ``P`` is the node sequence from either P-solver; midpoint values are
    interpolated.  No symmetrization is applied: the equation is not symmetric
    in general, and the output may legitimately be non-symmetric.
    """
    P = np.asarray(P, float)
    grid = model.grid
    M, h = grid.steps, grid.h
    nodes = grid.nodes
    cs = _node_coeffs(model)
    r_min = model.r_min
    Pm = interval_midpoints(P)
    Gam = np.empty_like(P)
    Gam[M] = 0.0
    for j in range(M - 1, -1, -1):
        c = cs[j]
        t1, tm, t0 = nodes[j + 1], nodes[j] + 0.5 * h, nodes[j]
        y = Gam[j + 1]
        k1 = _gamma_rhs(y, P[j + 1], c, r_min, t1)
        k2 = _gamma_rhs(y - 0.5 * h * k1, Pm[j], c, r_min, tm)
        k3 = _gamma_rhs(y - 0.5 * h * k2, Pm[j], c, r_min, tm)
        k4 = _gamma_rhs(y - h * k3, P[j], c, r_min, t0)
        Gj = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(Gj).all():
            raise DivergenceError("Gamma diverged", node=j, t=nodes[j])
        Gam[j] = Gj
    return Gam


@dataclasses.dataclass(frozen=True)
class PiTransformReport:
    """Per-node check of the cross-term condition backing the Pi substitution."""

    delta: float
    Pi: np.ndarray                  # (M+1, n, n)
    condition_margins: np.ndarray   # (M+1,) min eigenvalue of the cross term

    @property
    def condition_ok(self) -> bool:
        return bool(self.condition_margins.min() >= -TOL_PSD)

    @property
    def violated_nodes(self) -> np.ndarray:
        return np.nonzero(self.condition_margins < -TOL_PSD)[0]


def solve_Gamma_via_Pi(model: LqMfgModel, P):
    """Gamma through the substitution Pi = P + Gamma.

    Requires alpha = delta*I for a scalar delta and beta = beta0 = 0 (the
    structure that makes the Pi equation symmetric); raises ``UsageError``
    otherwise.  Integrates Pi backward from Pi(T) = G with symmetrization and
    a PSD guard, and evaluates the cross-term condition
    -C'PD Sigma^{-1} D0'PC0 - C0'PD0 Sigma^{-1} D'PC >= 0 at every node,
    recording the margin per node (a violation is reported, not fatal).

    Returns (Gamma, PiTransformReport).
    """
    P = np.asarray(P, float)
    grid = model.grid
    n = model.n
    alpha = model.alpha.values
    delta = float(alpha[0, 0, 0]) if n >= 1 else 0.0
    eye = np.eye(n)
    if np.abs(alpha - delta * eye).max() > PRECONDITION_ATOL:
        raise UsageError("Pi substitution requires alpha = delta * identity "
                         "with one scalar delta at every node")
    if np.abs(model.beta.values).max() > PRECONDITION_ATOL or \
       np.abs(model.beta0.values).max() > PRECONDITION_ATOL:
        raise UsageError("Pi substitution requires beta = beta0 = 0")

    M, h = grid.steps, grid.h
    nodes = grid.nodes
    cs = _node_coeffs(model)
    r_min = model.r_min
    Pm = interval_midpoints(P)

    margins = np.empty(M + 1)
    for j in range(M + 1):
        c = cs[j]
        solve = _spd_solver(_sigma_of(P[j], c), r_min, nodes[j])
        cross = (-c.C.T @ (P[j] @ c.D) @ solve(c.D0.T @ P[j] @ c.C0)
                 - c.C0.T @ (P[j] @ c.D0) @ solve(c.D.T @ P[j] @ c.C))
        margins[j] = float(np.linalg.eigvalsh(_sym(cross))[0])

    Pi = np.empty_like(P)
    Pi[M] = _sym(model.G)
    for j in range(M - 1, -1, -1):
        c = cs[j]
        t1, tm, t0 = nodes[j + 1], nodes[j] + 0.5 * h, nodes[j]
        y = Pi[j + 1]
        k1 = _pi_rhs(y, P[j + 1], c, delta, r_min, t1)
        k2 = _pi_rhs(y - 0.5 * h * k1, Pm[j], c, delta, r_min, tm)
        k3 = _pi_rhs(y - 0.5 * h * k2, Pm[j], c, delta, r_min, tm)
        k4 = _pi_rhs(y - h * k3, P[j], c, delta, r_min, t0)
        Pij = _sym(y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if not np.isfinite(Pij).all():
            raise DivergenceError("Pi diverged", node=j, t=nodes[j])
        w_min = float(np.linalg.eigvalsh(Pij)[0])
        if w_min < -TOL_PSD:
            raise DivergenceError("Pi lost positive semidefiniteness",
                                  node=j, t=nodes[j],
                                  detail=f"min eigenvalue {w_min:.3e}")
        Pi[j] = Pij

    report = PiTransformReport(delta=delta, Pi=Pi, condition_margins=margins)
    return Pi - P, report


def solve_Phi(model: LqMfgModel, P, Gamma) -> np.ndarray:
    """Integrate the affine offset Phi backward from Phi(T) = 0.

    Linear in Phi once P and Gamma are known; both are interpolated at
    interval midpoints for the RK4 stages.  Returns an (M+1, n) array.
    """
    P = np.asarray(P, float)
    Gamma = np.asarray(Gamma, float)
    grid = model.grid
    M, h = grid.steps, grid.h
    nodes = grid.nodes
    cs = _node_coeffs(model)
    r_min = model.r_min
    Pm = interval_midpoints(P)
    Gm = interval_midpoints(Gamma)
    Phi = np.empty((M + 1, model.n))
    Phi[M] = 0.0
    for j in range(M - 1, -1, -1):
        c = cs[j]
        t1, tm, t0 = nodes[j + 1], nodes[j] + 0.5 * h, nodes[j]
        y = Phi[j + 1]
        k1 = _phi_rhs(y, P[j + 1], Gamma[j + 1], c, r_min, t1)
        k2 = _phi_rhs(y - 0.5 * h * k1, Pm[j], Gm[j], c, r_min, tm)
        k3 = _phi_rhs(y - 0.5 * h * k2, Pm[j], Gm[j], c, r_min, tm)
        k4 = _phi_rhs(y - h * k3, P[j], Gamma[j], c, r_min, t0)
        Pj = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(Pj).all():
            raise DivergenceError("Phi diverged", node=j, t=nodes[j])
        Phi[j] = Pj
    return Phi


def sigma_sequence(model: LqMfgModel, P) -> np.ndarray:
    """Sigma(t_j) = R + D'PD + D0'PD0 at every node, shape (M+1, k, k)."""
    P = np.asarray(P, float)
    cs = _node_coeffs(model)
    out = np.empty((model.grid.node_count, model.k, model.k))
    for j in range(model.grid.node_count):
        out[j] = _sigma_of(P[j], cs[j])
    return out


@dataclasses.dataclass(frozen=True)
class RiccatiSolution:
    """Node sequences of the full backward system plus the control weighting."""

    grid: TimeGrid
    P: np.ndarray       # (M+1, n, n), symmetric PSD
    Gamma: np.ndarray   # (M+1, n, n), possibly non-symmetric
    Phi: np.ndarray     # (M+1, n)
    Sigma: np.ndarray   # (M+1, k, k)


@dataclasses.dataclass(frozen=True)
class FeedbackLaw:
    """Decentralized feedback u_i(t) = K_z(t) zhat_i(t) + K_m(t) Em(t) + c_u(t)."""

    grid: TimeGrid
    K_z: np.ndarray   # (M+1, k, n)
    K_m: np.ndarray   # (M+1, k, n)
    c_u: np.ndarray   # (M+1, k)


def build_feedback(model: LqMfgModel, sol: RiccatiSolution) -> FeedbackLaw:
    """Gains from the solved system, per node.

    K_z = -Sigma^{-1}(B'P + D'PC + D0'PC0),
    K_m = -Sigma^{-1}(B'Gamma + D'P beta + D0'P beta0),
    c_u = -Sigma^{-1}(B'Phi + D'P sigma + D0'P sigma0).
    """
    cs = _node_coeffs(model)
    nodes = model.grid.nodes
    cnt = model.grid.node_count
    n, k = model.n, model.k
    K_z = np.empty((cnt, k, n))
    K_m = np.empty((cnt, k, n))
    c_u = np.empty((cnt, k))
    for j in range(cnt):
        c = cs[j]
        P, Gam, Phi = sol.P[j], sol.Gamma[j], sol.Phi[j]
        solve = _spd_solver(sol.Sigma[j], model.r_min, nodes[j])
        K_z[j] = -solve(c.B.T @ P + c.D.T @ P @ c.C + c.D0.T @ P @ c.C0)
        K_m[j] = -solve(c.B.T @ Gam + c.D.T @ P @ c.beta + c.D0.T @ P @ c.beta0)
        c_u[j] = -solve(c.B.T @ Phi + (c.D.T @ P @ c.sigma
                                       + c.D0.T @ P @ c.sigma0)[:, 0])
    law = FeedbackLaw(grid=model.grid, K_z=K_z, K_m=K_m, c_u=c_u)
    for name, arr in (("K_z", K_z), ("K_m", K_m), ("c_u", c_u)):
        if not np.isfinite(arr).all():
            raise DivergenceError(f"feedback component {name} is not finite")
    return law


@dataclasses.dataclass(frozen=True)
class SolveSummary:
    """Full solve with optional cross-validation between solution routes."""

    solution: RiccatiSolution
    feedback: FeedbackLaw
    p_method: str
    gamma_method: str
    p_agreement: float | None = None
    gamma_agreement: float | None = None
    iterative_iterations: int | None = None
    pi_report: PiTransformReport | None = None
    pi_error: str | None = None


def solve_riccati(model: LqMfgModel, p_method: str = "direct",
                  gamma_method: str = "direct",
                  max_iters: int = DEFAULT_MAX_ITERS,
                  tol: float = DEFAULT_ITER_TOL) -> SolveSummary:
    """Solve the full system and build the feedback law.

    ``p_method``/``gamma_method`` accept "direct", "iterative"/"pi_transform",
    or "both".  With "both" the primary output comes from the direct route and
    the maximum per-node Frobenius deviation between routes is recorded.  When
    gamma_method="both" and the Pi precondition fails, the direct result is
    kept and the precondition message is recorded instead of raising.
    """
    if p_method not in ("direct", "iterative", "both"):
        raise UsageError(f"unknown p_method '{p_method}'")
    if gamma_method not in ("direct", "pi_transform", "both"):
        raise UsageError(f"unknown gamma_method '{gamma_method}'")

    p_agreement = None
    iterations = None
    if p_method == "direct":
        P = solve_P_direct(model)
    elif p_method == "iterative":
        P, info = solve_P_iterative(model, max_iters=max_iters, tol=tol)
        iterations = info.iterations
    else:
        P = solve_P_direct(model)
        P_it, info = solve_P_iterative(model, max_iters=max_iters, tol=tol)
        iterations = info.iterations
        p_agreement = float(np.sqrt(((P - P_it) ** 2).sum(axis=(1, 2))).max())

    gamma_agreement = None
    pi_report = None
    pi_error = None
    if gamma_method == "direct":
        Gamma = solve_Gamma_direct(model, P)
    elif gamma_method == "pi_transform":
        Gamma, pi_report = solve_Gamma_via_Pi(model, P)
    else:
        Gamma = solve_Gamma_direct(model, P)
        try:
            Gamma_pi, pi_report = solve_Gamma_via_Pi(model, P)
        except UsageError as exc:
            pi_error = str(exc)
        else:
            gamma_agreement = float(
                np.sqrt(((Gamma - Gamma_pi) ** 2).sum(axis=(1, 2))).max())

    Phi = solve_Phi(model, P, Gamma)
    Sigma = sigma_sequence(model, P)
    sol = RiccatiSolution(grid=model.grid, P=P, Gamma=Gamma, Phi=Phi, Sigma=Sigma)
    law = build_feedback(model, sol)
    return SolveSummary(solution=sol, feedback=law, p_method=p_method,
                        gamma_method=gamma_method, p_agreement=p_agreement,
                        gamma_agreement=gamma_agreement,
                        iterative_iterations=iterations,
                        pi_report=pi_report, pi_error=pi_error)
