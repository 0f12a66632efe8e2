"""Data model for linear-quadratic mean-field games with common noise.

A population of exchangeable agents follows

    dx_i = [A x_i + B u_i + alpha x_avg + b] dt
         + [C x_i + D u_i + beta x_avg + sigma] dW_i
         + [C0 x_i + D0 u_i + beta0 x_avg + sigma0] dW0,

where ``x_avg`` is the population state-average, ``W_i`` the agent's own
Brownian motion and ``W0`` a Brownian motion common to all agents.  Each agent
pays a quadratic cost tracking the average, weighted by ``Q``, ``R`` and a
terminal ``G``.  This module holds the coefficient schedules and the time grid,
plus validation and a solvability diagnostic.  All coefficients are
deterministic, piecewise-constant in time on the grid intervals.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import StructureError

TOL_SYM = 1e-10
TOL_PSD = 1e-10
DEFAULT_R_MIN = 1e-8


@dataclasses.dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with nodes t_j = j*T/M, j = 0..M."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (float(self.horizon) > 0.0 and np.isfinite(self.horizon)):
            raise StructureError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.steps) < 1 or int(self.steps) != self.steps:
            raise StructureError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    @property
    def node_count(self) -> int:
        return self.steps + 1


class CoefficientSchedule:
    """Matrix-valued coefficient, one value per grid node.

    The value on the interval [t_j, t_{j+1}) is ``values[j]`` (left-node,
    piecewise-constant convention).  ``values[M]`` is the value at the terminal
    time.  Constant coefficients simply repeat one matrix.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TimeGrid, values):
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 3:
            raise StructureError(
                f"schedule values must be (M+1, r, c), got shape {arr.shape}"
            )
        if arr.shape[0] != grid.node_count:
            raise StructureError(
                f"schedule has {arr.shape[0]} entries, grid has {grid.node_count} nodes"
            )
        if not np.isfinite(arr).all():
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise StructureError(f"non-finite schedule entry at node {bad[0]}, index {tuple(bad[1:])}")
        arr = arr.copy()
        arr.flags.writeable = False
        self.grid = grid
        self.values = arr

    @classmethod
    def constant(cls, grid: TimeGrid, matrix) -> "CoefficientSchedule":
        mat = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(grid, np.repeat(mat[None, :, :], grid.node_count, axis=0))

    @property
    def shape(self):
        return self.values.shape[1:]

    def __getitem__(self, j: int) -> np.ndarray:
        return self.values[j]

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def is_constant(self) -> bool:
        return bool((self.values == self.values[0]).all())


def _coerce_schedule(grid, value, shape, name):
    """Accept a schedule, a single matrix, a scalar, or an (M+1,r,c) array."""
    if isinstance(value, CoefficientSchedule):
        sched = value
    else:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            if shape == (1, 1):
                arr = arr.reshape(1, 1)
            elif float(arr) == 0.0:
                arr = np.zeros(shape)
            else:
                raise StructureError(
                    f"scalar value for '{name}' only allowed when shape is (1, 1) or the scalar is 0"
                )
            sched = CoefficientSchedule.constant(grid, arr)
        elif arr.ndim == 1:
            sched = CoefficientSchedule.constant(grid, arr.reshape(-1, 1))
        elif arr.ndim == 2:
            sched = CoefficientSchedule.constant(grid, arr)
        else:
            sched = CoefficientSchedule(grid, arr)
    if sched.shape != shape:
        raise StructureError(f"'{name}' must have shape {shape}, got {sched.shape}")
    if sched.grid.steps != grid.steps or sched.grid.horizon != grid.horizon:
        raise StructureError(f"'{name}' is defined on a different grid than the model")
    return sched


@dataclasses.dataclass(frozen=True)
class LqMfgModel:
    """Immutable coefficient bundle for one game instance.

    Schedules: state feedthroughs A, C, C0 (n x n), control channels B, D, D0
    (n x k), mean-field couplings alpha, beta, beta0 (n x n), affine/noise
    intensities b, sigma, sigma0 (n x 1), cost weights Q (n x n) and R (k x k).
    G is the constant terminal weight, x0 the shared initial state, and r_min
    the declared lower bound for R (and for the control weighting
    Sigma = R + D'PD + D0'PD0 derived from it).
    """

    grid: TimeGrid
    A: CoefficientSchedule
    B: CoefficientSchedule
    alpha: CoefficientSchedule
    b: CoefficientSchedule
    C: CoefficientSchedule
    D: CoefficientSchedule
    beta: CoefficientSchedule
    sigma: CoefficientSchedule
    C0: CoefficientSchedule
    D0: CoefficientSchedule
    beta0: CoefficientSchedule
    sigma0: CoefficientSchedule
    Q: CoefficientSchedule
    R: CoefficientSchedule
    G: np.ndarray
    x0: np.ndarray
    r_min: float = DEFAULT_R_MIN

    def __post_init__(self):
        n = self.A.shape[0]
        k = self.B.shape[1]
        object.__setattr__(self, "G", _frozen_matrix(self.G, (n, n), "G"))
        object.__setattr__(self, "x0", _frozen_vector(self.x0, n, "x0"))
        if not (self.r_min > 0.0 and np.isfinite(self.r_min)):
            raise StructureError(f"r_min must be positive and finite, got {self.r_min}")
        for name, shape in (
            ("A", (n, n)), ("B", (n, k)), ("alpha", (n, n)), ("b", (n, 1)),
            ("C", (n, n)), ("D", (n, k)), ("beta", (n, n)), ("sigma", (n, 1)),
            ("C0", (n, n)), ("D0", (n, k)), ("beta0", (n, n)), ("sigma0", (n, 1)),
            ("Q", (n, n)), ("R", (k, k)),
        ):
            sched = getattr(self, name)
            if not isinstance(sched, CoefficientSchedule):
                raise StructureError(f"'{name}' must be a CoefficientSchedule")
            if sched.shape != shape:
                raise StructureError(
                    f"'{name}' has shape {sched.shape}, expected {shape} "
                    f"(n={n} from A, k={k} from B)"
                )
            if sched.grid.steps != self.grid.steps or sched.grid.horizon != self.grid.horizon:
                raise StructureError(f"'{name}' and the model use different grids")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    @classmethod
    def from_constants(cls, grid, *, A, B, Q, R, G, x0, alpha=0.0, b=0.0,
                       C=0.0, D=0.0, beta=0.0, sigma=0.0, C0=0.0, D0=0.0,
                       beta0=0.0, sigma0=0.0, r_min=DEFAULT_R_MIN):
        """Build a model from constant coefficients (scalars fine when n = k = 1)."""
        A_s = _coerce_leading(grid, A, "A")
        n = A_s.shape[0]
        B_arr = np.atleast_2d(np.asarray(B, dtype=float))
        k = B_arr.shape[1]
        kw = dict(
            A=A_s,
            B=_coerce_schedule(grid, B, (n, k), "B"),
            alpha=_coerce_schedule(grid, alpha, (n, n), "alpha"),
            b=_coerce_schedule(grid, b, (n, 1), "b"),
            C=_coerce_schedule(grid, C, (n, n), "C"),
            D=_coerce_schedule(grid, D, (n, k), "D"),
            beta=_coerce_schedule(grid, beta, (n, n), "beta"),
            sigma=_coerce_schedule(grid, sigma, (n, 1), "sigma"),
            C0=_coerce_schedule(grid, C0, (n, n), "C0"),
            D0=_coerce_schedule(grid, D0, (n, k), "D0"),
            beta0=_coerce_schedule(grid, beta0, (n, n), "beta0"),
            sigma0=_coerce_schedule(grid, sigma0, (n, 1), "sigma0"),
            Q=_coerce_schedule(grid, Q, (n, n), "Q"),
            R=_coerce_schedule(grid, R, (k, k), "R"),
        )
        return cls(grid=grid, G=_coerce_terminal(G, n),
                   x0=np.atleast_1d(np.asarray(x0, dtype=float)), r_min=r_min, **kw)


def _coerce_terminal(G, n):
    arr = np.asarray(G, dtype=float)
    if arr.ndim == 0:
        if n == 1:
            return arr.reshape(1, 1)
        if float(arr) == 0.0:
            return np.zeros((n, n))
        raise StructureError("scalar G only allowed for n = 1 or G = 0")
    return arr.reshape(n, n)


def _coerce_leading(grid, value, name):
    if isinstance(value, CoefficientSchedule):
        return value
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return CoefficientSchedule.constant(grid, arr.reshape(1, 1))
    if arr.ndim == 2:
        return CoefficientSchedule.constant(grid, arr)
    if arr.ndim == 3:
        return CoefficientSchedule(grid, arr)
    raise StructureError(f"cannot interpret '{name}' with ndim {arr.ndim}")


def _frozen_matrix(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 and shape == (1, 1):
        arr = arr.reshape(1, 1)
    if arr.shape != shape:
        raise StructureError(f"'{name}' must have shape {shape}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise StructureError(f"non-finite entry in '{name}'")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _frozen_vector(value, n, name):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise StructureError(f"'{name}' must have length {n}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise StructureError(f"non-finite entry in '{name}'")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclasses.dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    node: int | None = None
    value: float | None = None
    threshold: float | None = None

    def describe(self) -> str:
        status = "pass" if self.passed else "FAIL"
        msg = f"[{status}] {self.name}"
        if not self.passed:
            if self.node is not None:
                msg += f" at node {self.node}"
            if self.value is not None:
                msg += f": value {self.value:.6e}"
            if self.threshold is not None:
                msg += f" (threshold {self.threshold:.6e})"
        return msg


@dataclasses.dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ValidationCheck, ...]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        return "\n".join(c.describe() for c in self.checks)


def _worst_asymmetry(sched):
    """(max |X - X'| over nodes, node index of the max)."""
    asym = np.abs(sched.values - np.transpose(sched.values, (0, 2, 1))).reshape(len(sched), -1).max(axis=1)
    j = int(np.argmax(asym))
    return float(asym[j]), j


def _worst_min_eig(sched):
    sym = 0.5 * (sched.values + np.transpose(sched.values, (0, 2, 1)))
    eigs = np.linalg.eigvalsh(sym)[:, 0]
    j = int(np.argmin(eigs))
    return float(eigs[j]), j


def validate(model: LqMfgModel, tol_sym: float = TOL_SYM, tol_psd: float = TOL_PSD) -> ValidationReport:
    """Check the standing assumptions on the cost weights.

    Structural consistency (shapes, grids, finiteness) is enforced at
    construction time; this reports the numeric conditions: symmetry of Q, R,
    G, positive semidefiniteness of Q and G, and R(t) bounded below by
    r_min * I at every node.  A model is usable by the full pipeline only when
    the report is all-pass, but the checks never raise so that failing models
    can be inspected.
    """
    checks = []

    a, j = _worst_asymmetry(model.Q)
    checks.append(ValidationCheck("Q symmetric", a <= tol_sym, j, a, tol_sym))
    a, j = _worst_asymmetry(model.R)
    checks.append(ValidationCheck("R symmetric", a <= tol_sym, j, a, tol_sym))
    ag = float(np.abs(model.G - model.G.T).max())
    checks.append(ValidationCheck("G symmetric", ag <= tol_sym, None, ag, tol_sym))

    e, j = _worst_min_eig(model.Q)
    checks.append(ValidationCheck("Q positive semidefinite", e >= -tol_psd, j, e, -tol_psd))
    eg = float(np.linalg.eigvalsh(0.5 * (model.G + model.G.T))[0])
    checks.append(ValidationCheck("G positive semidefinite", eg >= -tol_psd, None, eg, -tol_psd))

    e, j = _worst_min_eig(model.R)
    checks.append(ValidationCheck(
        f"R bounded below by r_min = {model.r_min:g}", e >= model.r_min, j, e, model.r_min))

    return ValidationReport(tuple(checks))


@dataclasses.dataclass(frozen=True)
class DiagnosticReport:
    """Result of the sufficient solvability inequality (advisory only)."""

    lambda_star: float
    norms: dict
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs < self.rhs

    def describe(self) -> str:
        status = "holds" if self.holds else "does NOT hold"
        return (f"dissipativity condition {status}: 4*lambda_star = {self.lhs:.6g} "
                f"vs bound {self.rhs:.6g}")


def _sup_opnorm(sched):
    return float(max(np.linalg.norm(sched.values[j], 2) for j in range(len(sched))))


def wellposedness_diagnostic(model: LqMfgModel) -> DiagnosticReport:
    """Evaluate the sufficient condition for solvability of the coupled system.

    Computes lambda_star, the largest eigenvalue of (A + A')/2 over all nodes,
    and checks 4*lambda_star < -2|alpha| - 6|C|^2 - 6|C0|^2 - 5|beta|^2
    - 5|beta0|^2 with operator 2-norms taken sup over nodes.  The condition is
    sufficient, not necessary, so a failure is advisory and blocks nothing.
    """
    sym = 0.5 * (model.A.values + np.transpose(model.A.values, (0, 2, 1)))
    lambda_star = float(np.linalg.eigvalsh(sym)[:, -1].max())
    norms = {
        "alpha": _sup_opnorm(model.alpha),
        "C": _sup_opnorm(model.C),
        "C0": _sup_opnorm(model.C0),
        "beta": _sup_opnorm(model.beta),
        "beta0": _sup_opnorm(model.beta0),
    }
    lhs = 4.0 * lambda_star
    rhs = (-2.0 * norms["alpha"] - 6.0 * norms["C"] ** 2 - 6.0 * norms["C0"] ** 2
           - 5.0 * norms["beta"] ** 2 - 5.0 * norms["beta0"] ** 2)
    return DiagnosticReport(lambda_star=lambda_star, norms=norms, lhs=lhs, rhs=rhs)
