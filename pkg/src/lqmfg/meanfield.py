"""Mean-field limit paths and filtered decentralized states.

Integrates, on the shared time grid:

* ``integrate_Em`` — the deterministic mean E[m(t)] (forward Euler),
* ``integrate_m`` — one realization of the conditional mean m(t) driven by
  the common noise (Euler-Maruyama),
* ``integrate_z_hat`` — one agent's filtered state zhat_i(t) driven by that
  agent's own noise, with the decentralized control recorded at every node.

Noise is organized in streams: stream 0 is the common noise W0, stream
i >= 1 is agent i's W_i.  Increments are a pure function of
(seed, stream id): a counter-based Philox generator is keyed with the
128-bit value (seed << 64) + stream, and standard normals are drawn through
numpy's ziggurat transform, which is fixed for a given numpy release line.
Distinct streams are independent by construction of the keyed counter
sequence, so paths may be generated in any order or in parallel without
changing results.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import DivergenceError, UsageError
from .model import LqMfgModel, TimeGrid
from .riccati import FeedbackLaw

_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    """splitmix64 finalizer; full-period 64-bit mixing."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Deterministically fold integer labels into one 64-bit seed.

    Used to give every Monte-Carlo sample its own base seed from
    (experiment seed, population size, sample index) so that samples are
    independent and the assignment never collides across ladder rungs.
    """
    h = 0x8BADF00D5EEDC0DE
    for p in parts:
        h = _mix64(h ^ (int(p) & _MASK64))
    return h


def gaussian_increments(grid: TimeGrid, seed: int, stream: int) -> np.ndarray:
    """M Brownian increments ~ N(0, h), bit-reproducible in (seed, stream)."""
    if not 0 <= int(seed) <= _MASK64:
        raise UsageError("seed must fit in 64 bits")
    if stream < 0:
        raise UsageError("stream id must be non-negative")
    key = (int(seed) << 64) + int(stream)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal(grid.steps) * np.sqrt(grid.h)


@dataclasses.dataclass(frozen=True)
class NoisePath:
    """One Brownian path as its per-step increments.

    Stream 0 carries the common noise; stream i >= 1 belongs to agent i.
    """

    grid: TimeGrid
    stream: int
    increments: np.ndarray   # (M,)

    def __post_init__(self):
        inc = np.asarray(self.increments, float)
        if inc.shape != (self.grid.steps,):
            raise UsageError(
                f"increments shape {inc.shape} does not match grid with "
                f"{self.grid.steps} steps")
        inc = inc.copy()
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @classmethod
    def generate(cls, grid: TimeGrid, seed: int, stream: int) -> "NoisePath":
        return cls(grid=grid, stream=stream,
                   increments=gaussian_increments(grid, seed, stream))

    @property
    def W(self) -> np.ndarray:
        """Path values W(t_j), starting at 0; shape (M+1,)."""
        out = np.empty(self.grid.steps + 1)
        out[0] = 0.0
        np.cumsum(self.increments, out=out[1:])
        return out


@dataclasses.dataclass(frozen=True)
class MeanFieldPath:
    grid: TimeGrid
    m: np.ndarray    # (M+1, n), one common-noise realization
    Em: np.ndarray   # (M+1, n), deterministic


@dataclasses.dataclass(frozen=True)
class FilteredStatePath:
    grid: TimeGrid
    z_hat: np.ndarray   # (M+1, n)
    u: np.ndarray       # (M+1, k)


def _check_law(model: LqMfgModel, law: FeedbackLaw):
    if law.grid.steps != model.grid.steps or \
            law.grid.horizon != model.grid.horizon:
        raise UsageError("feedback law grid does not match the model grid")


def _mean_control(law: FeedbackLaw, Em: np.ndarray, j: int) -> np.ndarray:
    # E[u] aggregates both gains because E[zhat_i] = E[m].
    return (law.K_z[j] + law.K_m[j]) @ Em[j] + law.c_u[j]


def integrate_Em(model: LqMfgModel, law: FeedbackLaw) -> np.ndarray:
    """Forward Euler for dE[m] = {(A + alpha) E[m] + B E[u] + b} dt, from x0."""
    _check_law(model, law)
    M, h = model.grid.steps, model.grid.h
    A, alpha = model.A.values, model.alpha.values
    B, b = model.B.values, model.b.values
    Em = np.empty((M + 1, model.n))
    Em[0] = model.x0
    for j in range(M):
        Eu = _mean_control(law, Em, j)
        drift = (A[j] + alpha[j]) @ Em[j] + B[j] @ Eu + b[j][:, 0]
        Em[j + 1] = Em[j] + h * drift
        if not np.isfinite(Em[j + 1]).all():
            raise DivergenceError("E[m] diverged", node=j + 1,
                                  t=model.grid.nodes[j + 1])
    return Em


def integrate_m(model: LqMfgModel, law: FeedbackLaw, Em: np.ndarray,
                common: NoisePath, beta_literal: bool = False) -> np.ndarray:
    """Euler-Maruyama for the conditional-mean SDE driven by stream 0.

    Drift {(A + alpha) m + B E[u] + b}; diffusion
    {(C0 + beta0) m + D0 E[u] + sigma0} against dW0.  ``beta_literal``
    switches the diffusion's state coefficient to (C0 + beta), reproducing a
    printed variant of the equation that is inconsistent with the rest of the
    system; the default keeps beta0.
    """
    _check_law(model, law)
    if common.stream != 0:
        raise UsageError("the conditional mean is driven by stream 0")
    M, h = model.grid.steps, model.grid.h
    A, alpha = model.A.values, model.alpha.values
    B, b = model.B.values, model.b.values
    C0, D0, sigma0 = model.C0.values, model.D0.values, model.sigma0.values
    state_diff = model.beta.values if beta_literal else model.beta0.values
    dW = common.increments
    m = np.empty((M + 1, model.n))
    m[0] = model.x0
    Em = np.asarray(Em, float)
    for j in range(M):
        Eu = _mean_control(law, Em, j)
        drift = (A[j] + alpha[j]) @ m[j] + B[j] @ Eu + b[j][:, 0]
        diff = (C0[j] + state_diff[j]) @ m[j] + D0[j] @ Eu + sigma0[j][:, 0]
        m[j + 1] = m[j] + h * drift + dW[j] * diff
        if not np.isfinite(m[j + 1]).all():
            raise DivergenceError("m diverged", node=j + 1,
                                  t=model.grid.nodes[j + 1])
    return m


def integrate_mean_field(model: LqMfgModel, law: FeedbackLaw, seed: int,
                         beta_literal: bool = False) -> MeanFieldPath:
    """Convenience wrapper bundling E[m] and one m realization."""
    Em = integrate_Em(model, law)
    common = NoisePath.generate(model.grid, seed, 0)
    m = integrate_m(model, law, Em, common, beta_literal=beta_literal)
    return MeanFieldPath(grid=model.grid, m=m, Em=Em)


def integrate_z_hat(model: LqMfgModel, law: FeedbackLaw, Em: np.ndarray,
                    individual: NoisePath) -> FilteredStatePath:
    """Euler-Maruyama for one agent's filtered state, control recorded.

    Drift (A + B K_z) zhat + (alpha + B K_m) Em + B c_u + b; diffusion
    (C + D K_z) zhat + (beta + D K_m) Em + D c_u + sigma against the agent's
    own increments.  The recorded control satisfies
    u(t_j) = K_z(t_j) zhat(t_j) + K_m(t_j) Em(t_j) + c_u(t_j) at every node.
    """
    _check_law(model, law)
    if individual.stream < 1:
        raise UsageError("agent paths use stream ids >= 1")
    M, h = model.grid.steps, model.grid.h
    A, B, alpha, b = (model.A.values, model.B.values, model.alpha.values,
                      model.b.values)
    C, D, beta, sigma = (model.C.values, model.D.values, model.beta.values,
                         model.sigma.values)
    dW = individual.increments
    Em = np.asarray(Em, float)
    z = np.empty((M + 1, model.n))
    u = np.empty((M + 1, model.k))
    z[0] = model.x0
    for j in range(M):
        u[j] = law.K_z[j] @ z[j] + law.K_m[j] @ Em[j] + law.c_u[j]
        drift = A[j] @ z[j] + B[j] @ u[j] + alpha[j] @ Em[j] + b[j][:, 0]
        diff = C[j] @ z[j] + D[j] @ u[j] + beta[j] @ Em[j] + sigma[j][:, 0]
        z[j + 1] = z[j] + h * drift + dW[j] * diff
        if not np.isfinite(z[j + 1]).all():
            raise DivergenceError("zhat diverged", node=j + 1,
                                  t=model.grid.nodes[j + 1])
    u[M] = law.K_z[M] @ z[M] + law.K_m[M] @ Em[M] + law.c_u[M]
    return FilteredStatePath(grid=model.grid, z_hat=z, u=u)
