"""Coupled N-agent simulation, convergence-rate ladders, and deviation tests.

Within one Monte-Carlo sample every agent integrates three states on the
shared grid: the centralized state x_i driven by the empirical average
coupling, the filtered state zhat_i the control acts on (agent's own noise
only), and the limiting state zbar_i (both noises, mean-field path m in the
coupling slot).  Costs are accumulated by the trapezoid rule with an exact
terminal term; the centralized cost tracks the empirical average, the
limiting cost tracks m.

Reproducibility: sample s of a size-N experiment derives its own 64-bit seed
from (base seed, N, s); within a sample, stream 0 is the common noise and
stream i is agent i.  Sample results are reduced with exact compensated
summation (math.fsum) in sample-index order, so the outcome is independent
of scheduling.  Empirical averages over agents are computed as sorted sums,
which makes every aggregate exactly invariant under permuting agent labels
together with their streams.

The per-step working set is a handful of length-N vectors, so samples are
vectorized over agents; scalar models (n = k = 1) take a cheaper code path
that avoids matrix products entirely.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import math
import os

import numpy as np

from .errors import DivergenceError, UsageError
from .meanfield import derive_seed, gaussian_increments, integrate_Em
from .model import LqMfgModel
from .riccati import FeedbackLaw


@dataclasses.dataclass(frozen=True)
class DeviationCandidate:
    """Alternative feedback policy for the deviating agent.

    The candidate control is gain_scale * (K_z zhat) + K_m Em + c_u + offset,
    or identically zero when zero_control is set.  The filtered state zhat
    keeps its equilibrium dynamics; only the applied control changes.
    """

    name: str
    gain_scale: float = 1.0
    offset: float = 0.0
    zero_control: bool = False

    @property
    def is_self(self) -> bool:
        return (not self.zero_control and self.gain_scale == 1.0
                and self.offset == 0.0)


def default_candidate_family() -> tuple[DeviationCandidate, ...]:
    """Documented fixed family: scaled gains, no control, shifted control."""
    family = [DeviationCandidate("self")]
    for theta in (0.0, 0.5, 0.8, 1.2, 1.5, 2.0):
        family.append(DeviationCandidate(f"gain_scale_{theta:g}",
                                         gain_scale=theta))
    family.append(DeviationCandidate("zero_control", zero_control=True))
    for off in (0.5, -0.5):
        family.append(DeviationCandidate(f"offset_{off:+g}", offset=off))
    return tuple(family)


class _SimPayload:
    """Everything a sample needs, precomputed once and shipped to workers.

    Holds per-node transposed coefficient arrays for row-vector states, the
    deterministic mean-control pieces, and (for scalar models) plain-float
    coefficient lists for the fast path.
    """

    def __init__(self, model: LqMfgModel, law: FeedbackLaw, Em: np.ndarray,
                 beta_literal: bool = False):
        grid = model.grid
        self.model = model
        self.law = law
        self.beta_literal = bool(beta_literal)
        self.h = float(grid.h)
        self.M = int(grid.steps)
        self.n = model.n
        self.k = model.k
        self.grid = grid
        self.x0 = np.asarray(model.x0, float)
        self.G = np.asarray(model.G, float)
        self.Em = np.asarray(Em, float)
        if self.Em.shape != (self.M + 1, self.n):
            raise UsageError("Em sequence does not match the grid and state "
                             "dimension")

        cnt = self.M + 1

        def vals(name):
            return getattr(model, name).values

        def transposed(name):
            return np.ascontiguousarray(vals(name).transpose(0, 2, 1))

        self.AT = transposed("A")
        self.BT = transposed("B")
        self.CT = transposed("C")
        self.DT = transposed("D")
        self.C0T = transposed("C0")
        self.D0T = transposed("D0")
        self.alT = transposed("alpha")
        self.beT = transposed("beta")
        self.be0T = transposed("beta0")
        self.bb = vals("b")[:, :, 0].copy()
        self.sgv = vals("sigma")[:, :, 0].copy()
        self.sg0v = vals("sigma0")[:, :, 0].copy()
        self.Q = vals("Q")
        self.R = vals("R")

        self.KzT = np.ascontiguousarray(law.K_z.transpose(0, 2, 1))
        # Deterministic control pieces: K_m Em + c_u, and the mean control.
        self.kmc = np.einsum("jkn,jn->jk", law.K_m, self.Em) + law.c_u
        self.Euv = np.einsum("jkn,jn->jk", law.K_z, self.Em) + self.kmc

        # Filtered-state step: zhat' = P1 zhat + p0, diffusion Q1 zhat + q0.
        A, B = vals("A"), vals("B")
        C, D = vals("C"), vals("D")
        P1 = A + np.einsum("jnk,jkm->jnm", B, law.K_z)
        Q1 = C + np.einsum("jnk,jkm->jnm", D, law.K_z)
        self.P1T = np.ascontiguousarray(P1.transpose(0, 2, 1))
        self.Q1T = np.ascontiguousarray(Q1.transpose(0, 2, 1))
        self.p0 = (np.einsum("jnm,jm->jn", vals("alpha"), self.Em)
                   + np.einsum("jnk,jk->jn", B, self.kmc) + self.bb)
        self.q0 = (np.einsum("jnm,jm->jn", vals("beta"), self.Em)
                   + np.einsum("jnk,jk->jn", D, self.kmc) + self.sgv)

        # Mean-field step: m' = ApAl m + BEu, diffusion Md0 m + D0Eu.
        ApAl = A + vals("alpha")
        Md0 = vals("C0") + (vals("beta") if self.beta_literal
                            else vals("beta0"))
        self.ApAlT = np.ascontiguousarray(ApAl.transpose(0, 2, 1))
        self.Md0T = np.ascontiguousarray(Md0.transpose(0, 2, 1))
        self.BEu = np.einsum("jnk,jk->jn", B, self.Euv) + self.bb
        self.D0Eu = (np.einsum("jnk,jk->jn", vals("D0"), self.Euv)
                     + self.sg0v)

        w = np.full(cnt, self.h)
        w[0] = w[-1] = 0.5 * self.h
        self.w = w
        self.Qw = w[:, None, None] * self.Q
        self.Rw = w[:, None, None] * self.R

        self.scalar_ok = (self.n == 1 and self.k == 1)
        if self.scalar_ok:
            def flat(name):
                return vals(name)[:, 0, 0].tolist()

            self.s_a, self.s_b = flat("A"), flat("B")
            self.s_al, self.s_bb = flat("alpha"), flat("b")
            self.s_c, self.s_d = flat("C"), flat("D")
            self.s_be, self.s_sg = flat("beta"), flat("sigma")
            self.s_c0, self.s_d0 = flat("C0"), flat("D0")
            self.s_be0, self.s_sg0 = flat("beta0"), flat("sigma0")
            self.s_kz = law.K_z[:, 0, 0].tolist()
            self.s_kmc = self.kmc[:, 0].tolist()
            self.s_eu = self.Euv[:, 0].tolist()
            self.s_em = self.Em[:, 0].tolist()
            self.s_p1 = P1[:, 0, 0].tolist()
            self.s_p0 = self.p0[:, 0].tolist()
            self.s_q1 = Q1[:, 0, 0].tolist()
            self.s_q0 = self.q0[:, 0].tolist()
            self.s_md = Md0[:, 0, 0].tolist()
            self.s_beu = self.BEu[:, 0].tolist()
            self.s_d0eu = self.D0Eu[:, 0].tolist()
            self.s_wq = (w * self.Q[:, 0, 0]).tolist()
            self.s_wr = (w * self.R[:, 0, 0]).tolist()
            self.s_g = float(self.G[0, 0])
            self.s_x0 = float(self.x0[0])


@dataclasses.dataclass(frozen=True)
class _SampleStats:
    """Aggregates of one sample, without stored paths."""

    xbar_gap: float          # sup_t |xbar - m|^2
    agent_gaps: np.ndarray   # (N,) sup_t |x_i - zbar_i|^2
    zbar_gap: float          # sup_t |mean(zbar) - m|^2
    J_central: np.ndarray    # (N,)
    J_limit: np.ndarray      # (N,)


@dataclasses.dataclass(frozen=True)
class PopulationSample:
    """One recorded joint simulation of the N-agent system."""

    N: int
    x: np.ndarray              # (N, M+1, n)
    z_hat: np.ndarray          # (N, M+1, n)
    z_bar: np.ndarray          # (N, M+1, n)
    u: np.ndarray              # (N, M+1, k)
    state_average: np.ndarray  # (M+1, n)
    m: np.ndarray              # (M+1, n)
    Em: np.ndarray             # (M+1, n)
    J_central: np.ndarray      # (N,)
    J_limit: np.ndarray        # (N,)


def _agent_increments(grid, seed, N):
    dWi = np.empty((N, grid.steps))
    for i in range(N):
        dWi[i] = gaussian_increments(grid, seed, i + 1)
    return dWi, gaussian_increments(grid, seed, 0)


def _candidate_control_scalar(cand, kz_j, zh0, kmc_j):
    if cand.zero_control:
        return 0.0
    return cand.gain_scale * (kz_j * zh0) + kmc_j + cand.offset


def _run_sample_scalar(pl: _SimPayload, N: int, seed: int,
                       cand: DeviationCandidate | None) -> _SampleStats:
    M, h = pl.M, pl.h
    dWi, dW0 = _agent_increments(pl.grid, seed, N)
    a, bc, al, bb = pl.s_a, pl.s_b, pl.s_al, pl.s_bb
    c, d, be, sg = pl.s_c, pl.s_d, pl.s_be, pl.s_sg
    c0, d0, be0, sg0 = pl.s_c0, pl.s_d0, pl.s_be0, pl.s_sg0
    kz, kmc, eu = pl.s_kz, pl.s_kmc, pl.s_eu
    p1, p0, q1, q0 = pl.s_p1, pl.s_p0, pl.s_q1, pl.s_q0
    md, beu, d0eu = pl.s_md, pl.s_beu, pl.s_d0eu
    wq, wr = pl.s_wq, pl.s_wr
    modify = cand is not None and not cand.is_self

    x = np.full(N, pl.s_x0)
    zh = x.copy()
    zb = x.copy()
    mj = pl.s_x0
    Jc = np.zeros(N)
    Jl = np.zeros(N)
    gap = np.zeros(N)
    sup_x = 0.0
    sup_z = 0.0

    for j in range(M):
        u = kz[j] * zh + kmc[j]
        if modify:
            u[0] = _candidate_control_scalar(cand, kz[j], zh[0], kmc[j])
        xm = np.sort(x).sum() / N
        zm = np.sort(zb).sum() / N
        dx = x - xm
        dz = zb - mj
        uu = u * u
        Jc += wq[j] * (dx * dx) + wr[j] * uu
        Jl += wq[j] * (dz * dz) + wr[j] * uu
        gxz = x - zb
        np.maximum(gap, gxz * gxz, out=gap)
        e = xm - mj
        sup_x = max(sup_x, e * e)
        e = zm - mj
        sup_z = max(sup_z, e * e)

        dWi_j = dWi[:, j]
        dW0_j = dW0[j]
        x = (x + h * (a[j] * x + bc[j] * u + (al[j] * xm + bb[j]))
             + dWi_j * (c[j] * x + d[j] * u + (be[j] * xm + sg[j]))
             + dW0_j * (c0[j] * x + d0[j] * u + (be0[j] * xm + sg0[j])))
        zb = (zb + h * (a[j] * zb + bc[j] * u + (al[j] * mj + bb[j]))
              + dWi_j * (c[j] * zb + d[j] * u + (be[j] * mj + sg[j]))
              + dW0_j * (c0[j] * zb + d0[j] * u + (be0[j] * mj + sg0[j])))
        zh = zh + h * (p1[j] * zh + p0[j]) + dWi_j * (q1[j] * zh + q0[j])
        mj = (mj + h * ((a[j] + al[j]) * mj + bc[j] * eu[j] + bb[j])
              + dW0_j * (md[j] * mj + d0[j] * eu[j] + sg0[j]))
        if mj != mj or (j & 63) == 63 and not np.isfinite(x).all():
            raise DivergenceError("population state diverged", node=j + 1,
                                  t=pl.grid.nodes[j + 1])

    u = kz[M] * zh + kmc[M]
    if modify:
        u[0] = _candidate_control_scalar(cand, kz[M], zh[0], kmc[M])
    xm = np.sort(x).sum() / N
    zm = np.sort(zb).sum() / N
    dx = x - xm
    dz = zb - mj
    uu = u * u
    Jc += wq[M] * (dx * dx) + wr[M] * uu + pl.s_g * (x * x)
    Jl += wq[M] * (dz * dz) + wr[M] * uu + pl.s_g * (zb * zb)
    Jc *= 0.5
    Jl *= 0.5
    gxz = x - zb
    np.maximum(gap, gxz * gxz, out=gap)
    e = xm - mj
    sup_x = max(sup_x, e * e)
    e = zm - mj
    sup_z = max(sup_z, e * e)
    if not (np.isfinite(Jc).all() and np.isfinite(Jl).all()
            and np.isfinite(gap).all()):
        raise DivergenceError("population state diverged",
                              node=M, t=pl.grid.nodes[M])
    return _SampleStats(float(sup_x), gap, float(sup_z), Jc, Jl)


def _candidate_control_general(cand, zh, KzT_j, kmc_j, k):
    if cand.zero_control:
        return np.zeros(k)
    return cand.gain_scale * (zh @ KzT_j) + kmc_j + cand.offset


def _run_sample_general(pl: _SimPayload, N: int, seed: int,
                        cand: DeviationCandidate | None, record: bool):
    M, h, n, k = pl.M, pl.h, pl.n, pl.k
    dWi, dW0 = _agent_increments(pl.grid, seed, N)
    modify = cand is not None and not cand.is_self

    x = np.tile(pl.x0, (N, 1))
    zh = x.copy()
    zb = x.copy()
    m = pl.x0.copy()
    Jc = np.zeros(N)
    Jl = np.zeros(N)
    gap = np.zeros(N)
    sup_x = 0.0
    sup_z = 0.0
    if record:
        rec_x = np.empty((N, M + 1, n))
        rec_zh = np.empty((N, M + 1, n))
        rec_zb = np.empty((N, M + 1, n))
        rec_u = np.empty((N, M + 1, k))
        rec_xbar = np.empty((M + 1, n))
        rec_m = np.empty((M + 1, n))

    for j in range(M + 1):
        u = zh @ pl.KzT[j] + pl.kmc[j]
        if modify:
            u[0] = _candidate_control_general(cand, zh[0], pl.KzT[j],
                                              pl.kmc[j], k)
        xm = np.sort(x, axis=0).sum(axis=0) / N
        zm = np.sort(zb, axis=0).sum(axis=0) / N
        dx = x - xm
        dz = zb - m
        run_c = ((dx @ pl.Qw[j]) * dx).sum(axis=1)
        run_l = ((dz @ pl.Qw[j]) * dz).sum(axis=1)
        ru = ((u @ pl.Rw[j]) * u).sum(axis=1)
        Jc += run_c + ru
        Jl += run_l + ru
        g2 = ((x - zb) ** 2).sum(axis=1)
        np.maximum(gap, g2, out=gap)
        e = xm - m
        sup_x = max(sup_x, float(e @ e))
        e = zm - m
        sup_z = max(sup_z, float(e @ e))
        if record:
            rec_x[:, j] = x
            rec_zh[:, j] = zh
            rec_zb[:, j] = zb
            rec_u[:, j] = u
            rec_xbar[j] = xm
            rec_m[j] = m
        if j == M:
            break

        dWi_j = dWi[:, j][:, None]
        dW0_j = dW0[j]
        x_new = (x + h * (x @ pl.AT[j] + u @ pl.BT[j] + (pl.alT[j].T @ xm
                                                         + pl.bb[j]))
                 + dWi_j * (x @ pl.CT[j] + u @ pl.DT[j]
                            + (pl.beT[j].T @ xm + pl.sgv[j]))
                 + dW0_j * (x @ pl.C0T[j] + u @ pl.D0T[j]
                            + (pl.be0T[j].T @ xm + pl.sg0v[j])))
        zb_new = (zb + h * (zb @ pl.AT[j] + u @ pl.BT[j] + (pl.alT[j].T @ m
                                                            + pl.bb[j]))
                  + dWi_j * (zb @ pl.CT[j] + u @ pl.DT[j]
                             + (pl.beT[j].T @ m + pl.sgv[j]))
                  + dW0_j * (zb @ pl.C0T[j] + u @ pl.D0T[j]
                             + (pl.be0T[j].T @ m + pl.sg0v[j])))
        zh = (zh + h * (zh @ pl.P1T[j] + pl.p0[j])
              + dWi_j * (zh @ pl.Q1T[j] + pl.q0[j]))
        m = (m + h * (pl.ApAlT[j].T @ m + pl.BEu[j])
             + dW0_j * (pl.Md0T[j].T @ m + pl.D0Eu[j]))
        x, zb = x_new, zb_new
        if not np.isfinite(m).all() or \
                ((j & 63) == 63 and not np.isfinite(x).all()):
            raise DivergenceError("population state diverged", node=j + 1,
                                  t=pl.grid.nodes[j + 1])

    Jc += (x @ pl.G * x).sum(axis=1)
    Jl += (zb @ pl.G * zb).sum(axis=1)
    Jc *= 0.5
    Jl *= 0.5
    if not (np.isfinite(Jc).all() and np.isfinite(Jl).all()
            and np.isfinite(gap).all()):
        raise DivergenceError("population state diverged",
                              node=M, t=pl.grid.nodes[M])
    stats = _SampleStats(float(sup_x), gap, float(sup_z), Jc, Jl)
    if not record:
        return stats
    sample = PopulationSample(N=N, x=rec_x, z_hat=rec_zh, z_bar=rec_zb,
                              u=rec_u, state_average=rec_xbar, m=rec_m,
                              Em=pl.Em.copy(), J_central=Jc, J_limit=Jl)
    return stats, sample


def _run_sample(pl: _SimPayload, N: int, seed: int,
                cand: DeviationCandidate | None = None, record: bool = False,
                force_general: bool = False):
    if record:
        return _run_sample_general(pl, N, seed, cand, True)
    if pl.scalar_ok and not force_general:
        return _run_sample_scalar(pl, N, seed, cand)
    return _run_sample_general(pl, N, seed, cand, False)


def simulate_population(model: LqMfgModel, law: FeedbackLaw, Em, N: int,
                        seed: int, beta_literal: bool = False
                        ) -> PopulationSample:
    """Joint simulation of N agents with recorded trajectories.

    Stream 0 drives the common noise and the mean-field path m; agent i uses
    stream i of the same seed.  The coupling term uses the same-step
    empirical average (explicit scheme), computed as a sorted sum so agent
    relabeling cannot change it.
    """
    N = int(N)
    if N < 1:
        raise UsageError("population size must be at least 1")
    pl = _SimPayload(model, law, Em, beta_literal)
    _, sample = _run_sample_general(pl, N, int(seed), None, True)
    return sample


# ---------------------------------------------------------------------------
# Parallel sample mapping

_WORKER_PAYLOAD: _SimPayload | None = None


def _worker_init(payload):
    global _WORKER_PAYLOAD
    _WORKER_PAYLOAD = payload


def _worker_run(task):
    key, N, sample_seed, cand, force_general = task
    return key, _run_sample(_WORKER_PAYLOAD, N, sample_seed, cand,
                            False, force_general)


def resolve_workers(workers=None) -> int:
    """Worker count: explicit argument, else MFG_THREADS, else CPU count."""
    if workers is None:
        env = os.environ.get("MFG_THREADS", "").strip()
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise UsageError(f"MFG_THREADS must be an integer, got "
                                 f"'{env}'") from None
        else:
            workers = os.cpu_count() or 1
    workers = int(workers)
    if workers < 1:
        raise UsageError("worker count must be at least 1")
    return workers


def _map_samples(payload: _SimPayload, tasks, workers: int) -> dict:
    """Run tasks (key, N, sample_seed, candidate, force_general) -> stats.

    Results are keyed, so the reduction order downstream is fixed by the
    caller regardless of completion order.
    """
    if workers <= 1 or len(tasks) <= 1:
        return {t[0]: _run_sample(payload, t[1], t[2], t[3], False, t[4])
                for t in tasks}
    out = {}
    chunk = max(1, len(tasks) // (workers * 8))
    with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init,
            initargs=(payload,)) as ex:
        for key, stats in ex.map(_worker_run, tasks, chunksize=chunk):
            out[key] = stats
    return out


# ---------------------------------------------------------------------------
# Rate experiments

@dataclasses.dataclass(frozen=True)
class RateFitReport:
    """Log-log decay fit of one statistic over a population-size ladder."""

    name: str
    Ns: tuple[int, ...]
    values: tuple[float, ...]
    stderrs: tuple[float, ...]
    slope: float
    intercept: float
    slope_stderr: float
    degenerate: bool
    sample_count: int
    seed: int
    companions: tuple["RateFitReport", ...] = ()


def _mean_se(vals):
    S = len(vals)
    mean = math.fsum(vals) / S
    var = math.fsum((v - mean) ** 2 for v in vals) / (S - 1)
    return mean, math.sqrt(var / S)


def _fit_loglog(Ns, values):
    if min(values) <= 0.0:
        nan = float("nan")
        return nan, nan, nan, True
    x = np.log(np.asarray(Ns, float))
    y = np.log(np.asarray(values, float))
    coef, cov = np.polyfit(x, y, 1, cov=True)
    return float(coef[0]), float(coef[1]), float(np.sqrt(cov[0, 0])), False


def _make_report(name, Ns, values, stderrs, S, seed, companions=()):
    slope, intercept, sl_se, degen = _fit_loglog(Ns, values)
    return RateFitReport(name=name, Ns=tuple(Ns), values=tuple(values),
                         stderrs=tuple(stderrs), slope=slope,
                         intercept=intercept, slope_stderr=sl_se,
                         degenerate=degen, sample_count=S, seed=seed,
                         companions=tuple(companions))


def _check_ladder(Ns):
    Ns = tuple(int(N) for N in Ns)
    if len(Ns) < 4:
        raise UsageError("rate experiments need at least 4 population sizes")
    if Ns[0] < 1:
        raise UsageError("population sizes must be positive")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise UsageError("population sizes must be strictly increasing")
    return Ns


def rate_experiments(model: LqMfgModel, law: FeedbackLaw, Ns, S: int,
                     seed: int, workers=None, beta_literal: bool = False
                     ) -> dict[str, RateFitReport]:
    """One ladder pass producing both decay reports.

    Returns {"state": ..., "cost": ...}.  The state report carries two
    companion fits over the same ladder: the worst per-agent gap to the
    limiting state (expected O(1/N)) and the gap of the limiting-state
    average to m (the conditional law of large numbers).
    """
    Ns = _check_ladder(Ns)
    S = int(S)
    if S < 2:
        raise UsageError("need at least 2 samples per ladder point")
    workers = resolve_workers(workers)
    Em = integrate_Em(model, law)
    payload = _SimPayload(model, law, Em, beta_literal)
    tasks = [((N, s), N, derive_seed(seed, N, s), None, False)
             for N in Ns for s in range(S)]
    stats = _map_samples(payload, tasks, workers)

    xbar_vals, xbar_ses = [], []
    agent_vals, agent_ses = [], []
    zavg_vals, zavg_ses = [], []
    cost_vals, cost_ses = [], []
    for N in Ns:
        per = [stats[(N, s)] for s in range(S)]
        mean, se = _mean_se([p.xbar_gap for p in per])
        xbar_vals.append(mean)
        xbar_ses.append(se)
        # Worst agent by sample-mean of its gap to the limiting state.
        gaps = np.stack([p.agent_gaps for p in per])     # (S, N)
        worst = int(np.argmax(gaps.mean(axis=0)))
        mean, se = _mean_se(gaps[:, worst].tolist())
        agent_vals.append(mean)
        agent_ses.append(se)
        mean, se = _mean_se([p.zbar_gap for p in per])
        zavg_vals.append(mean)
        zavg_ses.append(se)
        mean, se = _mean_se(
            [math.fsum(np.abs(p.J_central - p.J_limit).tolist()) / N
             for p in per])
        cost_vals.append(mean)
        cost_ses.append(se)

    companions = (
        _make_report("agent_limit_gap", Ns, agent_vals, agent_ses, S, seed),
        _make_report("limit_average_gap", Ns, zavg_vals, zavg_ses, S, seed),
    )
    return {
        "state": _make_report("state_average_gap", Ns, xbar_vals, xbar_ses,
                              S, seed, companions),
        "cost": _make_report("cost_gap", Ns, cost_vals, cost_ses, S, seed),
    }


def rate_experiment_state(model, law, Ns, S, seed, workers=None,
                          beta_literal=False) -> RateFitReport:
    """Decay of E[sup_t |x^(N) - m|^2] over the ladder; expected slope -1."""
    return rate_experiments(model, law, Ns, S, seed, workers,
                            beta_literal)["state"]


def rate_experiment_cost(model, law, Ns, S, seed, workers=None,
                         beta_literal=False) -> RateFitReport:
    """Decay of the per-agent |centralized - limiting| cost gap; slope -1/2."""
    return rate_experiments(model, law, Ns, S, seed, workers,
                            beta_literal)["cost"]


# ---------------------------------------------------------------------------
# Deviation experiment

@dataclasses.dataclass(frozen=True)
class CandidateResult:
    name: str
    mean_cost: float
    cost_stderr: float
    gain: float            # baseline cost minus candidate cost
    gain_stderr: float     # paired, thanks to common random numbers


@dataclasses.dataclass(frozen=True)
class DeviationReport:
    """Cost gains of unilateral deviations by agent 1, all agents else fixed."""

    N: int
    S: int
    seed: int
    baseline_mean_cost: float
    baseline_stderr: float
    results: tuple[CandidateResult, ...]
    max_gain: float


def deviation_experiment(model: LqMfgModel, law: FeedbackLaw, N: int, S: int,
                         candidates, seed: int, workers=None,
                         beta_literal: bool = False) -> DeviationReport:
    """Common-random-number deviation test.

    Every candidate replays the same sample streams as the baseline, so cost
    differences are paired per sample; a candidate equal to the equilibrium
    policy reproduces the baseline trajectories bit for bit and gains
    exactly zero.
    """
    candidates = tuple(candidates)
    if not candidates:
        raise UsageError("deviation experiment needs at least one candidate")
    N = int(N)
    if N < 1:
        raise UsageError("population size must be at least 1")
    S = int(S)
    if S < 2:
        raise UsageError("need at least 2 samples")
    workers = resolve_workers(workers)
    Em = integrate_Em(model, law)
    payload = _SimPayload(model, law, Em, beta_literal)

    tasks = []
    for s in range(S):
        sample_seed = derive_seed(seed, N, s)
        tasks.append(((-1, s), N, sample_seed, None, False))
        for ci, cand in enumerate(candidates):
            tasks.append(((ci, s), N, sample_seed, cand, False))
    stats = _map_samples(payload, tasks, workers)

    base = [float(stats[(-1, s)].J_central[0]) for s in range(S)]
    base_mean, base_se = _mean_se(base)
    results = []
    for ci, cand in enumerate(candidates):
        vals = [float(stats[(ci, s)].J_central[0]) for s in range(S)]
        mean, se = _mean_se(vals)
        diffs = [b - v for b, v in zip(base, vals)]
        gain, gain_se = _mean_se(diffs)
        results.append(CandidateResult(name=cand.name, mean_cost=mean,
                                       cost_stderr=se, gain=gain,
                                       gain_stderr=gain_se))
    return DeviationReport(N=N, S=S, seed=seed, baseline_mean_cost=base_mean,
                           baseline_stderr=base_se, results=tuple(results),
                           max_gain=max(r.gain for r in results))


# ---------------------------------------------------------------------------
# Limiting-problem cost check (decoupled optimality oracle)

def lq_value_prediction(model: LqMfgModel, P) -> float:
    """Optimal value of the limiting control problem when m and Phi vanish.

    In that regime the limiting cost is a plain LQ functional and its optimal
    value is x0' P(0) x0 / 2 plus half the time integral of
    sigma' P sigma + sigma0' P sigma0 (trapezoid on the grid nodes).  The
    caller is responsible for using a model whose mean-field path and affine
    offset are identically zero (e.g. x0 = 0, b = 0, alpha = 0 and no
    sigma-to-Phi forcing); otherwise the formula omits real terms.
    """
    P = np.asarray(P, float)
    grid = model.grid
    w = np.full(grid.node_count, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    sg = model.sigma.values[:, :, 0]
    sg0 = model.sigma0.values[:, :, 0]
    trace = np.einsum("jn,jnm,jm->j", sg, P, sg) \
        + np.einsum("jn,jnm,jm->j", sg0, P, sg0)
    x0 = np.asarray(model.x0, float)
    return float(0.5 * x0 @ P[0] @ x0 + 0.5 * (w * trace).sum())


@dataclasses.dataclass(frozen=True)
class LimitCostReport:
    """Monte-Carlo cost of the decentralized policy in the limiting problem."""

    S: int
    seed: int
    baseline_mean_cost: float
    baseline_stderr: float
    results: tuple[CandidateResult, ...]
    max_gain: float


def _run_limit_batch(pl: _SimPayload, S: int, seed: int,
                     cand: DeviationCandidate | None) -> np.ndarray:
    """Limiting costs of S independent samples, vectorized over samples.

    Each sample owns streams 0 (common) and 1 (individual) of its derived
    seed, exactly as a size-1 population sample would, so results can be
    cross-checked against the per-sample path.
    """
    M, h, n, k = pl.M, pl.h, pl.n, pl.k
    dWi = np.empty((S, M))
    dW0 = np.empty((S, M))
    for s in range(S):
        seed_s = derive_seed(seed, 1, s)
        dW0[s] = gaussian_increments(pl.grid, seed_s, 0)
        dWi[s] = gaussian_increments(pl.grid, seed_s, 1)
    modify = cand is not None and not cand.is_self

    zh = np.tile(pl.x0, (S, 1))
    zb = zh.copy()
    m = np.tile(pl.x0, (S, 1))
    Jl = np.zeros(S)

    for j in range(M + 1):
        u = zh @ pl.KzT[j] + pl.kmc[j]
        if modify:
            if cand.zero_control:
                u = np.zeros((S, k))
            else:
                u = cand.gain_scale * (zh @ pl.KzT[j]) + pl.kmc[j] \
                    + cand.offset
        dz = zb - m
        Jl += ((dz @ pl.Qw[j]) * dz).sum(axis=1) \
            + ((u @ pl.Rw[j]) * u).sum(axis=1)
        if j == M:
            break
        dWi_j = dWi[:, j][:, None]
        dW0_j = dW0[:, j][:, None]
        zb = (zb + h * (zb @ pl.AT[j] + u @ pl.BT[j] + m @ pl.alT[j]
                        + pl.bb[j])
              + dWi_j * (zb @ pl.CT[j] + u @ pl.DT[j] + m @ pl.beT[j]
                         + pl.sgv[j])
              + dW0_j * (zb @ pl.C0T[j] + u @ pl.D0T[j] + m @ pl.be0T[j]
                         + pl.sg0v[j]))
        zh = (zh + h * (zh @ pl.P1T[j] + pl.p0[j])
              + dWi_j * (zh @ pl.Q1T[j] + pl.q0[j]))
        m = (m + h * (m @ pl.ApAlT[j] + pl.BEu[j])
             + dW0_j * (m @ pl.Md0T[j] + pl.D0Eu[j]))

    Jl += (zb @ pl.G * zb).sum(axis=1)
    Jl *= 0.5
    if not np.isfinite(Jl).all():
        raise DivergenceError("limiting state diverged")
    return Jl


def limit_problem_experiment(model: LqMfgModel, law: FeedbackLaw, S: int,
                             seed: int, candidates=(),
                             beta_literal: bool = False) -> LimitCostReport:
    """Costs of the policy (and optional deviations) in the limiting problem.

    No population coupling is involved: each sample integrates the limiting
    state against its own noises and the mean-field path.  Candidates share
    sample streams with the baseline (common random numbers).
    """
    S = int(S)
    if S < 2:
        raise UsageError("need at least 2 samples")
    candidates = tuple(candidates)
    Em = integrate_Em(model, law)
    payload = _SimPayload(model, law, Em, beta_literal)
    base = _run_limit_batch(payload, S, seed, None)
    base_mean, base_se = _mean_se(base.tolist())
    results = []
    for cand in candidates:
        vals = _run_limit_batch(payload, S, seed, cand)
        mean, se = _mean_se(vals.tolist())
        gain, gain_se = _mean_se((base - vals).tolist())
        results.append(CandidateResult(name=cand.name, mean_cost=mean,
                                       cost_stderr=se, gain=gain,
                                       gain_stderr=gain_se))
    max_gain = max((r.gain for r in results), default=float("nan"))
    return LimitCostReport(S=S, seed=seed, baseline_mean_cost=base_mean,
                           baseline_stderr=base_se, results=tuple(results),
                           max_gain=max_gain)
