"""Event-level simulation of the n-th network in the heavy-traffic sequence.

Single-server ``j`` works at rate ``n * mu_j`` whenever it holds a job;
infinite-server ``k`` completes jobs at total rate ``eta_k * v_k``.  The
network is simulated as a continuous-time Markov chain with competing
exponential clocks, which has the same law as the random-time-change
construction with unit-rate Poisson processes.

Every event consumes exactly three uniforms from the stream: one for the
holding time, one to pick the event, one for the routing destination.
The numba kernel and :func:`step` follow the same recipe, so a path built
from repeated :func:`step` calls is bit-identical to :func:`simulate_path`
driven by the same generator.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DeadSystem, NegativeAllocation, ValidationError
from .netmodel import NetworkParams
from .rng import make_rng, replication_seed, worker_count

GRID_TOL = 1e-9
_CHUNK_EVENTS = 8192

VIOLATION_KINDS = (
    "conservation",
    "nonnegativity",
    "single_balance",      # q = q(0) + A - D
    "infinite_balance",    # v = v(0) + E - F
    "single_arrivals",     # A_j = sum_k Psi[k, j]
    "infinite_arrivals",   # E_k = sum_j Phi[j, k]
    "single_routing",      # sum_k Phi[j, k] = D_j
    "infinite_routing",    # sum_j Psi[k, j] = F_k
    "busy_time",           # 0 <= T_busy <= t
    "work_conservation",   # idle only while empty
)


@dataclass
class SystemState:
    t: float
    q: np.ndarray
    v: np.ndarray
    D: np.ndarray
    F: np.ndarray
    A: np.ndarray
    E: np.ndarray
    T_busy: np.ndarray
    intV: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    q0: np.ndarray = field(repr=False)
    v0: np.ndarray = field(repr=False)

    @property
    def total_jobs(self) -> int:
        return int(self.q.sum() + self.v.sum())

    @property
    def idle(self) -> np.ndarray:
        return self.t - self.T_busy

    def copy(self) -> "SystemState":
        return SystemState(self.t, *(getattr(self, f).copy() for f in (
            "q", "v", "D", "F", "A", "E", "T_busy", "intV", "Phi", "Psi", "q0", "v0")))

    def violations(self) -> dict:
        """Count which of the bookkeeping identities fail (all zero when consistent)."""
        total0 = int(self.q0.sum() + self.v0.sum())
        return {
            "conservation": int(self.total_jobs != total0),
            "nonnegativity": int(np.any(self.q < 0) or np.any(self.v < 0)),
            "single_balance": int(np.any(self.q != self.q0 + self.A - self.D)),
            "infinite_balance": int(np.any(self.v != self.v0 + self.E - self.F)),
            "single_arrivals": int(np.any(self.A != self.Psi.sum(axis=0))),
            "infinite_arrivals": int(np.any(self.E != self.Phi.sum(axis=0))),
            "single_routing": int(np.any(self.Phi.sum(axis=1) != self.D)),
            "infinite_routing": int(np.any(self.Psi.sum(axis=1) != self.F)),
            "busy_time": int(np.any(self.T_busy < 0) or np.any(self.T_busy > self.t * (1 + 1e-12))),
            "work_conservation": 0,
        }


@dataclass(frozen=True)
class EventOutcome:
    kind: str          # "single" or "infinite"
    station: int
    destination: int
    holding: float
    time: float


@dataclass(frozen=True, eq=False)
class PathRecord:
    """Grid snapshots of one replication (right-continuous at grid times)."""

    grid: np.ndarray
    q: np.ndarray
    v: np.ndarray
    T_busy: np.ndarray
    intV: np.ndarray
    D: np.ndarray
    F: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    n: int
    seed: int
    params: NetworkParams = field(repr=False)
    total_jobs: int
    n_events: int = 0
    violations: dict | None = None

    @property
    def A(self) -> np.ndarray:
        return self.Psi.sum(axis=1)

    @property
    def E(self) -> np.ndarray:
        return self.Phi.sum(axis=1)

    @property
    def q0(self) -> np.ndarray:
        return self.q[0]

    @property
    def v0(self) -> np.ndarray:
        return self.v[0]

    def __eq__(self, other):
        if not isinstance(other, PathRecord):
            return NotImplemented
        arrays = ("grid", "q", "v", "T_busy", "intV", "D", "F", "Phi", "Psi")
        return (self.n == other.n and self.seed == other.seed and self.total_jobs == other.total_jobs
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def initial_state(params: NetworkParams, n: int, policy: str = "fluid", q0=None, v0=None) -> SystemState:
    """Starting configuration.

    ``policy="fluid"`` puts ``round(n * m_k)`` jobs (half rounds up) at each
    infinite server and books the remainder on single-server 0, so exactly
    ``n`` jobs are present.  If the remainder is negative the surplus is
    taken one job at a time from the currently largest infinite server
    (ties go to the highest index).  ``policy="explicit"`` uses ``q0`` and
    ``v0`` as given.
    """
    J, K = params.J, params.K
    if policy == "fluid":
        if n < 1:
            raise ValidationError(f"n must be >= 1, got {n}")
        v = _round_half_up(n * params.m)
        q = np.zeros(J, dtype=np.int64)
        r = int(n - v.sum())
        if r >= 0:
            q[0] += r
        while r < 0:
            k = K - 1 - int(np.argmax(v[::-1]))
            v[k] -= 1
            r += 1
    elif policy == "explicit":
        if q0 is None or v0 is None:
            raise ValidationError("explicit policy needs q0 and v0")
        q = np.asarray(q0, dtype=np.int64).copy()
        v = np.asarray(v0, dtype=np.int64).copy()
        if q.shape != (J,) or v.shape != (K,):
            raise ValidationError(f"explicit state must have shapes ({J},) and ({K},)")
        if np.any(q < 0) or np.any(v < 0):
            raise NegativeAllocation(f"negative initial allocation q0={q.tolist()}, v0={v.tolist()}")
    else:
        raise ValidationError(f"unknown initial policy {policy!r}")
    zJ = np.zeros(J, dtype=np.int64)
    zK = np.zeros(K, dtype=np.int64)
    return SystemState(
        t=0.0, q=q, v=v, D=zJ.copy(), F=zK.copy(), A=zJ.copy(), E=zK.copy(),
        T_busy=np.zeros(J), intV=np.zeros(K),
        Phi=np.zeros((J, K), dtype=np.int64), Psi=np.zeros((K, J), dtype=np.int64),
        q0=q.copy(), v0=v.copy(),
    )


def _cumulative_rows(M: np.ndarray) -> np.ndarray:
    C = np.cumsum(M, axis=1)
    C[:, -1] = np.inf  # inverse-CDF never runs off the end
    return C


def _inverse_cdf(cum_row: np.ndarray, u: float) -> int:
    for i in range(len(cum_row)):
        if u < cum_row[i]:
            return i
    return len(cum_row) - 1


def step(state: SystemState, params: NetworkParams, n: int, rng: np.random.Generator) -> EventOutcome:
    """Advance ``state`` in place by one event of the Markov chain."""
    J, K = params.J, params.K
    nmu = n * params.mu
    R = 0.0
    for j in range(J):
        if state.q[j] > 0:
            R += nmu[j]
    for k in range(K):
        R += params.eta[k] * state.v[k]
    if R <= 0.0:
        raise DeadSystem("no jobs in the network, total event rate is zero")
    u0, u1, u2 = rng.random(3)
    h = -math.log1p(-u0) / R
    for j in range(J):
        if state.q[j] > 0:
            state.T_busy[j] += h
    for k in range(K):
        state.intV[k] += state.v[k] * h
    state.t += h

    target = u1 * R
    acc = 0.0
    chosen = -1
    last = -1
    for j in range(J):
        if state.q[j] > 0:
            last = j
            acc += nmu[j]
            if target < acc:
                chosen = j
                break
    if chosen < 0:
        for k in range(K):
            if state.v[k] > 0:
                last = J + k
                acc += params.eta[k] * state.v[k]
                if target < acc:
                    chosen = J + k
                    break
    if chosen < 0:
        chosen = last

    if chosen < J:
        j = chosen
        k = _inverse_cdf(_cumulative_rows(params.P)[j], u2)
        state.q[j] -= 1
        state.D[j] += 1
        state.Phi[j, k] += 1
        state.E[k] += 1
        state.v[k] += 1
        return EventOutcome("single", j, k, h, state.t)
    k = chosen - J
    j = _inverse_cdf(_cumulative_rows(params.Q)[k], u2)
    state.v[k] -= 1
    state.F[k] += 1
    state.Psi[k, j] += 1
    state.A[j] += 1
    state.q[j] += 1
    return EventOutcome("infinite", k, j, h, state.t)


@njit(cache=True, nogil=True)
def _run(tarr, q, v, D, F, A, E, Tb, intV, Phi, Psi, q0, v0, total,
         nmu, eta, cumP, cumQ, u, upos, grid, gpos, max_events, check, viol,
         s_q, s_v, s_D, s_F, s_Tb, s_intV, s_Phi, s_Psi):
    # status: 0 done, 1 uniform buffer exhausted, 2 dead system
    J = q.shape[0]
    K = v.shape[0]
    ngrid = grid.shape[0]
    nu = u.shape[0]
    events = 0
    while True:
        if gpos >= ngrid or events >= max_events:
            return 0, upos, gpos, events
        if upos + 3 > nu:
            return 1, upos, gpos, events
        R = 0.0
        for j in range(J):
            if q[j] > 0:
                R += nmu[j]
        for k in range(K):
            R += eta[k] * v[k]
        if R <= 0.0:
            return 2, upos, gpos, events
        u0 = u[upos]
        u1 = u[upos + 1]
        u2 = u[upos + 2]
        upos += 3
        h = -np.log1p(-u0) / R
        t = tarr[0]
        tn = t + h
        while gpos < ngrid and grid[gpos] < tn:
            dt = grid[gpos] - t
            for j in range(J):
                s_q[gpos, j] = q[j]
                s_D[gpos, j] = D[j]
                s_Tb[gpos, j] = Tb[j] + dt if q[j] > 0 else Tb[j]
                for k in range(K):
                    s_Phi[gpos, j, k] = Phi[j, k]
            for k in range(K):
                s_v[gpos, k] = v[k]
                s_F[gpos, k] = F[k]
                s_intV[gpos, k] = intV[k] + v[k] * dt
                for j in range(J):
                    s_Psi[gpos, k, j] = Psi[k, j]
            gpos += 1

        for j in range(J):
            before = Tb[j]
            if q[j] > 0:
                Tb[j] += h
            if check:
                idle_inc = h - (Tb[j] - before)
                if q[j] > 0 and idle_inc > 1e-9 * (1.0 + tn):
                    viol[9] += 1
                if q[j] == 0 and Tb[j] != before:
                    viol[9] += 1
        for k in range(K):
            intV[k] += v[k] * h
        tarr[0] = tn

        target = u1 * R
        acc = 0.0
        chosen = -1
        last = -1
        for j in range(J):
            if q[j] > 0:
                last = j
                acc += nmu[j]
                if target < acc:
                    chosen = j
                    break
        if chosen < 0:
            for k in range(K):
                if v[k] > 0:
                    last = J + k
                    acc += eta[k] * v[k]
                    if target < acc:
                        chosen = J + k
                        break
        if chosen < 0:
            chosen = last

        if chosen < J:
            j = chosen
            k = K - 1
            for i in range(K):
                if u2 < cumP[j, i]:
                    k = i
                    break
            q[j] -= 1
            D[j] += 1
            Phi[j, k] += 1
            E[k] += 1
            v[k] += 1
        else:
            k = chosen - J
            j = J - 1
            for i in range(J):
                if u2 < cumQ[k, i]:
                    j = i
                    break
            v[k] -= 1
            F[k] += 1
            Psi[k, j] += 1
            A[j] += 1
            q[j] += 1
        events += 1

        if check:
            tot = 0
            for j in range(J):
                tot += q[j]
                if q[j] < 0:
                    viol[1] += 1
                if q[j] != q0[j] + A[j] - D[j]:
                    viol[2] += 1
                s = 0
                for k in range(K):
                    s += Psi[k, j]
                if s != A[j]:
                    viol[4] += 1
                s = 0
                for k in range(K):
                    s += Phi[j, k]
                if s != D[j]:
                    viol[6] += 1
                if Tb[j] < 0.0 or Tb[j] > tn * (1.0 + 1e-12):
                    viol[8] += 1
            for k in range(K):
                tot += v[k]
                if v[k] < 0:
                    viol[1] += 1
                if v[k] != v0[k] + E[k] - F[k]:
                    viol[3] += 1
                s = 0
                for j in range(J):
                    s += Phi[j, k]
                if s != E[k]:
                    viol[5] += 1
                s = 0
                for j in range(J):
                    s += Psi[k, j]
                if s != F[k]:
                    viol[7] += 1
            if tot != total:
                viol[0] += 1


def _check_grid(horizon: float, grid_step: float) -> np.ndarray:
    if horizon < 0:
        raise ValidationError(f"horizon must be nonnegative, got {horizon}")
    if horizon == 0:
        return np.zeros(1)
    if grid_step <= 0:
        raise ValidationError(f"grid step must be positive, got {grid_step}")
    M = int(round(horizon / grid_step))
    if M < 1 or abs(M * grid_step - horizon) > GRID_TOL:
        raise ValidationError(f"grid step {grid_step} does not divide horizon {horizon}")
    return np.arange(M + 1) * grid_step


def _drive(state: SystemState, params: NetworkParams, n: int, rng: np.random.Generator,
           grid: np.ndarray, max_events: int, check: bool):
    J, K = params.J, params.K
    G = len(grid)
    snaps = dict(
        q=np.zeros((G, J), dtype=np.int64), v=np.zeros((G, K), dtype=np.int64),
        D=np.zeros((G, J), dtype=np.int64), F=np.zeros((G, K), dtype=np.int64),
        T_busy=np.zeros((G, J)), intV=np.zeros((G, K)),
        Phi=np.zeros((G, J, K), dtype=np.int64), Psi=np.zeros((G, K, J), dtype=np.int64),
    )
    tarr = np.array([state.t])
    viol = np.zeros(len(VIOLATION_KINDS), dtype=np.int64)
    nmu = n * np.asarray(params.mu)
    eta = np.asarray(params.eta)
    cumP = _cumulative_rows(params.P)
    cumQ = _cumulative_rows(params.Q)
    total = state.total_jobs
    gpos = 0
    n_events = 0
    while True:
        u = rng.random(3 * _CHUNK_EVENTS)
        status, _, gpos, done = _run(
            tarr, state.q, state.v, state.D, state.F, state.A, state.E, state.T_busy, state.intV,
            state.Phi, state.Psi, state.q0, state.v0, total, nmu, eta, cumP, cumQ,
            u, 0, grid, gpos, max_events - n_events, check, viol,
            snaps["q"], snaps["v"], snaps["D"], snaps["F"], snaps["T_busy"], snaps["intV"],
            snaps["Phi"], snaps["Psi"],
        )
        n_events += done
        state.t = float(tarr[0])
        if status == 2:
            raise DeadSystem("no jobs in the network, total event rate is zero")
        if status == 0:
            break
    return snaps, n_events, dict(zip(VIOLATION_KINDS, viol.tolist()))


def simulate_path(params: NetworkParams, n: int, horizon: float, grid_step: float, seed: int,
                  check: bool = False, state: SystemState | None = None) -> PathRecord:
    """Simulate one replication and snapshot it on ``0, grid_step, ..., horizon``.

    Counts at a grid time are the values just after any event at that
    time; busy time and the occupancy integral are exact (linear between
    events).  With ``check=True`` every event is audited against the
    bookkeeping identities and the counts land in ``record.violations``.
    """
    grid = _check_grid(horizon, grid_step)
    if state is None:
        state = initial_state(params, n)
    else:
        state = state.copy()
    rng = make_rng(seed)
    snaps, n_events, viol = _drive(state, params, n, rng, grid, np.iinfo(np.int64).max, check)
    for a in snaps.values():
        a.setflags(write=False)
    grid.setflags(write=False)
    return PathRecord(grid=grid, n=int(n), seed=int(seed), params=params, total_jobs=state.total_jobs,
                      n_events=n_events, violations=viol if check else None, **snaps)


def run_events(params: NetworkParams, n: int, n_events: int, seed: int,
               state: SystemState | None = None) -> tuple[SystemState, dict]:
    """Run exactly ``n_events`` events with per-event auditing; no grid output."""
    state = initial_state(params, n) if state is None else state.copy()
    _, _, viol = _drive(state, params, n, make_rng(seed), np.array([np.inf]), n_events, True)
    return state, viol


def simulate_replications(params: NetworkParams, n: int, horizon: float, grid_step: float,
                          master_seed: int, reps: int, check: bool = False,
                          threads: int | None = None) -> list[PathRecord]:
    """Independent replications; replication ``r`` is seeded with ``master_seed ^ r``."""
    seeds = [replication_seed(master_seed, r) for r in range(reps)]
    threads = threads or worker_count()

    def one(seed):
        return simulate_path(params, n, horizon, grid_step, seed, check=check)

    if threads <= 1 or reps <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))
