"""Covariance of the limiting free Brownian motion and samples of the limit triple.

Three covariance modes are available:

``as_written``
    the closed-form entries exactly as displayed for the limit theorem.
``consistency_projected``
    ``Pi Sigma Pi`` with ``Pi = I - 11^T / (J+K)``, which puts the all-ones
    vector in the kernel so the summed coordinate has zero variance.
``multinomial_routing``
    the same bookkeeping but with the routing noises of one station
    treated as a multinomial split (covariance ``diag(q) - q q^T``) rather
    than independent.  The within-block off-diagonal entries cancel and
    the all-ones vector is in the kernel automatically.

All three coincide when every station has a single route (e.g. J = K = 1).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import IndefiniteMatrix, InvalidInput
from .netmodel import NetworkParams
from .regulator import RegulatorInput, RegulatorOutput, regulate, DEFAULT_TOL
from .rng import LIMIT_STREAM, make_rng, replication_seed, worker_count
from .scaling import GridPath

MODES = ("as_written", "consistency_projected", "multinomial_routing")
MODE_ALIASES = {"written": "as_written", "projected": "consistency_projected", "multinomial": "multinomial_routing"}
INDEFINITE_TOL = 1e-6


def resolve_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown covariance mode {mode!r}; choose from {MODES}")
    return mode


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    sigma: np.ndarray
    mode: str
    eigen_min: float
    ones_quadratic: float   # 1^T Sigma 1 of the as_written matrix
    factor: np.ndarray      # L with L L^T = sigma

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "sigma": self.sigma.tolist(), "eigen_min": self.eigen_min,
                "ones_quadratic": self.ones_quadratic}


def covariance_as_written(params: NetworkParams) -> np.ndarray:
    J, K = params.J, params.K
    mu, eta, m, P, Q = params.mu, params.eta, params.m, params.P, params.Q
    em = eta * m  # completion rate per unit time at each infinite server, fluid scale
    S = np.zeros((J + K, J + K))
    for j in range(J):
        S[j, j] = np.sum(Q[:, j] * (1 - Q[:, j]) * em) + mu[j] + np.sum(Q[:, j] ** 2 * em)
        for i in range(J):
            if i != j:
                S[i, j] = np.sum(Q[:, i] * Q[:, j] * em)
        for k in range(K):
            S[j, J + k] = S[J + k, j] = -P[j, k] * mu[j] - Q[k, j] * em[k]
    for k in range(K):
        S[J + k, J + k] = np.sum(P[:, k] * (1 - P[:, k]) * mu) + em[k] + np.sum(P[:, k] ** 2 * mu)
        for l in range(K):
            if l != k:
                S[J + l, J + k] = np.sum(P[:, l] * P[:, k] * mu)
    return 0.5 * (S + S.T)


def covariance_multinomial(params: NetworkParams) -> np.ndarray:
    """Covariance built noise source by noise source.

    Sources: service clocks (variance ``mu_j``), infinite-server clocks
    (``eta_k m_k``), and routing splits with multinomial covariance
    ``rate * (diag(p) - p p^T)``.  Each source enters the free processes
    through a fixed loading vector, so ``Sigma = sum_s rate_s * b_s b_s^T``
    (routing sources contribute their split covariance directly).
    """
    J, K = params.J, params.K
    mu, P, Q = params.mu, params.P, params.Q
    em = params.eta * params.m
    S = np.zeros((J + K, J + K))
    for j in range(J):
        # service completion at j: leaves xi_j, feeds zeta via P[j]
        b = np.zeros(J + K)
        b[j] = -1.0
        b[J:] = P[j]
        S += mu[j] * np.outer(b, b)
        S[J:, J:] += mu[j] * (np.diag(P[j]) - np.outer(P[j], P[j]))
    for k in range(K):
        b = np.zeros(J + K)
        b[J + k] = -1.0
        b[:J] = Q[k]
        S += em[k] * np.outer(b, b)
        S[:J, :J] += em[k] * (np.diag(Q[k]) - np.outer(Q[k], Q[k]))
    return 0.5 * (S + S.T)


def _sqrt_factor(S: np.ndarray) -> tuple[np.ndarray, float]:
    w, V = np.linalg.eigh(S)
    eig_min = float(w.min())
    L = V * np.sqrt(np.clip(w, 0.0, None))
    return L, eig_min


def build_covariance(params: NetworkParams, mode: str = "consistency_projected") -> CovarianceSpec:
    mode = resolve_mode(mode)
    written = covariance_as_written(params)
    ones = np.ones(params.J + params.K)
    ones_q = float(ones @ written @ ones)
    if mode == "as_written":
        S = written
    elif mode == "consistency_projected":
        d = params.J + params.K
        Pi = np.eye(d) - np.outer(ones, ones) / d
        S = Pi @ written @ Pi
        S = 0.5 * (S + S.T)
    else:
        S = covariance_multinomial(params)
    L, eig_min = _sqrt_factor(S)
    if eig_min < -INDEFINITE_TOL:
        raise IndefiniteMatrix(f"{mode} covariance has eigenvalue {eig_min:.3e}")
    S.setflags(write=False)
    L.setflags(write=False)
    return CovarianceSpec(S, mode, eig_min, ones_q, L)


def sample_bm(cov: CovarianceSpec, initial, grid, seed: int, rng: np.random.Generator | None = None) -> GridPath:
    """Brownian path started at ``initial`` with increment covariance ``dt * sigma``."""
    grid = np.asarray(grid, dtype=float)
    initial = np.asarray(initial, dtype=float).reshape(-1)
    if initial.shape != (cov.dim,):
        raise InvalidInput(f"initial state must have length {cov.dim}")
    rng = rng or make_rng(seed, LIMIT_STREAM)
    G = len(grid)
    path = np.empty((G, cov.dim))
    path[0] = initial
    if G > 1:
        dt = grid[1] - grid[0]
        g = rng.standard_normal((G - 1, cov.dim))
        incr = np.sqrt(dt) * (g @ cov.factor.T)
        path[1:] = initial + np.cumsum(incr, axis=0)
    return GridPath(grid, path)


@dataclass(frozen=True)
class LimitSample:
    Qstar: GridPath
    Istar: GridPath
    Vstar: GridPath
    driver: GridPath
    output: RegulatorOutput


def simulate_limit(params: NetworkParams, cov: CovarianceSpec, initial=None, grid=None, seed: int = 0,
                   tol: float = DEFAULT_TOL, mode: str = "forward", driver: GridPath | None = None) -> LimitSample:
    """Sample the free Brownian motion and push it through the regulator.

    ``driver`` overrides sampling (useful for deterministic oracles).
    """
    J = params.J
    if driver is None:
        if initial is None:
            initial = np.zeros(J + params.K)
        initial = np.asarray(initial, dtype=float)
        if np.any(initial[:J] < 0):
            raise InvalidInput(f"initial queue block must be nonnegative, got {initial[:J].tolist()}")
        driver = sample_bm(cov, initial, grid, seed)
    xi = GridPath(driver.grid, driver.values[:, :J], tuple(f"xi_{j + 1}" for j in range(J)))
    zeta = GridPath(driver.grid, driver.values[:, J:], tuple(f"zeta_{k + 1}" for k in range(params.K)))
    out = regulate(RegulatorInput(xi, zeta, params), mode=mode, tol=tol)
    return LimitSample(out.x, out.u, out.y, driver, out)


def simulate_limit_replications(params: NetworkParams, cov: CovarianceSpec, grid, master_seed: int, reps: int,
                                initial=None, tol: float = DEFAULT_TOL,
                                threads: int | None = None) -> list[LimitSample]:
    seeds = [replication_seed(master_seed, r) for r in range(reps)]
    threads = threads or worker_count()

    def one(seed):
        return simulate_limit(params, cov, initial, grid, seed, tol)

    if threads <= 1 or reps <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))
