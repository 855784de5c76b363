"""One-sided reflection and the nonlinear regulator on a uniform grid.

Given free paths ``xi`` (J coordinates) and ``zeta`` (K coordinates), the
regulator finds ``y`` solving

    y_k(t) = zeta_k(t) - eta_k int_0^t y_k - sum_j P[j,k] psi(z_j)(t),
    z_j(t) = xi_j(t) + sum_l Q[l,j] eta_l int_0^t y_l,

and returns ``x = phi(z)``, ``u = psi(z) / mu`` and ``y``.  Integrals use
the left-rectangle rule ``int_0^{t_i} y = dt * sum_{r<i} y(t_r)``, which
makes the discrete system strictly causal: ``y(t_i)`` only depends on
earlier grid values.  A single forward sweep therefore solves it exactly,
and Picard iteration of the whole-path map converges to the same point.

The reflection map only sees grid values; excursions below zero between
grid points are invisible and cost O(dt) against the continuous map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InvalidInput, NoConvergence
from .netmodel import NetworkParams
from .scaling import GridPath

INITIAL_SLACK = 1e-9
DEFAULT_TOL = 1e-10


def reflect(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise reflection: ``psi = running max of (-x)^+``, ``phi = x + psi``."""
    x = np.asarray(values, dtype=float)
    psi = np.maximum.accumulate(np.maximum(-x, 0.0), axis=0)
    return psi, x + psi


def reflect_1d(path: GridPath) -> tuple[GridPath, GridPath]:
    psi, phi = reflect(path.values)
    return GridPath(path.grid, psi, ("psi",)), GridPath(path.grid, phi, ("phi",))


@dataclass(frozen=True)
class RegulatorInput:
    xi: GridPath
    zeta: GridPath
    params: NetworkParams
    strict: bool = False
    mass_tol: float = 1e-9

    def __post_init__(self):
        p = self.params
        if self.xi.dim != p.J or self.zeta.dim != p.K:
            raise InvalidInput(f"expected {p.J} xi and {p.K} zeta coordinates, "
                               f"got {self.xi.dim} and {self.zeta.dim}")
        if self.xi.grid.shape != self.zeta.grid.shape or not np.array_equal(self.xi.grid, self.zeta.grid):
            raise InvalidInput("xi and zeta must share a grid")
        if np.any(self.xi.values[0] < -INITIAL_SLACK):
            raise InvalidInput(f"xi(0) must be nonnegative, got {self.xi.values[0].tolist()}")
        if self.strict:
            mass = self.xi.values.sum(axis=1) + self.zeta.values.sum(axis=1)
            if np.max(np.abs(mass)) > self.mass_tol:
                raise InvalidInput(f"sum(xi) + sum(zeta) deviates from 0 by {np.max(np.abs(mass)):.3e}")

    @property
    def grid(self) -> np.ndarray:
        return self.xi.grid

    @property
    def dt(self) -> float:
        return self.xi.step


@dataclass(frozen=True)
class RegulatorOutput:
    x: GridPath
    u: GridPath
    y: GridPath
    z: GridPath
    residual: float
    iterations: int
    mode: str


def default_max_iter(params: NetworkParams, horizon: float) -> int:
    return 10 * math.ceil(2 * params.eta_max * params.J * params.K * horizon) + 100


def _left_integral(y: np.ndarray, dt: float) -> np.ndarray:
    S = np.zeros_like(y)
    if len(y) > 1:
        np.cumsum(y[:-1], axis=0, out=S[1:])
    return dt * S


def picard_map(y: np.ndarray, inp: RegulatorInput) -> np.ndarray:
    """One application of the whole-path successive-approximation map."""
    p = inp.params
    S = _left_integral(y, inp.dt)
    z = inp.xi.values + (p.eta * S) @ p.Q
    psi, _ = reflect(z)
    return inp.zeta.values - p.eta * S - psi @ p.P


@njit(cache=True, nogil=True)
def _forward_sweep(xi, zeta, eta, P, Q, dt):
    G, J = xi.shape
    K = zeta.shape[1]
    y = np.empty((G, K))
    cum = np.zeros(K)       # sum_{r<i} y(t_r)
    psi = np.zeros(J)
    feed = np.empty(J)
    for i in range(G):
        for j in range(J):
            s = 0.0
            for l in range(K):
                s += Q[l, j] * eta[l] * (dt * cum[l])
            z = xi[i, j] + s
            if -z > psi[j]:
                psi[j] = -z
            feed[j] = psi[j]
        for k in range(K):
            s = 0.0
            for j in range(J):
                s += P[j, k] * feed[j]
            y[i, k] = zeta[i, k] - eta[k] * (dt * cum[k]) - s
        for k in range(K):
            cum[k] += y[i, k]
    return y


def _residual(y: np.ndarray, inp: RegulatorInput) -> float:
    return float(np.max(np.abs(y - picard_map(y, inp)))) if y.size else 0.0


def picard_history(inp: RegulatorInput, iterations: int, y0: np.ndarray | None = None) -> list[float]:
    """Sup distances between successive Picard iterates, for convergence-rate checks."""
    y = np.zeros_like(inp.zeta.values) if y0 is None else np.array(y0, dtype=float)
    out = []
    for _ in range(iterations):
        y_new = picard_map(y, inp)
        out.append(float(np.max(np.abs(y_new - y))))
        y = y_new
    return out


def solve_y(inp: RegulatorInput, mode: str = "forward", tol: float = DEFAULT_TOL,
            max_iter: int | None = None, y0: np.ndarray | None = None) -> tuple[GridPath, int]:
    """Solve the discrete integral equation for ``y``; returns ``(y, iterations)``.

    ``forward`` is the exact causal sweep (iterations = 1).  ``picard``
    iterates the whole-path map from ``y0`` (default zero) until successive
    iterates are within ``tol`` in sup norm.
    """
    p = inp.params
    labels = tuple(f"y_{k + 1}" for k in range(p.K))
    if mode == "forward":
        y = _forward_sweep(np.ascontiguousarray(inp.xi.values), np.ascontiguousarray(inp.zeta.values),
                           np.asarray(p.eta), np.asarray(p.P), np.asarray(p.Q), inp.dt)
        return GridPath(inp.grid, y, labels), 1
    if mode != "picard":
        raise ValueError(f"unknown mode {mode!r}; use 'forward' or 'picard'")
    if max_iter is None:
        max_iter = default_max_iter(p, float(inp.grid[-1]))
    y = np.zeros_like(inp.zeta.values) if y0 is None else np.array(y0, dtype=float)
    gap = np.inf
    for it in range(1, max_iter + 1):
        y_new = picard_map(y, inp)
        gap = float(np.max(np.abs(y_new - y))) if y.size else 0.0
        y = y_new
        if not np.all(np.isfinite(y)):
            raise NoConvergence(it, gap)
        if gap < tol:
            return GridPath(inp.grid, y, labels), it
    raise NoConvergence(max_iter, gap)


def regulate(inp: RegulatorInput, mode: str = "forward", tol: float = DEFAULT_TOL,
             max_iter: int | None = None, y0: np.ndarray | None = None) -> RegulatorOutput:
    """Apply the regulator: ``x = phi(z)``, ``u = psi(z) / mu``, ``y`` from :func:`solve_y`."""
    p = inp.params
    y, iterations = solve_y(inp, mode, tol, max_iter, y0)
    S = _left_integral(y.values, inp.dt)
    z = inp.xi.values + (p.eta * S) @ p.Q
    psi, phi = reflect(z)
    g = inp.grid
    return RegulatorOutput(
        x=GridPath(g, phi, tuple(f"x_{j + 1}" for j in range(p.J))),
        u=GridPath(g, psi / p.mu, tuple(f"u_{j + 1}" for j in range(p.J))),
        y=y,
        z=GridPath(g, z, tuple(f"z_{j + 1}" for j in range(p.J))),
        residual=_residual(y.values, inp),
        iterations=iterations,
        mode=mode,
    )


def complementarity_defect(x: np.ndarray, u: np.ndarray, eps: float) -> np.ndarray:
    """Per-coordinate ``sum_i (u(t_{i+1}) - u(t_i)) * 1{x(t_{i+1}) > eps}``.

    The indicator is taken at the right end of each step because on a
    grid the pushing term increases exactly at the point where the
    reflected path sits at zero.
    """
    du = np.diff(u, axis=0)
    return (du * (x[1:] > eps)).sum(axis=0)


def continuity_constant(params: NetworkParams, horizon: float) -> float:
    """Gronwall-type Lipschitz bound ``exp(2 eta_max J K T) (2J + 1)`` for the regulator."""
    return math.exp(2 * params.eta_max * params.J * params.K * horizon) * (2 * params.J + 1)


def output_stack(out: RegulatorOutput) -> np.ndarray:
    return np.hstack([out.x.values, out.u.values, out.y.values])
