"""Fluid and diffusion scalings of a simulated path.

The free processes are assembled from raw event counters.  Time-changed
composites such as the centered routing count evaluated at the realized
number of departures collapse to ``Psi[k, j](t) - Q[k, j] * F_k(t)``, so
nothing here integrates numerically: the occupancy integral comes from
the simulator, exact up to floating-point accumulation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulator import PathRecord

UNIFORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GridPath:
    """A vector-valued path sampled on a uniform grid, shape ``(len(grid), d)``."""

    grid: np.ndarray
    values: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != grid.shape[0]:
            raise ValueError(f"values have {values.shape[0]} rows for a grid of {grid.shape[0]} points")
        if grid.shape[0] > 1:
            dt = np.diff(grid)
            if np.any(dt <= 0) or np.max(np.abs(dt - dt[0])) > UNIFORM_TOL * max(1.0, grid[-1]):
                raise ValueError("grid must be strictly increasing with uniform spacing")
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        labels = tuple(self.labels) or tuple(f"c{i}" for i in range(values.shape[1]))
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0]) if len(self.grid) > 1 else 0.0

    def __getitem__(self, idx) -> np.ndarray:
        return self.values[:, idx]

    def sup_distance(self, other: "GridPath") -> float:
        return float(np.max(np.abs(self.values - other.values))) if self.values.size else 0.0


@dataclass(frozen=True)
class ScaledBundle:
    hatQ: GridPath
    hatV: GridPath
    hatI: GridPath
    hatT: GridPath
    barQ: GridPath
    barV: GridPath
    barbarV: GridPath
    xi: GridPath
    zeta: GridPath
    bar_xi: GridPath
    bar_zeta: GridPath

    FIELDS = ("hatQ", "hatV", "hatI", "hatT", "barQ", "barV", "barbarV", "xi", "zeta", "bar_xi", "bar_zeta")


def _labels(prefix: str, d: int) -> tuple:
    return tuple(f"{prefix}_{i + 1}" for i in range(d))


def free_processes(record: PathRecord) -> tuple[GridPath, GridPath]:
    """Diffusion-scaled free processes ``(xi, zeta)`` from event counters."""
    p = record.params
    n = record.n
    rn = np.sqrt(n)
    D = record.D.astype(float)
    F = record.F.astype(float)
    # centered service clocks and routing noise along the realized time changes
    serv = D - n * p.mu * record.T_busy
    inf_clock = F - p.eta * record.intV
    route_in = (record.Psi - p.Q[None, :, :] * F[:, :, None]).sum(axis=1)   # (G, J)
    route_out = (record.Phi - p.P[None, :, :] * D[:, :, None]).sum(axis=1)  # (G, K)
    q0 = record.q[0].astype(float)
    v0 = record.v[0].astype(float)
    xi = (q0 + route_in - serv + inf_clock @ p.Q) / rn
    zeta = ((v0 - n * p.m) + route_out - inf_clock + serv @ p.P) / rn
    return (GridPath(record.grid, xi, _labels("xi", p.J)),
            GridPath(record.grid, zeta, _labels("zeta", p.K)))


def scale_path(record: PathRecord) -> ScaledBundle:
    p = record.params
    n = record.n
    rn = np.sqrt(n)
    t = record.grid[:, None]
    q = record.q.astype(float)
    v = record.v.astype(float)
    xi, zeta = free_processes(record)
    g = record.grid
    hatV = (v - n * p.m) / rn
    return ScaledBundle(
        hatQ=GridPath(g, q / rn, _labels("hatQ", p.J)),
        hatV=GridPath(g, hatV, _labels("hatV", p.K)),
        hatI=GridPath(g, rn * (t - record.T_busy), _labels("hatI", p.J)),
        hatT=GridPath(g, rn * record.T_busy, _labels("hatT", p.J)),
        barQ=GridPath(g, q / n, _labels("barQ", p.J)),
        barV=GridPath(g, hatV / rn, _labels("barV", p.K)),
        barbarV=GridPath(g, v / n, _labels("barbarV", p.K)),
        xi=xi,
        zeta=zeta,
        bar_xi=GridPath(g, xi.values / rn, _labels("bar_xi", p.J)),
        bar_zeta=GridPath(g, zeta.values / rn, _labels("bar_zeta", p.K)),
    )


def integrated_hatV(record: PathRecord) -> np.ndarray:
    """``int_0^t hatV_k(s) ds`` at each grid time, from the exact occupancy integral."""
    p = record.params
    return (record.intV - record.n * p.m * record.grid[:, None]) / np.sqrt(record.n)


def free_mass_constant(record: PathRecord) -> float:
    """Value that ``sum(xi) + sum(zeta)`` keeps for all t: ``sqrt(n) * (1 - sum(m))`` plus rounding of v(0)."""
    p = record.params
    n = record.n
    total0 = float(record.q[0].sum() + record.v[0].sum())
    return (total0 - n * float(p.m.sum())) / np.sqrt(n)


def reconstruction_residuals(record: PathRecord, bundle: ScaledBundle | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise defects of the state decomposition, shapes ``(G, J)`` and ``(G, K)``.

    Queue side: ``hatQ - xi - sum_k Q[k,j] eta_k intV_hat_k - mu_j hatI_j``
    minus the drift ``sqrt(n) t (inflow_j - mu_j)``, which vanishes under
    exact critical loading.  Infinite-server side:
    ``hatV - zeta + eta intV_hat + sum_j P[j,k] mu_j hatI_j``.
    """
    p = record.params
    b = bundle or scale_path(record)
    iv = integrated_hatV(record)
    t = record.grid[:, None]
    drift = np.sqrt(record.n) * t * ((p.mu @ p.P) @ p.Q - p.mu)
    muI = p.mu * b.hatI.values
    rq = b.hatQ.values - b.xi.values - (p.eta * iv) @ p.Q - muI - drift
    rv = b.hatV.values - b.zeta.values + p.eta * iv + muI @ p.P
    return rq, rv
