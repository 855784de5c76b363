"""Static network description and the critical-loading checks.

A network has ``J`` single-server stations and ``K`` infinite-server
stations.  Jobs leaving single-server ``j`` go to infinite-server ``k``
with probability ``P[j, k]``; jobs leaving infinite-server ``k`` go to
single-server ``j`` with probability ``Q[k, j]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonPositiveRate, NonStochasticRow, ValidationError

ROW_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkParams:
    J: int
    K: int
    mu: np.ndarray
    eta: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    m: np.ndarray = field(repr=False)

    @property
    def eta_max(self) -> float:
        return float(self.eta.max())

    def to_config(self) -> dict:
        return {
            "J": self.J,
            "K": self.K,
            "mu": self.mu.tolist(),
            "eta": self.eta.tolist(),
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return self.J == other.J and self.K == other.K and all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("mu", "eta", "P", "Q", "m")
        )


@dataclass(frozen=True)
class HeavyTrafficReport:
    ht1_residuals: np.ndarray
    ht2_residual: float
    tol: float
    passes: bool

    def to_dict(self) -> dict:
        return {
            "ht1_residuals": self.ht1_residuals.tolist(),
            "ht2_residual": self.ht2_residual,
            "tol": self.tol,
            "passes": self.passes,
        }


def _check_stochastic(name: str, M: np.ndarray, renormalize: bool) -> np.ndarray:
    if np.any(M < 0) or np.any(M > 1):
        bad = int(np.argwhere((M < 0) | (M > 1))[0, 0])
        raise NonStochasticRow(name, bad, float(M[bad].sum()))
    sums = M.sum(axis=1)
    for i, s in enumerate(sums):
        if abs(s - 1.0) > ROW_TOL:
            if not renormalize or s <= 0:
                raise NonStochasticRow(name, i, float(s))
    if renormalize:
        M = M / sums[:, None]
    return M


def build_network(J, K, mu, eta, P, Q, renormalize: bool = False) -> NetworkParams:
    """Validate the primitives and derive the loads ``m``.

    ``m_k = eta_k^{-1} sum_j mu_j P[j, k]`` is the fraction of the
    population expected at infinite-server ``k``.  Rows of ``P`` and ``Q``
    must sum to one within ``1e-12``; with ``renormalize=True`` rows
    outside that tolerance are rescaled instead of rejected.
    """
    J, K = int(J), int(K)
    if J < 1 or K < 1:
        raise DimensionMismatch(f"need J >= 1 and K >= 1, got J={J}, K={K}")
    mu = np.asarray(mu, dtype=float).reshape(-1)
    eta = np.asarray(eta, dtype=float).reshape(-1)
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if mu.shape != (J,):
        raise DimensionMismatch(f"mu has shape {mu.shape}, expected ({J},)")
    if eta.shape != (K,):
        raise DimensionMismatch(f"eta has shape {eta.shape}, expected ({K},)")
    if P.shape != (J, K):
        raise DimensionMismatch(f"P has shape {P.shape}, expected ({J}, {K})")
    if Q.shape != (K, J):
        raise DimensionMismatch(f"Q has shape {Q.shape}, expected ({K}, {J})")
    if not (np.all(np.isfinite(mu)) and np.all(mu > 0)):
        raise NonPositiveRate(f"service rates mu must be positive, got {mu.tolist()}")
    if not (np.all(np.isfinite(eta)) and np.all(eta > 0)):
        raise NonPositiveRate(f"infinite-server rates eta must be positive, got {eta.tolist()}")
    P = _check_stochastic("P", P, renormalize)
    Q = _check_stochastic("Q", Q, renormalize)
    m = (mu @ P) / eta
    return NetworkParams(J, K, _frozen(mu), _frozen(eta), _frozen(P), _frozen(Q), _frozen(m))


def check_heavy_traffic(params: NetworkParams, tol: float = 1e-9) -> HeavyTrafficReport:
    """Residuals of the two critical-loading conditions.

    HT1: every single server is exactly balanced,
    ``sum_k sum_i mu_i P[i, k] Q[k, j] = mu_j``.
    HT2: the loads sum to one.
    """
    inflow = (params.mu @ params.P) @ params.Q
    ht1 = np.abs(inflow - params.mu)
    ht2 = abs(float(params.m.sum()) - 1.0)
    passes = bool(np.all(ht1 <= tol) and ht2 <= tol)
    return HeavyTrafficReport(ht1, ht2, float(tol), passes)


def load_network(path, renormalize: bool = False) -> NetworkParams:
    with open(path) as fh:
        cfg = json.load(fh)
    return network_from_config(cfg, renormalize=renormalize)


def network_from_config(cfg: dict, renormalize: bool = False) -> NetworkParams:
    try:
        return build_network(cfg["J"], cfg["K"], cfg["mu"], cfg["eta"], cfg["P"], cfg["Q"],
                             renormalize=renormalize)
    except KeyError as exc:
        raise ValidationError(f"config is missing field {exc.args[0]!r}") from None


def save_network(params: NetworkParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_config(), indent=2) + "\n")


def _random_stochastic(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    W = rng.uniform(size=(rows, cols)) + 1e-3
    return W / W.sum(axis=1, keepdims=True)


def _sinkhorn(W: np.ndarray, row_sums: np.ndarray, col_sums: np.ndarray,
              tol: float = 1e-15, max_iter: int = 100_000) -> np.ndarray:
    F = W.copy()
    for _ in range(max_iter):
        F *= (col_sums / F.sum(axis=0))[None, :]
        F *= (row_sums / F.sum(axis=1))[:, None]
        if np.max(np.abs(F.sum(axis=0) - col_sums)) <= tol * col_sums.sum():
            break
    return F


def random_network(J: int, K: int, rng: np.random.Generator, critical: bool = True) -> NetworkParams:
    """Draw a random network, optionally critically loaded.

    Rows of ``P`` and ``Q`` are normalized uniform draws and ``mu`` is
    uniform on ``[0.5, 2]``.  For a critical instance ``eta`` is set to
    ``K * sum_j mu_j P[j, k]`` (so every ``m_k = 1/K``) and ``Q`` is the
    row-normalized Sinkhorn balancing of a random positive matrix whose
    row sums are the flows into each infinite server and whose column
    sums are ``mu``.  That balancing always exists because both margins
    total ``sum(mu)``.
    """
    mu = rng.uniform(0.5, 2.0, size=J)
    P = _random_stochastic(rng, J, K)
    if not critical:
        eta = rng.uniform(0.5, 2.0, size=K)
        return build_network(J, K, mu, eta, P, _random_stochastic(rng, K, J))
    flow = mu @ P
    if np.any(flow <= 0):
        raise ValidationError("some infinite-server station receives no flow; no critical Q exists")
    eta = K * flow
    F = _sinkhorn(rng.uniform(size=(K, J)) + 1e-3, flow, mu)
    Q = F / F.sum(axis=1, keepdims=True)
    return build_network(J, K, mu, eta, P, Q)
