import numpy as np
import pytest

from htnet.netmodel import random_network
from htnet.scaling import (GridPath, free_mass_constant, free_processes, integrated_hatV,
                           reconstruction_residuals, scale_path)
from htnet.simulator import PathRecord, initial_state, simulate_path, simulate_replications


def _frozen_record(params, n, q, v, T_busy, grid):
    G = len(grid)
    J, K = params.J, params.K
    z = lambda *s: np.zeros(s, dtype=np.int64)
    return PathRecord(grid=np.asarray(grid, float), q=np.asarray(q), v=np.asarray(v),
                      T_busy=np.asarray(T_busy, float), intV=np.zeros((G, K)),
                      D=z(G, J), F=z(G, K), Phi=z(G, J, K), Psi=z(G, K, J),
                      n=n, seed=0, params=params, total_jobs=int(np.sum(q[0]) + np.sum(v[0])))


def test_gridpath_validation():
    with pytest.raises(ValueError):
        GridPath([0.0, 0.1, 0.3], np.zeros(3))
    with pytest.raises(ValueError):
        GridPath([0.0, 0.1], [0.0, np.nan])
    g = GridPath([0.0, 0.5, 1.0], [1.0, 2.0, 3.0])
    assert g.dim == 1 and g.step == 0.5 and g.labels == ("c0",)


def test_centering_and_scaling(symmetric):
    grid = [0.0, 1.0]
    rec = _frozen_record(symmetric, 100, [[0, 0], [5, 0]], [[50, 50], [45, 50]],
                         [[0.0, 0.0], [1.0, 1.0]], grid)
    b = scale_path(rec)
    assert b.hatQ.values[1, 0] == 0.5
    assert b.hatV.values[0].tolist() == [0.0, 0.0]
    assert b.hatV.values[1, 1] == 0.0
    # never idle: busy time equals elapsed time
    assert np.all(b.hatI.values == 0.0)
    assert b.barQ.values[1, 0] == 0.05
    np.testing.assert_allclose(b.barbarV.values[1], [0.45, 0.5])
    np.testing.assert_allclose(b.barV.values, b.hatV.values / 10)


def test_free_processes_at_zero(random_critical):
    n = 77
    rec = simulate_path(random_critical, n, 1.0, 0.1, 1)
    xi, zeta = free_processes(rec)
    np.testing.assert_allclose(xi.values[0], rec.q[0] / np.sqrt(n), atol=1e-15)
    np.testing.assert_allclose(zeta.values[0], (rec.v[0] - n * random_critical.m) / np.sqrt(n), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_summed_free_processes_constant(random_critical, seed):
    rec = simulate_path(random_critical, 150, 5.0, 0.01, seed)
    xi, zeta = free_processes(rec)
    total = xi.values.sum(axis=1) + zeta.values.sum(axis=1)
    assert np.max(np.abs(total - free_mass_constant(rec))) <= 1e-9


def test_summed_free_processes_off_critical():
    # HT2 violated: the conserved value is sqrt(n) * (1 - sum m) up to v(0) rounding
    p = random_network(2, 3, np.random.default_rng(3), critical=False)
    n = 64
    state = initial_state(p, n, policy="explicit", q0=[4, 0], v0=[20, 20, 20])
    rec = simulate_path(p, n, 3.0, 0.01, 2, state=state)
    xi, zeta = free_processes(rec)
    total = xi.values.sum(axis=1) + zeta.values.sum(axis=1)
    expected = (64 - n * p.m.sum()) / np.sqrt(n)
    assert free_mass_constant(rec) == pytest.approx(expected, abs=1e-12)
    assert np.max(np.abs(total - expected)) <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_reconstruction_identity(random_critical, seed):
    rec = simulate_path(random_critical, 200, 5.0, 0.01, seed)
    rq, rv = reconstruction_residuals(rec)
    assert np.max(np.abs(rq)) <= 1e-9
    assert np.max(np.abs(rv)) <= 1e-9


def test_integrated_hatV_matches_exact_integral(single):
    rec = simulate_path(single, 100, 2.0, 0.5, 4)
    iv = integrated_hatV(rec)
    assert iv[0, 0] == 0.0
    np.testing.assert_allclose(iv[:, 0], (rec.intV[:, 0] - 100 * rec.grid) / 10)


def test_bundle_invariants(random_critical):
    b = scale_path(simulate_path(random_critical, 120, 4.0, 0.01, 8))
    assert np.all(b.hatQ.values >= 0)
    assert np.all(b.hatI.values[0] == 0)
    assert np.all(np.diff(b.hatI.values, axis=0) >= -1e-9)
    np.testing.assert_allclose(b.bar_xi.values, b.xi.values / np.sqrt(120))


def test_fluid_quantities_shrink_with_n(symmetric):
    stats = {}
    for n in (25, 100, 400):
        recs = simulate_replications(symmetric, n, 5.0, 0.01, 42, 60)
        bs = [scale_path(r) for r in recs]
        stats[n] = [
            np.median([np.abs(b.bar_xi.values).max() for b in bs]),
            np.median([np.abs(b.bar_zeta.values).max() for b in bs]),
            np.median([b.barQ.values.max() for b in bs]),
            np.median([np.abs(b.barV.values).max() for b in bs]),
            np.median([(r.grid[-1] - r.T_busy[-1]).max() for r in recs]),
        ]
    for i in range(5):
        assert stats[25][i] > stats[100][i] > stats[400][i]
