import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from htnet.errors import DimensionMismatch, NonPositiveRate, NonStochasticRow
from htnet.netmodel import (build_network, check_heavy_traffic, load_network, random_network,
                            save_network)


def test_single_station_load(single):
    np.testing.assert_array_equal(single.m, [1.0])
    assert single.eta_max == 1.0


def test_symmetric_load(symmetric):
    np.testing.assert_array_equal(symmetric.m, [0.5, 0.5])


def test_rejects_substochastic_row():
    with pytest.raises(NonStochasticRow) as exc:
        build_network(2, 2, [1, 1], [2, 2], [[0.5, 0.4], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]])
    assert exc.value.matrix == "P" and exc.value.row == 0
    assert exc.value.row_sum == pytest.approx(0.9)


def test_renormalize_flag_rescales_rows():
    p = build_network(1, 2, [1], [1, 1], [[0.45, 0.45]], [[1.0], [1.0]], renormalize=True)
    np.testing.assert_allclose(p.P, [[0.5, 0.5]])


def test_rejects_bad_shapes_and_rates():
    with pytest.raises(DimensionMismatch):
        build_network(2, 1, [1], [1], [[1]], [[1]])
    with pytest.raises(NonPositiveRate):
        build_network(1, 1, [0.0], [1], [[1]], [[1]])
    with pytest.raises(NonPositiveRate):
        build_network(1, 1, [1], [-1], [[1]], [[1]])
    with pytest.raises(NonStochasticRow):
        build_network(1, 2, [1], [1, 1], [[1.5, -0.5]], [[1], [1]])


def test_heavy_traffic_examples(single, symmetric):
    for p in (single, symmetric):
        rep = check_heavy_traffic(p, 1e-12)
        assert rep.passes
        assert np.all(rep.ht1_residuals == 0) and rep.ht2_residual == 0


def test_heavy_traffic_violation():
    p = build_network(2, 2, [1, 1], [2, 4], [[0.5, 0.5], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]])
    rep = check_heavy_traffic(p, 1e-9)
    assert rep.ht2_residual == pytest.approx(0.25, abs=1e-15)
    assert not rep.passes


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_load_is_homogeneous_in_eta(J, K, seed):
    p = random_network(J, K, np.random.default_rng(seed), critical=False)
    eta = p.eta * p.m.sum()
    p2 = build_network(J, K, p.mu, eta, p.P, p.Q)
    assert check_heavy_traffic(p2).ht2_residual <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_random_critical_instances_pass(J, K, seed):
    p = random_network(J, K, np.random.default_rng(seed))
    assert check_heavy_traffic(p, 1e-9).passes


def test_build_is_deterministic(random_critical):
    p = random_critical
    again = build_network(p.J, p.K, p.mu, p.eta, p.P, p.Q)
    assert again == p
    assert again.m.tobytes() == p.m.tobytes()


def test_params_are_read_only(single):
    with pytest.raises(ValueError):
        single.mu[0] = 2.0


def test_config_round_trip(tmp_path, random_critical):
    path = tmp_path / "net.json"
    save_network(random_critical, path)
    assert load_network(path) == random_critical
    assert set(json.loads(path.read_text())) == {"J", "K", "mu", "eta", "P", "Q"}
