# tests/test_neass.py

import math
from fractions import Fraction

import numpy as np
import pytest

from hallab.exceptions import OrderError
from hallab.fock import total_number_op
from hallab.hofstadter import nearest_neighbour_density
from hallab.interactions import torus_sum
from hallab.neass import (
    _compositions,
    dress_state,
    log_slope,
    neass_generators,
    neass_probes,
    neass_scan,
    order_condition,
    order_terms,
    stationarity_residual,
)


# === Bookkeeping ===
def test_compositions():
    assert list(_compositions(4, 2)) == [(1, 3), (2, 2), (3, 1)]
    assert list(_compositions(0, 0)) == [()]
    assert list(_compositions(1, 0)) == []


def test_first_orders():
    assert order_terms(1) == [((), "D", Fraction(1))]
    assert order_terms(2) == [((1, 1), "H", Fraction(1, 2)), ((1,), "D", Fraction(1))]
    third = order_terms(3)
    assert len(third) == 5
    assert ((1, 1, 1), "H", Fraction(1, 6)) in third
    assert ((1, 1), "D", Fraction(1, 2)) in third


def test_log_slope():
    eps = np.array([0.01, 0.02, 0.04, 0.08])
    slope, r2 = log_slope(eps, 3.0 * eps ** 2)
    assert slope == pytest.approx(2.0)
    assert r2 == pytest.approx(1.0)
    assert all(math.isnan(x) for x in log_slope([0.0, 0.1], [1.0, 0.0]))


# === Generators ===
@pytest.mark.parametrize("m", [0, 5])
def test_order_outside_the_supported_range(interacting3, m):
    with pytest.raises(OrderError):
        neass_generators(interacting3.H, None, m, interacting3.kernel, interacting3.cache)


@pytest.fixture(scope="module")
def second_order(interacting3):
    V = nearest_neighbour_density(interacting3.H.lattice, interacting3.H.translation).scaled(0.3)
    return neass_generators(interacting3.H, V, 2, interacting3.kernel, interacting3.cache)


@pytest.mark.slow
def test_order_conditions_hold(second_order):
    for mu in (1, 2):
        assert order_condition(second_order, mu) <= 1e-8
    assert len(second_order.totals) == 2
    for K in second_order.totals:
        assert np.allclose(K, K.conj().T, atol=1e-10)


@pytest.mark.slow
def test_origin_terms_rebuild_the_generators(second_order):
    T = second_order.H.translation
    for K0, K in zip(second_order.origin_terms, second_order.totals):
        assert np.max(np.abs(torus_sum(T, K0).matrix - K)) <= 1e-10


@pytest.mark.slow
def test_dressing(interacting3, second_order):
    same = dress_state(interacting3.state, second_order, 0.0)
    assert same.state is interacting3.state
    dressed = dress_state(interacting3.state, second_order, 0.05)
    N = total_number_op(interacting3.H.lattice)
    assert np.linalg.norm(dressed.state.data) == pytest.approx(1.0)
    assert dressed.expect(N).real == pytest.approx(3.0, abs=1e-9)
    with pytest.raises(ValueError):
        dress_state(interacting3.state, second_order, 1.5)


@pytest.mark.slow
@pytest.mark.parametrize("m", [1, 2])
def test_stationarity_residual_scales_with_the_order(interacting3, rng, m):
    gens = neass_generators(interacting3.H, None, m, interacting3.kernel, interacting3.cache)
    probes = neass_probes(gens, 5, rng)
    eps = [0.02, 0.04, 0.08]
    residuals = [stationarity_residual(dress_state(interacting3.state, gens, e), probes) for e in eps]
    slope, r2 = log_slope(eps, residuals)
    assert slope > m + 0.5
    assert r2 > 0.95


@pytest.mark.slow
def test_scan_report(interacting3, second_order, rng):
    probes = neass_probes(second_order, 4, rng)
    report = neass_scan(interacting3.state, second_order, [0.0, 0.02, 0.04, 0.08], probes, workers=2)
    assert report.residuals[0] == pytest.approx(0.0, abs=1e-10)
    assert math.isnan(report.s_ratios[0])
    assert set(report.conditions) == {1, 2}
    summary = report.to_dict()
    assert summary["order"] == 2 and summary["profile"] == "poly"
    assert summary["order_conditions_passed"] is True
    assert [row["eps"] for row in report.rows()] == [0.0, 0.02, 0.04, 0.08]


@pytest.mark.slow
def test_generators_commute_with_the_magnetic_translations(second_order):
    T = second_order.H.translation
    for K in second_order.totals:
        for gamma in [(1, 0), (0, 1), (2, 1)]:
            assert np.max(np.abs(T.apply_matrix(gamma, K) - K)) <= 1e-10


@pytest.mark.slow
def test_scan_verdict_follows_the_tolerance(interacting3, second_order, rng):
    probes = neass_probes(second_order, 2, rng)
    strict = neass_scan(interacting3.state, second_order, [0.0, 0.02], probes, workers=1, tolerance=1e-300)
    assert strict.to_dict()["order_conditions_passed"] is False
    loose = neass_scan(interacting3.state, second_order, [0.0, 0.02], probes, workers=1, tolerance=1.0)
    assert loose.to_dict()["order_conditions_passed"] is True
