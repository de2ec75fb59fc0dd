# tests/test_response.py

import math

import numpy as np
import pytest

from hallab.exceptions import SegmentError
from hallab.fock import State
from hallab.hofstadter import (
    fermi_projection,
    ground_state,
    many_body_hamiltonian,
    mu_in_gap,
    nearest_neighbour_density,
    one_body_chern,
    one_body_hamiltonian,
)
from hallab.interactions import number_interaction
from hallab.neass import neass_generators
from hallab.response import (
    CSReport,
    ResponseReport,
    chern_simons_check,
    conductance_stats,
    current_interaction,
    exponential_fit,
    hall_conductivity,
    hall_fit,
    longitudinal_fit,
    profile_spread,
    random_periodic_generator,
    response_scan,
)
from hallab.spectral_flow import FilterKernel


# === Fits ===
def test_exponential_fit_recovers_the_rate():
    d = np.arange(1, 6)
    rate, r2 = exponential_fit(np.exp(-0.7 * d) * (-1.0) ** d)
    assert rate == pytest.approx(0.7)
    assert r2 == pytest.approx(1.0)
    assert all(math.isnan(x) for x in exponential_fit([0.0, 0.0, 0.0]))


def test_hall_fit_reads_the_linear_coefficient():
    eps = np.array([0.0, 0.01, 0.02, 0.04, 0.08])
    slope, intercept, residual = hall_fit(eps, 0.3 * eps + 2.0 * eps ** 2)
    assert slope == pytest.approx(0.3)
    assert intercept == pytest.approx(0.0, abs=1e-12)
    assert residual == pytest.approx(0.0, abs=1e-12)
    assert all(math.isnan(x) for x in hall_fit([0.01, 0.02], [1.0, 2.0]))


def test_longitudinal_noise_is_reported_as_vanishing():
    eps = [0.0, 0.01, 0.02, 0.04]
    slope, r2, bound = longitudinal_fit(eps, [0.0, 3e-13, -8e-14, 5e-11])
    assert math.isnan(slope) and math.isnan(r2)
    assert bound == pytest.approx(5e-11)
    slope, r2, bound = longitudinal_fit(eps, [0.0, 1e-6, 8e-6, 6.4e-5])
    assert bound is None
    assert slope == pytest.approx(3.0)
    assert r2 == pytest.approx(1.0)
    assert longitudinal_fit(eps, [0.0, 1e-6, 8e-6, 6.4e-5], noise_floor=1e-4)[2] == pytest.approx(6.4e-5)


def test_report_flags_a_vanishing_longitudinal_current():
    common = dict(eps=[0.0, 0.01], j1=[0.0, 1e-12], j2=[0.0, 0.001], sigma=0.1, hall_slope=0.1,
                  hall_intercept=0.0, hall_residual=0.0, longitudinal_slope=math.nan, longitudinal_r2=math.nan)
    quiet = ResponseReport(**common, longitudinal_bound=1e-12)
    assert quiet.longitudinal_vanishes
    assert quiet.to_dict()["longitudinal_bound"] == 1e-12
    assert not ResponseReport(**common).longitudinal_vanishes


# === Hall conductivity ===
@pytest.mark.slow
def test_no_flux_no_hall_conductivity():
    H, Hm = many_body_hamiltonian(0.0, -0.5, 0.0, 3)
    state, cache = ground_state(Hm)
    assert cache.degeneracy == 1
    sigma = hall_conductivity(state, H, cache, FilterKernel(0.9 * cache.gap))
    assert sigma == pytest.approx(0.0, abs=1e-10)


@pytest.mark.slow
def test_free_fermions_reproduce_the_one_body_value(free3):
    sigma = hall_conductivity(free3.state, free3.H, free3.cache, free3.kernel)
    P = fermi_projection(free3.model)
    assert sigma == pytest.approx(one_body_chern(P, model=free3.model, position="spectral"), abs=1e-8)


@pytest.mark.slow
def test_conductivity_is_antisymmetric(interacting3):
    args = (interacting3.state, interacting3.H, interacting3.cache, interacting3.kernel)
    assert hall_conductivity(*args, directions=(2, 1)) == pytest.approx(-hall_conductivity(*args), abs=1e-9)


@pytest.mark.slow
def test_inside_gap_profile_does_not_matter(interacting3):
    spread = profile_spread(interacting3.state, interacting3.H, interacting3.cache, interacting3.kernel)
    assert spread["spread"] <= 1e-8
    assert spread["passed"] is True
    assert spread["poly"] == pytest.approx(spread["quintic"], abs=1e-8)


@pytest.mark.slow
def test_sigma_is_continuous_in_the_coupling(free3, interacting3):
    free = hall_conductivity(free3.state, free3.H, free3.cache, free3.kernel)
    coupled = hall_conductivity(interacting3.state, interacting3.H, interacting3.cache, interacting3.kernel)
    assert abs(coupled - free) / abs(free) <= 0.1


# === Chern-Simons check ===
@pytest.mark.slow
def test_chern_simons_check(interacting3, rng):
    G = random_periodic_generator(interacting3.H, rng)
    assert G.is_periodic()
    assert G.total.self_adjoint
    args = (interacting3.state, interacting3.H, interacting3.cache, interacting3.kernel, G)
    still = chern_simons_check(*args, 0.0)
    assert still.delta == 0.0 and still.before == still.after
    moved = chern_simons_check(*args, 0.1)
    assert moved.before == pytest.approx(still.before)
    assert moved.delta == pytest.approx(abs(moved.after - moved.before))
    assert moved.delta <= 1e-6
    assert moved.passed
    assert set(moved.to_dict()) == {"sigma_before", "sigma_after", "delta", "strength", "passed",
                                    "literal_sigma_after", "position_shift_defect"}


@pytest.mark.slow
def test_number_operator_leaves_sigma_unchanged(interacting3):
    N = number_interaction(interacting3.H.lattice, interacting3.H.translation)
    report = chern_simons_check(interacting3.state, interacting3.H, interacting3.cache, interacting3.kernel, N, 0.1)
    assert report.delta <= 1e-10
    assert report.position_shift_defect <= 1e-10


def test_chern_simons_verdict_follows_the_tolerance():
    report = CSReport(0.1, 0.1 + 2e-6, 2e-6, 0.1, 0.1 + 3e-6)
    assert not report.passed
    assert report.position_shift_defect == pytest.approx(3e-6)
    assert CSReport(0.1, 0.1 + 2e-6, 2e-6, 0.1, 0.1, tolerance=1e-5).passed


# === Currents and response scan ===
def test_current_interaction_terms(free3):
    J = current_interaction(free3.H, None, 0.0, 2)
    assert J.name == "J2"
    # only vertical bonds carry a current in direction 2
    assert len(J) == 9
    for t in J.terms:
        assert t.operator.self_adjoint


@pytest.mark.slow
def test_ground_state_carries_no_current(free3):
    gens = neass_generators(free3.H, None, 1, free3.kernel, free3.cache)
    report = response_scan(free3.state, gens, [0.0, 0.02, 0.04], sigma=0.1, workers=2)
    assert report.j1[0] == pytest.approx(0.0, abs=1e-10)
    assert report.j2[0] == pytest.approx(0.0, abs=1e-10)
    assert len(report.rows()) == 3
    assert "hall_slope" in report.to_dict()


@pytest.mark.slow
@pytest.mark.parametrize("perturbed", [False, True])
def test_hall_slope_matches_sigma(interacting3, perturbed):
    V = None
    if perturbed:
        V = nearest_neighbour_density(interacting3.H.lattice, interacting3.H.translation).scaled(0.3)
    gens = neass_generators(interacting3.H, V, 2, interacting3.kernel, interacting3.cache)
    sigma = hall_conductivity(interacting3.state, interacting3.H, interacting3.cache, interacting3.kernel)
    report = response_scan(interacting3.state, gens, [0.0, 0.005, 0.01, 0.02, 0.04], sigma, workers=2)
    assert abs(report.j1[0]) <= 1e-10
    assert abs(report.j2[0]) <= 1e-10
    assert report.hall_slope == pytest.approx(sigma, rel=2e-2)
    assert report.to_dict()["hall_relative_deviation"] <= 2e-2


# === Conductance statistics ===
def test_segment_checks(free3):
    J = current_interaction(free3.H, None, 0.0, 2)
    with pytest.raises(SegmentError):
        conductance_stats(free3.state, 0.01, 4, current=J)
    with pytest.raises(ValueError):
        conductance_stats(free3.state, 0.0, 2, current=J)
    with pytest.raises(ValueError):
        conductance_stats(free3.state, 0.01, 2)
    with pytest.raises(ValueError):
        conductance_stats(State.quasi_free(np.zeros((9, 9))), 0.01, 2)


def test_empty_torus_carries_nothing(free3):
    J = current_interaction(free3.H, None, 0.0, 2)
    stats = conductance_stats(State.vacuum(9), 0.01, 2, current=J, sigma=0.0)
    assert stats.mean == pytest.approx(0.0)
    assert stats.variance == pytest.approx(0.0)
    assert stats.deviation == pytest.approx(0.0)


def test_wick_and_exact_statistics_agree(free3):
    J = current_interaction(free3.H, None, 0.0, 2)
    P = fermi_projection(free3.model)
    exact = conductance_stats(free3.state, 0.05, 2, current=J)
    wick = conductance_stats(State.quasi_free(P), 0.05, 2, model=free3.model)
    assert wick.mean == pytest.approx(exact.mean, abs=1e-10)
    assert wick.variance == pytest.approx(exact.variance, abs=1e-9)
    assert np.allclose(wick.correlations, exact.correlations, atol=1e-10)
    assert wick.scaled_variance == pytest.approx(wick.variance * 0.05 ** 2 * 2)


def test_wick_path_on_a_large_torus():
    b = 2 * math.pi / 3
    model = one_body_hamiltonian(b, 24, mu_in_gap(b, 24))
    stats = conductance_stats(State.quasi_free(fermi_projection(model)), 0.01, 8, model=model)
    assert len(stats.correlations) == 12
    assert stats.variance > 0
    assert stats.decay_rate > 0
    assert set(stats.to_dict()) >= {"L", "eps", "mean", "variance", "scaled_variance", "decay_rate"}


@pytest.mark.slow
def test_conductance_variance_scales_on_a_large_torus():
    b = 2 * math.pi / 3
    model = one_body_hamiltonian(b, 48, mu_in_gap(b, 48))
    state = State.quasi_free(fermi_projection(model))
    stats = [conductance_stats(state, 0.01, seg, model=model) for seg in (8, 16, 32)]
    scaled = [s.scaled_variance for s in stats]
    assert max(scaled) / min(scaled) <= 2.0
    assert all(s.decay_r2 >= 0.95 for s in stats)
