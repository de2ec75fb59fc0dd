# tests/test_fock.py

import numpy as np
import pytest

from hallab.exceptions import FluxQuantizationError, GaugeError, LatticeSizeError, SiteError
from hallab.fock import (
    FockOperator,
    Sector,
    State,
    TorusLattice,
    annihilation_op,
    annihilator,
    conditional_expectation,
    creation_op,
    decay_norm,
    number_op,
    particle_numbers,
    random_gauge_invariant,
    random_local_operator,
    slater_state,
    total_number_op,
    tracial_expectation,
)
from hallab.interactions import MagneticTranslation


# === Lattice ===
def test_index_and_site_are_inverse():
    lat = TorusLattice(3, 0.0)
    for i in range(lat.n_modes):
        assert lat.index(lat.site(i)) == i
    assert lat.index((1, 2)) == 5


def test_site_outside_torus_raises():
    lat = TorusLattice(3, 0.0)
    with pytest.raises(SiteError):
        lat.index((3, 0))


def test_unquantized_flux_is_rejected():
    with pytest.raises(FluxQuantizationError):
        TorusLattice(3, 0.5)
    # open boundaries accept any flux
    assert TorusLattice(3, 0.5, magnetic_pbc=False).L == 3


def test_fock_cap():
    with pytest.raises(LatticeSizeError):
        TorusLattice(4, 0.0).require_fock()


def test_minimal_image_distance_and_boxes():
    lat = TorusLattice(4, 0.0)
    assert lat.distance((0, 0), (3, 0)) == 1
    assert lat.distance((0, 0), (2, 2)) == 2
    assert lat.box((0, 0), 0) == frozenset([0])
    assert len(lat.box((1, 1), 1)) == 9


# === Jordan-Wigner ===
def test_canonical_anticommutation_relations():
    n = 3
    a = [annihilator(n, i).toarray() for i in range(n)]
    one = np.eye(2 ** n)
    for i in range(n):
        for j in range(n):
            anti = a[i] @ a[j].conj().T + a[j].conj().T @ a[i]
            assert np.allclose(anti, (i == j) * one, atol=1e-12)
            assert np.allclose(a[i] @ a[j] + a[j] @ a[i], 0.0, atol=1e-12)


def test_sign_string_follows_mode_order():
    n = 3
    vac = np.zeros(2 ** n)
    vac[0] = 1.0
    c0 = annihilator(n, 0).getH()
    c1 = annihilator(n, 1).getH()
    assert (c0 @ (c1 @ vac))[0b110] == pytest.approx(1.0)
    assert (c1 @ (c0 @ vac))[0b110] == pytest.approx(-1.0)


def test_lattice_operators_agree():
    lat = TorusLattice(2, 0.0)
    n = creation_op(lat, (1, 0)) @ annihilation_op(lat, (1, 0))
    assert np.allclose(n.matrix, number_op(lat, (1, 0)).matrix)
    assert n.gauge_invariant and n.self_adjoint
    assert not annihilation_op(lat, (0, 0)).gauge_invariant


# === Conditional expectations ===
def test_conditional_expectation_bimodule(rng, lattice2):
    B = random_local_operator(lattice2, rng, size=2, anchor=(0, 0))
    C = random_local_operator(lattice2, rng, size=2, anchor=(0, 0))
    A = random_gauge_invariant(4, rng)
    M = B.support | C.support
    lhs = conditional_expectation(M, B @ A @ C).matrix
    rhs = B.matrix @ conditional_expectation(M, A).matrix @ C.matrix
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_conditional_expectation_edge_cases(rng, lattice2):
    A = random_gauge_invariant(4, rng)
    empty = conditional_expectation(frozenset(), A)
    assert np.allclose(empty.matrix, np.trace(A.matrix) / 16 * np.eye(16))
    assert conditional_expectation(range(4), A) is A
    assert conditional_expectation(frozenset([0]), A).norm <= A.norm + 1e-12
    with pytest.raises(GaugeError):
        conditional_expectation([0], annihilation_op(lattice2, (0, 0)))


def test_conditional_expectation_keeps_number_operator():
    lat = TorusLattice(2, 0.0)
    n0 = number_op(lat, (0, 0))
    N = total_number_op(lat)
    reduced = conditional_expectation([0], N)
    assert np.allclose(reduced.matrix, n0.matrix + 1.5 * np.eye(16))


def test_nested_conditional_expectations(rng):
    A = random_gauge_invariant(4, rng)
    for M1, M2 in [({0, 1}, {1, 2}), ({0, 1, 2}, {0, 2, 3}), ({3}, {0, 1}), (set(), {1})]:
        lhs = conditional_expectation(M1, conditional_expectation(M2, A)).matrix
        assert np.allclose(lhs, conditional_expectation(set(M1) & set(M2), A).matrix, atol=1e-12)


def test_conditional_expectation_defining_property(rng, lattice2):
    A = random_gauge_invariant(4, rng)
    for size in (1, 2, 3):
        B = random_local_operator(lattice2, rng, size=size)
        EA = conditional_expectation(B.support, A)
        assert tracial_expectation(A @ B) == pytest.approx(tracial_expectation(EA @ B), abs=1e-12)


def test_hopping_has_no_weight_on_a_single_site():
    lat = TorusLattice(2, 0.0)
    hop = creation_op(lat, (0, 0)) @ annihilation_op(lat, (0, 1))
    assert np.allclose(conditional_expectation([lat.index((0, 0))], hop).matrix, 0.0)


# === Tracial state ===
def test_tracial_expectation_values():
    lat = TorusLattice(2, 0.0)
    assert tracial_expectation(FockOperator.identity(4)) == pytest.approx(1.0)
    assert tracial_expectation(number_op(lat, (1, 0))) == pytest.approx(0.5)
    hop = creation_op(lat, (0, 0)) @ annihilation_op(lat, (1, 1))
    assert tracial_expectation(hop) == pytest.approx(0.0)


def test_tracial_state_is_invariant(rng):
    lat = TorusLattice(2, np.pi)
    T = MagneticTranslation(lat)
    A, B = random_gauge_invariant(4, rng), random_gauge_invariant(4, rng)
    assert tracial_expectation(A @ B) == pytest.approx(tracial_expectation(B @ A), abs=1e-12)
    phase = np.exp(0.7j * particle_numbers(4))
    gauged = phase[:, None] * A.matrix * phase.conj()[None, :]
    assert tracial_expectation(gauged) == pytest.approx(tracial_expectation(A), abs=1e-12)
    for gamma in lat.shifts():
        assert tracial_expectation(T.apply(gamma, A)) == pytest.approx(tracial_expectation(A), abs=1e-12)


# === Decay norms ===
def test_decay_norm_is_submultiplicative(rng, lattice2):
    for _ in range(10):
        A = random_local_operator(lattice2, rng, size=2)
        B = random_gauge_invariant(4, rng)
        for nu in (0, 1, 2):
            na, nb = decay_norm(A, nu, (0, 0), lattice2), decay_norm(B, nu, (0, 0), lattice2)
            assert decay_norm(A @ B, nu, (0, 0), lattice2) <= 2 * na * nb
            assert decay_norm(A.commutator(B), nu, (0, 0), lattice2) <= 4 * na * nb


def test_decay_norm_of_a_bond_follows_the_definition():
    lat = TorusLattice(3, 0.0)
    hop = creation_op(lat, (0, 0)) @ annihilation_op(lat, (1, 1))
    hop = hop + hop.dagger()
    tails = []
    for k in range(lat.max_radius + 1):
        box = lat.box((0, 0), k)
        if hop.support <= box:
            break
        tails.append((1 + k) * np.linalg.norm(hop.matrix - conditional_expectation(box, hop).matrix, 2))
    assert decay_norm(hop, 1, (0, 0), lat) == pytest.approx(hop.norm + max(tails))
    assert len(tails) == 1


@pytest.mark.slow
def test_commutators_decay_with_the_translation(rng, lattice3):
    T = MagneticTranslation(lattice3)
    for _ in range(50):
        A = random_local_operator(lattice3, rng, size=int(rng.integers(1, 3)), anchor=(0, 0))
        B = random_local_operator(lattice3, rng, size=int(rng.integers(1, 3)), anchor=(0, 0))
        gamma = (int(rng.integers(3)), int(rng.integers(3)))
        nu, m = int(rng.integers(0, 2)), int(rng.integers(0, 3))
        lhs = decay_norm(T.apply(gamma, A).commutator(B), nu, (0, 0), lattice3)
        rhs = (4.0 ** (nu + m + 3) * decay_norm(A, nu + m, (0, 0), lattice3)
               * decay_norm(B, nu + m, (0, 0), lattice3) / (1 + lattice3.distance(gamma, (0, 0))) ** m)
        assert lhs <= rhs


def test_decay_norm(rng):
    lat = TorusLattice(3, 0.0)
    local = number_op(lat, (1, 1))
    assert decay_norm(local, 5, (1, 1), lat) == pytest.approx(1.0)
    spread = random_local_operator(lat, rng, size=2, anchor=(1, 1))
    assert decay_norm(spread, 5, (1, 1), lat) >= spread.norm


def test_random_local_operator(rng):
    lat = TorusLattice(3, 0.0)
    A = random_local_operator(lat, rng, size=3, self_adjoint=True)
    assert len(A.support) == 3
    assert A.norm == pytest.approx(1.0)
    assert A.gauge_invariant and A.self_adjoint


# === Sectors and states ===
def test_sector_restriction():
    lat = TorusLattice(2, 0.0)
    sector = Sector(4, 2)
    assert sector.dim == 6
    assert set(sector.bitstrings()) == {"1100", "1010", "1001", "0110", "0101", "0011"}
    assert np.allclose(sector.restrict(total_number_op(lat)), 2 * np.eye(6))
    v = sector.embed(np.ones(6) / np.sqrt(6))
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_state_validation():
    with pytest.raises(ValueError):
        State.vector(np.ones(4))
    with pytest.raises(ValueError):
        State.quasi_free(2 * np.eye(2))
    with pytest.raises(ValueError):
        State("thermal", np.eye(2))


def test_vacuum_and_projector_states():
    lat = TorusLattice(2, 0.0)
    N = total_number_op(lat)
    assert State.vacuum(4).expect(N) == pytest.approx(0.0)
    assert State.projector(np.eye(16)).expect(N) == pytest.approx(2.0)


def test_slater_and_quasi_free_agree(rng):
    lat = TorusLattice(2, 0.0)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    P = q[:, :2] @ q[:, :2].conj().T
    pure = slater_state(lat, P)
    mixed = State.quasi_free(P)
    assert np.allclose(pure.two_point(), P, atol=1e-12)
    assert np.allclose(mixed.density_matrix, pure.density_matrix, atol=1e-12)
    assert mixed.expect(total_number_op(lat)) == pytest.approx(2.0)


def test_fock_operator_algebra(rng):
    A = random_gauge_invariant(3, rng)
    B = random_gauge_invariant(3, rng)
    assert np.allclose(A.commutator(B).matrix, (A @ B - B @ A).matrix)
    assert np.allclose((2.0 * A).matrix, (A + A).matrix)
    assert FockOperator.identity(3).norm == pytest.approx(1.0)
    assert FockOperator.zero(3).norm == 0.0
    assert (A @ B).norm <= A.norm * B.norm + 1e-12
