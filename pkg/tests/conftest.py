# tests/conftest.py

import math
from types import SimpleNamespace

import numpy as np
import pytest

from hallab.fock import TorusLattice
from hallab.hofstadter import ground_state, many_body_hamiltonian, mu_in_gap, one_body_hamiltonian, spectral_cache
from hallab.selftest import toy_hamiltonian
from hallab.spectral_flow import FilterKernel

B3 = 2 * math.pi / 3


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def lattice2():
    return TorusLattice(2, 0.0)


@pytest.fixture(scope="session")
def lattice3():
    return TorusLattice(3, B3)


@pytest.fixture
def toy(rng):
    """Four-mode Hamiltonian with a one-body gap of 0.4 and its filter."""
    H = toy_hamiltonian(rng)
    cache = spectral_cache(H)
    return SimpleNamespace(H=H, cache=cache, kernel=FilterKernel(0.9 * cache.gap))


def _torus_setup(lam: float) -> SimpleNamespace:
    mu = mu_in_gap(B3, 3)
    H, Hm = many_body_hamiltonian(B3, mu, lam, 3)
    state, cache = ground_state(Hm)
    return SimpleNamespace(
        lam=lam, mu=mu, H=H, Hm=Hm.matrix, state=state, cache=cache,
        kernel=FilterKernel(0.9 * cache.gap), model=one_body_hamiltonian(B3, 3, mu),
    )


@pytest.fixture(scope="session")
def free3():
    """Flux 1/3 on the 3x3 torus, lowest band filled, no interaction."""
    return _torus_setup(0.0)


@pytest.fixture(scope="session")
def interacting3():
    return _torus_setup(0.05)
