# hallab/selftest.py

"""
In-process property suite behind `hallab selftest`.

Every check returns a measured deviation that is compared against its bound.
Values are rounded to 12 significant digits so that the same seed always
produces the same report.
"""

from __future__ import annotations

import hashlib
import json
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from hallab.fock import (
    TorusLattice,
    annihilator,
    conditional_expectation,
    decay_norm,
    operator_norm,
    particle_numbers,
    random_gauge_invariant,
    random_local_operator,
    tracial_expectation,
)
from hallab.hofstadter import gap_ratio, ground_state, spectral_cache
from hallab.interactions import MagneticTranslation
from hallab.matrix_cache import MatrixCache
from hallab.spectral_flow import FilterKernel, i_map, inverse_apply, time_quadrature_filter
from hallab.utils.log import get_logger
from hallab.utils.settings import DEFAULT_VALUES

logger = get_logger(__name__)

Check = Callable[[np.random.Generator], float]
_CHECKS: List[Tuple[str, str, Check]] = []


def check(name: str, tolerance: str):
    """Register a check; its deviation is compared against the named tolerance."""
    def register(fn: Check) -> Check:
        _CHECKS.append((name, tolerance, fn))
        return fn
    return register


def toy_hamiltonian(rng: np.random.Generator, n_modes: int = 4) -> np.ndarray:
    """dGamma(h) with a fixed one-body spectrum in a random basis plus a weak density term."""
    levels = np.array([-1.0, -0.6, 0.4, 0.9])[:n_modes]
    q, _ = np.linalg.qr(rng.normal(size=(n_modes, n_modes)) + 1j * rng.normal(size=(n_modes, n_modes)))
    h = q @ np.diag(levels) @ q.conj().T
    a = [annihilator(n_modes, i) for i in range(n_modes)]
    H = sum(h[x, y] * (a[x].getH() @ a[y]) for x in range(n_modes) for y in range(n_modes)).toarray()
    n0 = (a[0].getH() @ a[0]).toarray()
    n1 = (a[1].getH() @ a[1]).toarray()
    return H + 0.05 * n0 @ n1


# === Checks ===
@check("car_relations", "exact")
def _car(rng: np.random.Generator) -> float:
    n = 4
    a = [annihilator(n, i).toarray() for i in range(n)]
    one = np.eye(2 ** n)
    worst = 0.0
    for i in range(n):
        for j in range(n):
            anti = a[i] @ a[j].conj().T + a[j].conj().T @ a[i]
            worst = max(worst, np.max(np.abs(anti - (i == j) * one)))
            worst = max(worst, np.max(np.abs(a[i] @ a[j] + a[j] @ a[i])))
    return float(worst)


@check("conditional_expectation_bimodule", "exact")
def _ce(rng: np.random.Generator) -> float:
    lat = TorusLattice(2, 0.0)
    worst = 0.0
    for _ in range(5):
        B = random_local_operator(lat, rng, size=2, anchor=(0, 0))
        C = random_local_operator(lat, rng, size=2, anchor=(0, 0))
        A = random_gauge_invariant(4, rng)
        M = B.support | C.support
        lhs = conditional_expectation(M, B @ A @ C).matrix
        rhs = B.matrix @ conditional_expectation(M, A).matrix @ C.matrix
        worst = max(worst, np.max(np.abs(lhs - rhs)))
    return float(worst)


@check("conditional_expectation_contraction", "exact")
def _contraction(rng: np.random.Generator) -> float:
    worst = 0.0
    for _ in range(10):
        A = random_gauge_invariant(4, rng)
        M = frozenset(int(i) for i in rng.choice(4, size=2, replace=False))
        worst = max(worst, conditional_expectation(M, A).norm - A.norm)
    return max(float(worst), 0.0)


@check("norm_submultiplicativity", "exact")
def _submult(rng: np.random.Generator) -> float:
    worst = 0.0
    for _ in range(10):
        A = random_gauge_invariant(4, rng)
        B = random_gauge_invariant(4, rng) * 3.0
        worst = max(worst, (A @ B).norm - A.norm * B.norm)
    return max(float(worst), 0.0)


def _random_operator(lat: TorusLattice, rng: np.random.Generator):
    if rng.random() < 0.5:
        return random_gauge_invariant(lat.n_modes, rng)
    return random_local_operator(lat, rng, size=int(rng.integers(1, 3)))


@check("decay_norm_submultiplicativity", "exact")
def _decay_submult(rng: np.random.Generator) -> float:
    lat = TorusLattice(2, np.pi)
    worst = 0.0
    for _ in range(10):
        A, B = _random_operator(lat, rng), _random_operator(lat, rng)
        nu = int(rng.integers(0, 3))
        na, nb = decay_norm(A, nu, (0, 0), lat), decay_norm(B, nu, (0, 0), lat)
        worst = max(worst, decay_norm(A @ B, nu, (0, 0), lat) - 2.0 * na * nb)
        worst = max(worst, decay_norm(A.commutator(B), nu, (0, 0), lat) - 4.0 * na * nb)
    return max(float(worst), 0.0)


@check("commutator_decay", "exact")
def _commutator_decay(rng: np.random.Generator) -> float:
    """||[T_g A, B]||_nu <= 4^(nu+m+3) ||A||_(nu+m) ||B||_(nu+m) / (1 + |g|)^m on a 3 x 3 torus."""
    lat = TorusLattice(3, 2 * np.pi / 3)
    T = MagneticTranslation(lat)
    worst = 0.0
    for _ in range(50):
        A = random_local_operator(lat, rng, size=int(rng.integers(1, 3)), anchor=(0, 0))
        B = random_local_operator(lat, rng, size=int(rng.integers(1, 3)), anchor=(0, 0))
        gamma = (int(rng.integers(lat.L)), int(rng.integers(lat.L)))
        nu, m = int(rng.integers(0, 2)), int(rng.integers(0, 3))
        lhs = decay_norm(T.apply(gamma, A).commutator(B), nu, (0, 0), lat)
        rhs = (4.0 ** (nu + m + 3) * decay_norm(A, nu + m, (0, 0), lat) * decay_norm(B, nu + m, (0, 0), lat)
               / (1 + lat.distance(gamma, (0, 0))) ** m)
        worst = max(worst, lhs - rhs)
    return max(float(worst), 0.0)


@check("nested_conditional_expectations", "exact")
def _nested(rng: np.random.Generator) -> float:
    worst = 0.0
    for _ in range(10):
        A = random_gauge_invariant(4, rng)
        M1 = frozenset(int(i) for i in rng.choice(4, size=int(rng.integers(0, 4)), replace=False))
        M2 = frozenset(int(i) for i in rng.choice(4, size=int(rng.integers(0, 4)), replace=False))
        lhs = conditional_expectation(M1, conditional_expectation(M2, A)).matrix
        rhs = conditional_expectation(M1 & M2, A).matrix
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


@check("conditional_expectation_defining_property", "exact")
def _defining(rng: np.random.Generator) -> float:
    """omega_tr(A B) = omega_tr(E_M(A) B) for B supported in M."""
    lat = TorusLattice(2, np.pi)
    worst = 0.0
    for _ in range(20):
        A = random_gauge_invariant(4, rng)
        B = random_local_operator(lat, rng, size=int(rng.integers(1, 4)))
        EA = conditional_expectation(B.support, A)
        worst = max(worst, abs(tracial_expectation(A @ B) - tracial_expectation(EA @ B)))
    return float(worst)


@check("tracial_invariance", "exact")
def _tracial(rng: np.random.Generator) -> float:
    """Cyclicity of omega_tr and invariance under gauge and magnetic translation unitaries."""
    lat = TorusLattice(2, np.pi)
    T = MagneticTranslation(lat)
    worst = 0.0
    for _ in range(10):
        A, B = random_gauge_invariant(4, rng), random_gauge_invariant(4, rng)
        worst = max(worst, abs(tracial_expectation(A @ B) - tracial_expectation(B @ A)))
        phase = np.exp(1j * rng.uniform(0, 2 * np.pi) * particle_numbers(4))
        gauged = phase[:, None] * A.matrix * phase.conj()[None, :]
        worst = max(worst, abs(tracial_expectation(gauged) - tracial_expectation(A)))
        gamma = (int(rng.integers(2)), int(rng.integers(2)))
        worst = max(worst, abs(tracial_expectation(T.apply(gamma, A)) - tracial_expectation(A)))
    return float(worst)


@check("filter_weight_outside_gap", "identity")
def _weight(rng: np.random.Generator) -> float:
    kernel = FilterKernel(0.7)
    ks = rng.uniform(0.7, 8.0, size=20) * rng.choice([-1.0, 1.0], size=20)
    return float(np.max(np.abs(kernel.weight(ks) - 1j / ks)))


@check("spectral_vs_time_quadrature", "flow")
def _quadrature(rng: np.random.Generator) -> float:
    H = toy_hamiltonian(rng)
    cache = spectral_cache(H)
    kernel = FilterKernel(0.9 * cache.gap)
    A = random_gauge_invariant(4, rng)
    spectral = i_map(cache, A, kernel).matrix
    timed = time_quadrature_filter(cache, A, kernel).matrix
    return float(np.max(np.abs(spectral - timed)))


@check("off_diagonal_and_inverse_identities", "flow")
def _od(rng: np.random.Generator) -> float:
    H = toy_hamiltonian(rng)
    cache = spectral_cache(H)
    kernel = FilterKernel(0.9 * cache.gap)
    P = cache.ground_projector
    Q = np.eye(len(P)) - P
    worst = 0.0
    for _ in range(5):
        psi = random_gauge_invariant(4, rng, self_adjoint=True).matrix
        drive = 1j * (psi @ H - H @ psi)
        od = i_map(cache, drive, kernel).matrix
        worst = max(worst, operator_norm(P @ (od - psi) @ Q))
        inv = inverse_apply(cache, drive, kernel)
        worst = max(worst, float(np.max(np.abs(1j * (inv @ H - H @ inv) - od))))
    return worst


@check("gap_ratio_lower_bound", "identity")
def _gap(rng: np.random.Generator) -> float:
    H = toy_hamiltonian(rng)
    state, cache = ground_state(H)
    worst = 0.0
    for _ in range(50):
        A = random_gauge_invariant(4, rng).matrix
        r = gap_ratio(state, H, A)
        if r is not None:
            worst = max(worst, cache.gap - r)
    return max(float(worst), 0.0)


@check("cache_bypass_on_corruption", "identity")
def _cache(rng: np.random.Generator) -> float:
    H = toy_hamiltonian(rng)
    with tempfile.TemporaryDirectory() as tmp:
        mc = MatrixCache(Path(tmp))
        mc.eigh(H)
        for path in Path(tmp).glob("*.vecs"):
            path.write_bytes(b"HLB1garbage")
        vals, vecs = mc.eigh(H)
        if mc.misses != 2:
            return 1.0
    rebuilt = (vecs * vals[None, :]) @ vecs.conj().T
    return float(np.max(np.abs(rebuilt - H)))


# === Runner ===
def _round(x: float) -> float:
    return float(f"{x:.12g}")


def run_selftest(seed: int, tolerances: Optional[Dict[str, float]] = None) -> Dict[str, Any]:
    """
    Run every registered check with a per-check generator derived from `seed`.

    Args:
        seed (int): base seed.
        tolerances (Dict[str, float], optional): overrides of the configured tolerances.
    Returns:
        Dict[str, Any]: per-check values and bounds, overall verdict and a digest.
    """
    bounds = dict(DEFAULT_VALUES["tolerances"])
    bounds.update(tolerances or {})
    results = []
    for i, (name, key, fn) in enumerate(_CHECKS):
        bound = float(bounds[key])
        rng = np.random.default_rng([seed, i])
        try:
            value = fn(rng)
            passed = value <= bound
            entry = {"name": name, "tolerance": key, "value": _round(value), "bound": bound, "passed": bool(passed)}
        except Exception as e:  # a crashing check is a failed check
            entry = {"name": name, "tolerance": key, "value": None, "bound": bound, "passed": False, "error": str(e)}
            passed = False
        logger.info(f"{'✅' if passed else '❌'} {name}: {entry['value']}")
        results.append(entry)
    report = {"seed": seed, "checks": results, "passed": all(r["passed"] for r in results)}
    report["digest"] = hashlib.sha256(json.dumps(report, sort_keys=True).encode("utf-8")).hexdigest()
    return report
