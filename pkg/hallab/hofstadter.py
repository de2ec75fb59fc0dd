# hallab/hofstadter.py

"""
The Hofstadter model on the torus.

One-body part: the discrete Landau operator in Landau gauge, its Fermi
projection and three Chern oracles (double commutator, Kubo sum, plaquette
Berry phases over boundary twists). Many-body part: the weakly interacting
Hamiltonian as an Interaction, ground states with a certified gap and the
gap certificate over random local probes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from hallab.exceptions import FluxQuantizationError, SpectrumError
from hallab.fock import (
    FockOperator,
    Site,
    State,
    TorusLattice,
    number_op,
    hopping_op,
    random_local_operator,
)
from hallab.interactions import Interaction, MagneticTranslation, Term, interaction_from_records
from hallab.matrix_cache import MatrixCache, cached_eigh, reconstruction_residual
from hallab.utils.log import get_logger
from hallab.utils.settings import TOL_DEGENERACY, TOL_EXACT, TOL_FERMI, TOL_GAP_SLACK, TOL_IDENTITY, TOL_VARIANCE

logger = get_logger(__name__)

_UNIT = {1: (1, 0), 2: (0, 1)}


# === One-body model ===
def hopping_matrix(lat: TorusLattice) -> np.ndarray:
    """
    Discrete Landau operator: h(x, y) = 1 on vertical bonds and
    exp(i b x_2 (x_1 - y_1)) on horizontal bonds, magnetic periodic boundaries.
    """
    n = lat.n_modes
    h = np.zeros((n, n), dtype=complex)
    for x in lat.sites():
        i = lat.index(x)
        for axis in (0, 1):
            if not lat.magnetic_pbc and x[axis] == lat.L - 1:
                continue
            step = (1, 0) if axis == 0 else (0, 1)
            k = lat.index(lat.shift(x, step))
            t = np.exp(1j * lat.b * x[1]) if axis == 0 else 1.0
            h[k, i] += t
            h[i, k] += np.conj(t)
    return h


@dataclass(frozen=True, eq=False)
class OneBodyModel:
    lattice: TorusLattice
    mu: float
    h: np.ndarray

    @property
    def b(self) -> float:
        return self.lattice.b

    @property
    def L(self) -> int:
        return self.lattice.L

    @cached_property
    def eigh(self) -> Tuple[np.ndarray, np.ndarray]:
        return linalg.eigh(self.h)

    @property
    def spectrum(self) -> np.ndarray:
        return self.eigh[0]

    @property
    def gap(self) -> float:
        """dist(mu, spectrum(h))."""
        return float(np.min(np.abs(self.spectrum - self.mu)))

    @property
    def filling(self) -> int:
        return int(np.sum(self.spectrum < self.mu))

    def with_mu(self, mu: float) -> "OneBodyModel":
        return OneBodyModel(self.lattice, float(mu), self.h)


def one_body_hamiltonian(b: float, L: int, mu: float = 0.0, magnetic_pbc: bool = True) -> OneBodyModel:
    """
    Args:
        b (float): flux per plaquette; b * L must lie in 2 pi Z.
        L (int): side length.
        mu (float): chemical potential carried along with the model.
    Returns:
        OneBodyModel
    """
    lat = TorusLattice(L, b, magnetic_pbc)
    return OneBodyModel(lat, float(mu), hopping_matrix(lat))


def flux_fraction(b: float, L: int) -> Fraction:
    """b / 2 pi as a fraction with denominator dividing L."""
    frac = Fraction(b / (2 * math.pi)).limit_denominator(max(L, 1))
    if abs(float(frac) * 2 * math.pi - b) > 1e-9:
        raise FluxQuantizationError(f"b={b} is not a multiple of 2 pi / {L}", {"b": b, "L": L})
    return frac


def band_edges(model: OneBodyModel, tol: float = 1e-6) -> List[Tuple[float, float]]:
    """(lower, upper) edges of every spectral gap wider than tol."""
    e = model.spectrum
    return [(float(e[i]), float(e[i + 1])) for i in range(len(e) - 1) if e[i + 1] - e[i] > tol]


def mu_in_gap(b: float, L: int, band: int = 1) -> float:
    """Middle of the gap above the lowest `band` magnetic bands (band size L^2 / q)."""
    q = flux_fraction(b, L).denominator
    model = one_body_hamiltonian(b, L)
    n = band * L * L // q
    e = model.spectrum
    if n >= len(e):
        return float(e[-1] + 1.0)
    return 0.5 * float(e[n - 1] + e[n])


def fermi_projection(model: OneBodyModel) -> np.ndarray:
    """Spectral projector of h onto eigenvalues below mu."""
    if model.gap <= TOL_FERMI:
        raise SpectrumError(
            f"mu={model.mu} lies in the spectrum (distance {model.gap:.2e})",
            {"mu": model.mu, "spectrum_excerpt": _excerpt(model.spectrum, model.mu)},
        )
    e, v = model.eigh
    occ = v[:, e < model.mu]
    return occ @ occ.conj().T


def _excerpt(values: np.ndarray, mu: float, width: int = 3) -> List[float]:
    i = int(np.searchsorted(values, mu))
    return [float(x) for x in values[max(0, i - width): i + width]]


# === Position data ===
def _coordinate_differences(lat: TorusLattice, j: int) -> np.ndarray:
    """(x_j - y_j) minimal image for all pairs of sites."""
    c = np.array([s[j - 1] for s in lat.sites()])
    d = (c[:, None] - c[None, :]) % lat.L
    return np.where(d > lat.L // 2, d - lat.L, d)


def _windings(lat: TorusLattice, j: int) -> np.ndarray:
    """Number of times the minimal-image path from y to x crosses the boundary in direction j."""
    c = np.array([s[j - 1] for s in lat.sites()])
    raw = c[:, None] - c[None, :]
    return (raw - _coordinate_differences(lat, j)) // lat.L


def position_derivative(model: OneBodyModel, j: int) -> np.ndarray:
    """D_j(h)(x, y) = (x_j - y_j) h(x, y) (minimal image)."""
    return _coordinate_differences(model.lattice, j) * model.h


def kernel_position_commutator(lat: TorusLattice, P: np.ndarray, j: int) -> np.ndarray:
    """[x_j, P](x, y) = (x_j - y_j) P(x, y) with minimal-image coordinates."""
    return _coordinate_differences(lat, j) * P


def spectral_position(model: OneBodyModel, j: int) -> np.ndarray:
    """
    Position x_j in the eigenbasis of h, fixed on cross-energy entries by
    [x_j, h] = D_j(h); entries between degenerate levels are set to zero.
    """
    e, v = model.eigh
    d = v.conj().T @ position_derivative(model, j) @ v
    gaps = e[None, :] - e[:, None]
    mask = np.abs(gaps) > 1e-9
    out = np.zeros_like(d)
    out[mask] = d[mask] / gaps[mask]
    return out


def spectral_position_commutator(model: OneBodyModel, P: np.ndarray, j: int) -> np.ndarray:
    """[x_j, P] for a spectral projector P of h, returned in the site basis."""
    e, v = model.eigh
    p = v.conj().T @ P @ v
    off = p - np.diag(np.diag(p))
    if np.max(np.abs(off), initial=0.0) > 1e-8:
        raise SpectrumError("projector is not diagonal in the eigenbasis of h")
    x = spectral_position(model, j)
    c = x @ p - p @ x
    return v @ c @ v.conj().T


# === Chern oracles ===
def one_body_chern(P: np.ndarray, method: str = "double_commutator", model: Optional[OneBodyModel] = None,
                   position: str = "kernel", twists: int = 4) -> float:
    """
    Hall conductivity of a one-body projector.

    Args:
        P (ndarray): Fermi projection on the torus of `model`.
        method (str): "double_commutator" for (1/L^2) Tr(i P [[x_1, P], [x_2, P]]),
            "kspace" for (Chern number) / 2 pi from plaquette Berry phases.
        model (OneBodyModel): supplies the geometry and h.
        position (str): "kernel" (minimal-image kernel with the winding correction,
            averaged over boundary twists) or "spectral" (x fixed on the torus by
            [x, h] = D(h); this is the convention of the many-body pipeline).
        twists (int): twist grid size for the "kernel" convention.
    Returns:
        float
    """
    if model is None:
        raise ValueError("one_body_chern needs the model for the torus geometry")
    lat = model.lattice
    if method == "kspace":
        rank = int(round(np.real(np.trace(P))))
        if rank != model.filling:
            raise SpectrumError(f"projector rank {rank} differs from the filling {model.filling} of the model")
        return kspace_chern_number(model) / (2 * math.pi)
    if method != "double_commutator":
        raise ValueError(f"unknown method {method!r}")
    if position == "kernel":
        if np.max(np.abs(P - fermi_projection(model)), initial=0.0) > 1e-8:
            raise SpectrumError("projector is not the Fermi projection of the model")
        return twist_averaged_chern(model, twists)
    if position != "spectral":
        raise ValueError(f"unknown position convention {position!r}")
    c1 = spectral_position_commutator(model, P, 1)
    c2 = spectral_position_commutator(model, P, 2)
    value = np.trace(1j * P @ (c1 @ c2 - c2 @ c1)) / lat.n_modes
    if abs(value.imag) > TOL_IDENTITY:
        logger.warning(f"⚠️ double commutator has imaginary residue {value.imag:.2e}")
    return float(value.real)


def kubo_chern(model: OneBodyModel) -> float:
    """(i/L^2) sum_{m occ, n unocc} (D1_mn D2_nm - D2_mn D1_nm) / (E_m - E_n)^2."""
    e, v = model.eigh
    occ = e < model.mu
    d1 = v.conj().T @ position_derivative(model, 1) @ v
    d2 = v.conj().T @ position_derivative(model, 2) @ v
    a1, a2 = d1[np.ix_(occ, ~occ)], d2[np.ix_(occ, ~occ)]
    b1, b2 = d1[np.ix_(~occ, occ)], d2[np.ix_(~occ, occ)]
    denom = (e[occ][:, None] - e[~occ][None, :]) ** 2
    total = np.sum((a1 * b2.T - a2 * b1.T) / denom)
    return float(np.real(1j * total) / model.lattice.n_modes)


def local_chern_marker(model: OneBodyModel, P: Optional[np.ndarray] = None) -> np.ndarray:
    """Site-resolved 2 pi (i P [[x_1, P], [x_2, P]])_{xx}; its mean is the Chern number."""
    P = fermi_projection(model) if P is None else P
    c1 = spectral_position_commutator(model, P, 1)
    c2 = spectral_position_commutator(model, P, 2)
    marker = np.real(np.diag(1j * P @ (c1 @ c2 - c2 @ c1)))
    return 2 * math.pi * marker.reshape(model.L, model.L)


def twisted_hamiltonian(model: OneBodyModel, theta: Sequence[float]) -> np.ndarray:
    """h with boundary twists: bonds crossing the boundary in direction j pick up exp(-+ i theta_j)."""
    lat = model.lattice
    phase = theta[0] * _windings(lat, 1) + theta[1] * _windings(lat, 2)
    return model.h * np.exp(1j * phase)


def twisted_projection(model: OneBodyModel, theta: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Fermi projection of the twisted Hamiltonian and its two twist derivatives.

    Args:
        model (OneBodyModel): untwisted model; its filling fixes the rank.
        theta (Sequence[float]): boundary twists (theta_1, theta_2).
    Returns:
        Tuple[ndarray, ndarray, ndarray]: P_theta, dP/dtheta_1, dP/dtheta_2
    """
    lat = model.lattice
    h = twisted_hamiltonian(model, theta)
    e, v = linalg.eigh(h)
    n_occ = model.filling
    if np.sum(e < model.mu) != n_occ:
        raise SpectrumError(f"gap closes under the boundary twist {tuple(theta)}",
                            {"mu": model.mu, "spectrum_excerpt": _excerpt(e, model.mu)})
    occ, un = v[:, :n_occ], v[:, n_occ:]
    P = occ @ occ.conj().T
    # first order: dP = sum_{m occ, n unocc} |n><n|dh|m><m| / (E_m - E_n) + h.c.
    denom = e[None, :n_occ] - e[n_occ:, None]
    derivatives = []
    for j in (1, 2):
        dh = 1j * _windings(lat, j) * h
        block = (un.conj().T @ dh @ occ) / denom
        dP = un @ block @ occ.conj().T
        derivatives.append(dP + dP.conj().T)
    return P, derivatives[0], derivatives[1]


def twist_averaged_chern(model: OneBodyModel, twists: int = 4) -> float:
    """
    (1/L^2) Tr(i P [[x_1, P], [x_2, P]]) for the infinite-lattice projection,
    assembled from its twisted torus fibres.

    On each fibre the position commutator is the minimal-image kernel plus the
    winding correction L (w_j P_theta + i dP_theta/dtheta_j); averaging over a
    twists x twists grid leaves an aliasing error that decays exponentially in
    twists * L.

    Args:
        model (OneBodyModel): gapped model at its Fermi level.
        twists (int): grid points per twist direction.
    Returns:
        float
    """
    if twists < 1:
        raise ValueError(f"twists must be positive, got {twists}")
    lat = model.lattice
    w = [_windings(lat, j) for j in (1, 2)]
    grid = 2 * math.pi * np.arange(twists) / twists
    total = 0.0 + 0.0j
    for t1 in grid:
        for t2 in grid:
            P, dP1, dP2 = twisted_projection(model, (t1, t2))
            a1 = kernel_position_commutator(lat, P, 1) + lat.L * (w[0] * P + 1j * dP1)
            a2 = kernel_position_commutator(lat, P, 2) + lat.L * (w[1] * P + 1j * dP2)
            total += np.trace(1j * P @ (a1 @ a2 - a2 @ a1))
    value = total / (twists ** 2 * lat.n_modes)
    if abs(value.imag) > TOL_IDENTITY:
        logger.warning(f"⚠️ twist-averaged double commutator has imaginary residue {value.imag:.2e}")
    return float(value.real)


def _occupied_frame(model: OneBodyModel, theta: Sequence[float], n_occ: int) -> np.ndarray:
    e, v = linalg.eigh(twisted_hamiltonian(model, theta))
    if np.sum(e < model.mu) != n_occ:
        raise SpectrumError(f"gap closes under the boundary twist {tuple(theta)}")
    return v[:, :n_occ]


def fhs_chern(model: OneBodyModel, n: int) -> float:
    """Plaquette Berry-phase sum on an n x n grid of boundary twists (not rounded)."""
    n_occ = model.filling
    if n_occ == 0 or n_occ == model.lattice.n_modes:
        return 0.0
    grid = 2 * math.pi * np.arange(n) / n
    frames = [[_occupied_frame(model, (t1, t2), n_occ) for t2 in grid] for t1 in grid]

    def link(a, b) -> complex:
        z = linalg.det(a.conj().T @ b)
        return z / abs(z)

    total = 0.0
    for i in range(n):
        for k in range(n):
            u00 = frames[i][k]
            u10 = frames[(i + 1) % n][k]
            u01 = frames[i][(k + 1) % n]
            u11 = frames[(i + 1) % n][(k + 1) % n]
            loop = link(u00, u10) * link(u10, u11) / link(u01, u11) / link(u00, u01)
            total += np.angle(loop)
    return total / (2 * math.pi)


def kspace_chern_number(model: OneBodyModel, grids: Sequence[int] = (4, 6, 8, 12, 16)) -> int:
    """Integer Chern number of the filled bands, refining the twist grid until it is stable."""
    q = flux_fraction(model.b, model.L).denominator
    if model.L % q:
        raise FluxQuantizationError(f"flux denominator {q} does not divide L={model.L}")
    previous = None
    value = 0.0
    for n in grids:
        value = fhs_chern(model, n)
        rounded = int(round(value))
        if previous is not None and rounded == previous and abs(value - rounded) < 1e-6:
            return rounded
        previous = rounded
    logger.warning(f"⚠️ plaquette Chern sum did not settle: last value {value:.6f}")
    return int(round(value))


def one_body_current(model: OneBodyModel, anchor: Site, j: int) -> np.ndarray:
    """
    One-body kernel of the bond current -i L_{X_j}(h_anchor) for the bond
    {anchor, anchor + e_j}.
    """
    lat = model.lattice
    a = lat.index(anchor)
    b = lat.index(lat.shift(anchor, _UNIT[j]))
    cur = np.zeros_like(model.h)
    cur[b, a] = -1j * model.h[b, a]
    cur[a, b] = 1j * model.h[a, b]
    return cur


# === Many-body Hamiltonian ===
def nearest_neighbour_density(lat: TorusLattice, translation: Optional[MagneticTranslation] = None) -> Interaction:
    """V = sum over bonds of n_x n_y."""
    T = translation or MagneticTranslation(lat)
    terms = []
    for x in lat.sites():
        for step in ((1, 0), (0, 1)):
            y = lat.shift(x, step)
            if y == x:
                continue
            op = number_op(lat, x) @ number_op(lat, y)
            terms.append(Term(frozenset([lat.index(x), lat.index(y)]), x, op))
    return Interaction(lat, terms, T, "V")


def hofstadter_interaction(lat: TorusLattice, mu: float, translation: Optional[MagneticTranslation] = None) -> Interaction:
    """dGamma(h - mu) as bond terms anchored at their lower-left site plus on-site -mu n_x."""
    lat.require_fock()
    T = translation or MagneticTranslation(lat)
    terms = []
    for x in lat.sites():
        i = lat.index(x)
        if mu != 0.0:
            terms.append(Term(frozenset([i]), x, -mu * number_op(lat, x)))
        for axis, step in ((0, (1, 0)), (1, (0, 1))):
            if not lat.magnetic_pbc and x[axis] == lat.L - 1:
                continue
            y = lat.shift(x, step)
            t = np.exp(1j * lat.b * x[1]) if axis == 0 else 1.0
            hop = hopping_op(lat, y, x, t)
            terms.append(Term(frozenset([i, lat.index(y)]), x, hop + hop.dagger()))
    return Interaction(lat, terms, T, "H0")


def many_body_hamiltonian(b: float, mu: float, lam: float, L: int,
                          V: Optional[Any] = None) -> Tuple[Interaction, FockOperator]:
    """
    H = dGamma(h - mu) + lam * V.

    Args:
        V: None for nearest-neighbour densities, an Interaction, or a list of
            {"sites", "expr"} records.
    Returns:
        (Interaction, FockOperator): term map and summed matrix.
    """
    lat = TorusLattice(L, b)
    lat.require_fock()
    T = MagneticTranslation(lat)
    H = hofstadter_interaction(lat, mu, T)
    if lam != 0.0:
        if V is None:
            V = nearest_neighbour_density(lat, T)
        elif not isinstance(V, Interaction):
            V = interaction_from_records(lat, V, T)
        H = H + V.scaled(lam)
    H.name = "H"
    return H, H.total


# === Spectral cache and ground states ===
@dataclass(frozen=True, eq=False)
class SpectralCache:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degeneracy: int
    ground_energy: float
    gap: float

    @cached_property
    def ground_projector(self) -> np.ndarray:
        g = self.eigenvectors[:, : self.degeneracy]
        return g @ g.conj().T

    @property
    def degenerate(self) -> bool:
        return self.degeneracy > 1

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def to_eigenbasis(self, A: np.ndarray) -> np.ndarray:
        v = self.eigenvectors
        return v.conj().T @ A @ v

    def from_eigenbasis(self, A: np.ndarray) -> np.ndarray:
        v = self.eigenvectors
        return v @ A @ v.conj().T

    @cached_property
    def energy_differences(self) -> np.ndarray:
        """E_m - E_n."""
        e = self.eigenvalues
        return e[:, None] - e[None, :]

    def excerpt(self, width: int = 6) -> List[float]:
        return [float(x) for x in self.eigenvalues[:width]]


def spectral_cache(H: Any, cache: Optional[MatrixCache] = None,
                   degeneracy_tol: float = TOL_DEGENERACY) -> SpectralCache:
    """Eigendecomposition with ground-sector multiplicity and gap."""
    m = H.matrix if isinstance(H, FockOperator) else np.asarray(H)
    vals, vecs = cached_eigh(m, cache)
    if reconstruction_residual(m, vals, vecs) > TOL_IDENTITY:
        raise SpectrumError("eigendecomposition failed the reconstruction check")
    e0 = float(vals[0])
    d = int(np.sum(vals - e0 <= degeneracy_tol))
    gap = float(vals[d] - e0) if d < len(vals) else math.inf
    return SpectralCache(np.asarray(vals, dtype=float), vecs, d, e0, gap)


def ground_state(H: Any, cache: Optional[MatrixCache] = None) -> Tuple[State, SpectralCache]:
    """Lowest eigenvector, or the uniform mixture over a degenerate ground sector."""
    op = H if isinstance(H, FockOperator) else FockOperator.from_matrix(np.asarray(H))
    if not op.self_adjoint:
        raise SpectrumError("Hamiltonian is not self-adjoint")
    sc = spectral_cache(op, cache)
    if sc.degenerate:
        logger.info(f"⚠️ ground state is {sc.degeneracy}-fold degenerate, using the ground projector")
        return State.projector(sc.ground_projector), sc
    return State.vector(sc.eigenvectors[:, 0]), sc


# === Gap certificate ===
@dataclass
class GapReport:
    g: float
    min_ratio: float
    samples: int
    skipped: int
    passed: bool
    ratios: List[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"g": self.g, "min_ratio": self.min_ratio, "samples": self.samples,
                "skipped": self.skipped, "passed": self.passed}


def gap_ratio(state: State, H: np.ndarray, A: np.ndarray, floor: float = TOL_VARIANCE) -> Optional[float]:
    """omega(A* [H, A]) / (omega(A* A) - |omega(A)|^2), None when the variance vanishes."""
    if state.kind == "vector":
        v = state.data
        Av = A @ v
        num = np.vdot(Av, H @ Av) - np.vdot(Av, A @ (H @ v))
        var = np.vdot(Av, Av) - abs(np.vdot(v, Av)) ** 2
    else:
        Ad = A.conj().T
        num = state.expect(Ad @ (H @ A - A @ H))
        var = state.expect(Ad @ A) - abs(state.expect(A)) ** 2
    var = float(np.real(var))
    if var < floor:
        return None
    return float(np.real(num)) / var


def gap_certificate(state: State, H: Interaction, g: float, samples: int,
                    rng: Optional[np.random.Generator] = None, probes: Optional[Sequence[FockOperator]] = None,
                    support_size: int = 2, slack: float = TOL_GAP_SLACK,
                    variance_floor: float = TOL_VARIANCE) -> GapReport:
    """
    Minimum of the gap ratio over random local gauge-invariant probes (or the given ones).
    Passes if the minimum is at least g - slack.
    """
    rng = rng if rng is not None else np.random.default_rng()
    Hm = H.total.matrix
    if probes is None:
        probes = (random_local_operator(H.lattice, rng, size=support_size) for _ in range(samples))
    ratios: List[float] = []
    skipped = 0
    for A in probes:
        r = gap_ratio(state, Hm, A.matrix, variance_floor)
        if r is None:
            skipped += 1
        else:
            ratios.append(r)
    min_ratio = min(ratios) if ratios else math.inf
    report = GapReport(g, min_ratio, len(ratios) + skipped, skipped, bool(min_ratio >= g - slack), ratios)
    logger.info(f"{'✅' if report.passed else '❌'} gap certificate: min ratio {min_ratio:.6g} vs g={g:.6g}"
                f" ({skipped} skipped)")
    return report
