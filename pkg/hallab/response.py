# hallab/response.py

"""
Currents and the Hall response.

- current_interaction: J_j = i[H + eps V, X_j] as a term map.
- hall_conductivity: double-commutator formula in the ground state.
- response_scan: per-volume currents in the dressed states over an eps grid.
- chern_simons_check: sigma_H before and after a locally generated automorphism.
- conductance_stats: segment conductance mean, variance and current correlations,
  by exact diagonalization or by Wick's theorem for quasi-free states.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from hallab.exceptions import SegmentError
from hallab.fock import FockOperator, State, decay_norm, random_local_operator
from hallab.hofstadter import OneBodyModel, SpectralCache, one_body_current
from hallab.interactions import (
    Interaction,
    LiouvillianSpec,
    periodize,
    per_volume_expectation,
    position_commutator_interaction,
    torus_sum,
)
from hallab.neass import DressedState, NeassGenerators, dress_state, log_slope
from hallab.spectral_flow import FilterKernel, FlowSpec, od_map
from hallab.utils.log import get_logger
from hallab.utils.settings import TOL_CS, TOL_CURRENT, TOL_IDENTITY, TOL_PROFILE, TOL_VARIANCE, WORKER_COUNT

logger = get_logger(__name__)


# === Currents ===
def current_interaction(H: Interaction, V: Optional[Interaction], eps: float, j: int) -> Interaction:
    """J_j with terms -i L_{X_j}(Phi(M)) around each anchor, Phi = H + eps V."""
    total = H if V is None or eps == 0.0 else H + V.scaled(eps)
    J = position_commutator_interaction(total, j, factor=-1j)
    J.name = f"J{j}"
    return J


# === Hall conductivity ===
def _od_position(H: Interaction, cache: SpectralCache, kernel: FilterKernel, j: int,
                 alpha: Optional[np.ndarray] = None, covariant: bool = False) -> FockOperator:
    flow = FlowSpec(LiouvillianSpec(q=1.0, j=j, lattice=H.lattice), cache, H.origin_term(),
                    alpha=alpha, translation=H.translation, covariant=covariant)
    return od_map(flow, kernel)


def hall_conductivity(omega0: State, H: Interaction, cache: SpectralCache, kernel: FilterKernel,
                      alpha: Optional[np.ndarray] = None, directions: Tuple[int, int] = (1, 2),
                      covariant: bool = False) -> float:
    """
    sigma_H = -i sum_gamma omega0([T_gamma (X_a^OD)_0, (X_b^OD)_0]), (a, b) = directions.

    Args:
        omega0 (State): gapped ground state of H (already transported when alpha is set).
        H (Interaction): periodic Hamiltonian.
        cache (SpectralCache): eigendecomposition of H.
        kernel (FilterKernel): filter.
        alpha (ndarray | None): unitary of the dressing automorphism.
        covariant (bool): transport the position derivations along alpha as well.
    Returns:
        float: real part; a larger imaginary residue is logged.
    """
    a, b = directions
    xa = _od_position(H, cache, kernel, a, alpha, covariant)
    xb = _od_position(H, cache, kernel, b, alpha, covariant)
    sa = torus_sum(H.translation, xa).matrix
    xbm = xb.matrix
    value = -1j * omega0.expect(sa @ xbm - xbm @ sa)
    if abs(value.imag) > TOL_IDENTITY:
        logger.warning(f"⚠️ sigma_H has imaginary residue {value.imag:.2e}, discarded")
    return float(value.real)


def profile_spread(omega0: State, H: Interaction, cache: SpectralCache, kernel: FilterKernel,
                   tolerance: float = TOL_PROFILE) -> Dict[str, Any]:
    """sigma_H for the "poly" and "quintic" inside-gap profiles."""
    out: Dict[str, Any] = {}
    for profile in ("poly", "quintic"):
        out[profile] = hall_conductivity(omega0, H, cache, replace(kernel, profile=profile))
    out["spread"] = abs(out["poly"] - out["quintic"])
    out["passed"] = bool(out["spread"] <= tolerance)
    if not out["passed"]:
        logger.warning(f"⚠️ sigma_H depends on the inside-gap profile: spread {out['spread']:.2e}")
    return out


# === Response scan ===
@dataclass
class ResponseReport:
    """
    Per-volume currents omega_eps(J_j) of the local current interactions.
    longitudinal_bound is set instead of a fit when every longitudinal current
    lies at or below the noise floor.
    """
    eps: List[float]
    j1: List[float]
    j2: List[float]
    sigma: float
    hall_slope: float
    hall_intercept: float
    hall_residual: float
    longitudinal_slope: float
    longitudinal_r2: float
    longitudinal_bound: Optional[float] = None
    od_norms: List[float] = field(default_factory=list)

    @property
    def longitudinal_vanishes(self) -> bool:
        return self.longitudinal_bound is not None

    def rows(self) -> List[Dict[str, float]]:
        rows = []
        for i, e in enumerate(self.eps):
            row = {"eps": e, "j1": self.j1[i], "j2": self.j2[i]}
            if self.od_norms:
                row["od_norm"] = self.od_norms[i]
            rows.append(row)
        return rows

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "sigma_H": self.sigma,
            "hall_slope": self.hall_slope,
            "hall_intercept": self.hall_intercept,
            "hall_fit_residual": self.hall_residual,
            "hall_relative_deviation": abs(self.hall_slope - self.sigma) / abs(self.sigma) if self.sigma else math.nan,
            "longitudinal_slope": self.longitudinal_slope,
            "longitudinal_r2": self.longitudinal_r2,
            "longitudinal_vanishes": self.longitudinal_vanishes,
            "longitudinal_bound": self.longitudinal_bound,
        }


def hall_fit(eps: Sequence[float], j2: Sequence[float]) -> Tuple[float, float, float]:
    """Linear coefficient and intercept of a quadratic fit j2(eps) and the rms fit residual."""
    x = np.asarray(eps, dtype=float)
    y = np.asarray(j2, dtype=float)
    keep = x > 0
    if keep.sum() < 3:
        return math.nan, math.nan, math.nan
    coeffs = np.polyfit(x[keep], y[keep], 2)
    resid = y[keep] - np.polyval(coeffs, x[keep])
    return float(coeffs[1]), float(coeffs[2]), float(np.sqrt(np.mean(resid ** 2)))


def longitudinal_fit(eps: Sequence[float], j1: Sequence[float],
                     noise_floor: float = TOL_CURRENT) -> Tuple[float, float, Optional[float]]:
    """
    Log-log slope and r^2 of |j1(eps)| over eps > 0, or (nan, nan, bound) when every
    driven value is at or below the noise floor, bound being the largest of them.
    """
    driven = [abs(v) for e, v in zip(eps, j1) if e > 0]
    if driven and max(driven) <= noise_floor:
        bound = max(driven)
        logger.info(f"✅ response: longitudinal current vanishes (max {bound:.2e} <= {noise_floor:.0e})")
        return math.nan, math.nan, bound
    slope, r2 = log_slope(eps, [abs(v) for v in j1])
    return slope, r2, None


def response_scan(omega0: State, gens: NeassGenerators, eps_grid: Sequence[float], sigma: float,
                  workers: int = WORKER_COUNT, track_od_norms: bool = False,
                  noise_floor: float = TOL_CURRENT) -> ResponseReport:
    """
    Per-volume currents omega_eps((J_j)_0) over the grid, J_j = current_interaction(H, V, eps, j)
    built from the local rule on every term.
    """
    H, V = gens.H, gens.V
    lat = H.lattice

    def one(eps: float) -> Dict[str, float]:
        st: DressedState = dress_state(omega0, gens, eps)
        out = {f"j{j}": per_volume_expectation(st.state, current_interaction(H, V, eps, j)) for j in (1, 2)}
        if track_od_norms:
            xod = _od_position(H, gens.cache, gens.kernel, 1, st.unitary if eps else None)
            out["od_norm"] = decay_norm(xod, 5, (0, 0), lat)
        return out

    eps_grid = [float(e) for e in eps_grid]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(one, eps_grid))
    j1 = [r["j1"] for r in rows]
    j2 = [r["j2"] for r in rows]
    slope, intercept, residual = hall_fit(eps_grid, j2)
    lslope, lr2, bound = longitudinal_fit(eps_grid, j1, noise_floor)
    logger.info(f"✅ response: Hall slope {slope:.6g} vs sigma {sigma:.6g}, longitudinal slope {lslope:.3f}")
    return ResponseReport(eps_grid, j1, j2, sigma, slope, intercept, residual, lslope, lr2, bound,
                          [r["od_norm"] for r in rows] if track_od_norms else [])


# === Chern-Simons invariance ===
@dataclass
class CSReport:
    """
    after: sigma_H of the transported state with the position derivations
    transported along alpha. literal_after keeps the untransported derivations;
    on a torus the two differ by position_shift_defect, which shrinks with L.
    """
    before: float
    after: float
    delta: float
    strength: float
    literal_after: float
    tolerance: float = TOL_CS

    @property
    def position_shift_defect(self) -> float:
        return abs(self.literal_after - self.before)

    @property
    def passed(self) -> bool:
        return self.delta <= self.tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {"sigma_before": self.before, "sigma_after": self.after, "delta": self.delta,
                "strength": self.strength, "passed": self.passed,
                "literal_sigma_after": self.literal_after, "position_shift_defect": self.position_shift_defect}


def random_periodic_generator(H: Interaction, rng: np.random.Generator, size: int = 2) -> Interaction:
    """T-periodic interaction from a random self-adjoint gauge-invariant term at the origin."""
    A = random_local_operator(H.lattice, rng, size=size, self_adjoint=True, anchor=(0, 0))
    G = periodize(A, H.translation)
    G.name = "G"
    return G


def chern_simons_check(omega0: State, H: Interaction, cache: SpectralCache, kernel: FilterKernel,
                       generator: Interaction, strength: float, tolerance: float = TOL_CS) -> CSReport:
    """
    Compare sigma_H of omega0 with sigma_H of omega0 o alpha, alpha(B) = U B U*,
    U = exp(i strength G), using the alpha-dressed off-diagonal maps.
    """
    before = hall_conductivity(omega0, H, cache, kernel)
    if strength == 0.0:
        return CSReport(before, before, 0.0, 0.0, before, tolerance)
    U = linalg.expm(1j * strength * generator.total.matrix)
    if omega0.kind == "vector":
        moved = State.vector(U.conj().T @ omega0.data)
    else:
        moved = State.projector(U.conj().T @ omega0.data @ U)
    after = hall_conductivity(moved, H, cache, kernel, alpha=U, covariant=True)
    literal = hall_conductivity(moved, H, cache, kernel, alpha=U)
    report = CSReport(before, after, abs(after - before), strength, literal, tolerance)
    logger.info(f"{'✅' if report.passed else '❌'} Chern-Simons check: sigma {before:.10g} -> {after:.10g} "
                f"(delta {report.delta:.2e}, position shift defect {report.position_shift_defect:.2e})")
    return report


# === Conductance ===
@dataclass
class ConductanceStats:
    segment: int
    eps: float
    mean: float
    variance: float
    decay_rate: float
    decay_r2: float
    correlations: List[float] = field(default_factory=list)
    deviation: Optional[float] = None

    @property
    def scaled_variance(self) -> float:
        """variance * eps^2 * L."""
        return self.variance * self.eps ** 2 * self.segment

    def to_dict(self) -> Dict[str, Any]:
        return {"L": self.segment, "eps": self.eps, "mean": self.mean, "variance": self.variance,
                "scaled_variance": self.scaled_variance, "decay_rate": self.decay_rate,
                "decay_r2": self.decay_r2, "deviation": self.deviation}


def exponential_fit(correlations: Sequence[float]) -> Tuple[float, float]:
    """
    Decay rate and r^2 of a log-linear fit to the monotone envelope of |c_d|,
    d = 1, 2, ... (entry d - 1); values at or below 1e-14 are dropped.
    """
    c = np.abs(np.asarray(correlations, dtype=float))
    if len(c) < 2:
        return math.nan, math.nan
    env = np.maximum.accumulate(c[::-1])[::-1]
    d = np.arange(1, len(c) + 1)
    keep = env > TOL_VARIANCE
    if keep.sum() < 2:
        return math.nan, math.nan
    x, y = d[keep], np.log(env[keep])
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - fit) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), r2


def _segment_check(side: int, segment: int, eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"conductance needs eps > 0, got {eps}")
    if not 1 <= segment <= side:
        raise SegmentError(f"segment length {segment} exceeds the torus side {side}",
                           {"segment": segment, "side": side})


def _wick_stats(model: OneBodyModel, gamma: np.ndarray, eps: float, segment: int) -> ConductanceStats:
    lat = model.lattice
    _segment_check(lat.L, segment, eps)
    currents = [one_body_current(model, (m, 0), 2) for m in range(lat.L)]
    A = sum(currents[:segment])
    comp = np.eye(len(gamma)) - gamma
    mean = float(np.real(np.trace(A @ gamma)))
    var = float(np.real(np.trace(A @ comp @ A @ gamma)))
    j0 = currents[0]
    corr = [float(np.real(np.trace(j0 @ comp @ currents[d] @ gamma))) for d in range(1, lat.L // 2 + 1)]
    rate, r2 = exponential_fit(corr)
    scale = eps * segment
    return ConductanceStats(segment, eps, mean / scale, max(var, 0.0) / scale ** 2, rate, r2, corr)


def _ed_stats(state: State, current: Interaction, eps: float, segment: int) -> ConductanceStats:
    lat = current.lattice
    _segment_check(lat.L, segment, eps)
    T = current.translation
    j0 = current.origin_term()
    pieces = [T.apply((m, 0), j0).matrix for m in range(lat.L)]
    JL = sum(pieces[:segment])
    mean = float(np.real(state.expect(JL)))
    var = float(np.real(state.expect(JL @ JL))) - mean ** 2
    e0 = state.expect(pieces[0])
    corr = [float(np.real(state.expect(pieces[0] @ pieces[d]) - e0 * state.expect(pieces[d])))
            for d in range(1, lat.L // 2 + 1)]
    rate, r2 = exponential_fit(corr)
    scale = eps * segment
    return ConductanceStats(segment, eps, mean / scale, max(var, 0.0) / scale ** 2, rate, r2, corr)


def conductance_stats(state: Union[State, DressedState], eps: float, segment: int,
                      current: Optional[Interaction] = None, model: Optional[OneBodyModel] = None,
                      sigma: Optional[float] = None) -> ConductanceStats:
    """
    Statistics of G_L = J_L / (eps L), J_L = sum_{m < L} T_(m,0) (J_2)_0.

    Args:
        state: many-body state (ED path) or quasi-free State (Wick path).
        current (Interaction | None): J_2 term map for the ED path.
        model (OneBodyModel | None): one-body model for the Wick path.
        sigma (float | None): reference sigma_H; sets `deviation`.
    """
    if isinstance(state, DressedState):
        if current is None:
            raise ValueError("the exact-diagonalization path needs the current interaction")
        order = state.generators.order
        stats = _ed_stats(state.state, current, eps, segment)
    elif state.kind == "quasi_free":
        if model is None:
            raise ValueError("the quasi-free path needs the one-body model")
        order = None
        stats = _wick_stats(model, state.data, eps, segment)
    else:
        if current is None:
            raise ValueError("the exact-diagonalization path needs the current interaction")
        order = None
        stats = _ed_stats(state, current, eps, segment)
    if sigma is not None:
        stats.deviation = abs(stats.mean - sigma)
        if order is not None:
            logger.info(f"🔍 |G_L - sigma| / eps^{order + 1} = {stats.deviation / eps ** (order + 1):.4g}")
    return stats
