# hallab/neass.py

"""
Order-m non-equilibrium almost-stationary states.

The generators K_1 .. K_m solve, order by order in the field strength, the
condition that the dressed Hamiltonian e^{iS}(H + eps D)e^{-iS} has no
matrix elements between the ground sector and its complement, where
D = X_1^H + V is the drive and S = sum_mu eps^mu K_mu:

    K_mu = -I(L_mu + V_mu)

L_mu collects the nested commutators ad(iK_mu1)...ad(iK_muk) H with k >= 2
and mu1 + ... + muk = mu, V_mu the ones applied to D with
mu1 + ... + muk = mu - 1, each weighted by 1/k!.

X_1^H is the torus realization of L_{X_1}: an operator whose commutator with H
is the local current sum_t L_{X_1}(h_t) on every pair of distinct levels. The
local rule alone stops being a derivation once operators wrap the torus, and
the order-by-order cancellation needs one.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from hallab.exceptions import OrderError
from hallab.fock import FockOperator, State, decay_norm, random_local_operator
from hallab.hofstadter import SpectralCache, spectral_cache
from hallab.interactions import Interaction, MagneticTranslation, is_t_compatible, torus_sum
from hallab.matrix_cache import MatrixCache
from hallab.spectral_flow import FieldDerivation, FilterKernel, field_derivation, inverse_apply, require_gap
from hallab.utils.log import get_logger
from hallab.utils.settings import MAX_NEASS_ORDER, NEASS_PROBE_NU, TOL_FLOW, TOL_IDENTITY, WORKER_COUNT

logger = get_logger(__name__)

Bookkeeping = List[Tuple[Tuple[int, ...], str, Fraction]]


def _compositions(total: int, parts: int):
    """Ordered tuples of `parts` positive integers summing to `total`."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    for cuts in itertools.combinations(range(1, total), parts - 1):
        bounds = (0,) + cuts + (total,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(parts))


def order_terms(mu: int) -> Bookkeeping:
    """
    Multi-indices contributing at order mu: ("H", k >= 2, sum mu) and
    ("D", k >= 0, sum mu - 1), with coefficient 1/k!.
    """
    out: Bookkeeping = []
    for k in range(2, mu + 1):
        for seq in _compositions(mu, k):
            out.append((seq, "H", Fraction(1, math.factorial(k))))
    for k in range(0, mu):
        for seq in _compositions(mu - 1, k):
            out.append((seq, "D", Fraction(1, math.factorial(k))))
    return out


def _nested(generators: Sequence[np.ndarray], seq: Tuple[int, ...], base: np.ndarray,
            memo: Dict[Tuple[Tuple[int, ...], str], np.ndarray], label: str) -> np.ndarray:
    """ad(iK_seq[0]) ... ad(iK_seq[-1]) base, with ad(iK) Y = i[K, Y]."""
    key = (seq, label)
    if key in memo:
        return memo[key]
    if not seq:
        return base
    inner = _nested(generators, seq[1:], base, memo, label)
    K = generators[seq[0] - 1]
    out = 1j * (K @ inner - inner @ K)
    memo[key] = out
    return out


# === Generators ===
@dataclass(frozen=True, eq=False)
class NeassGenerators:
    """
    Args:
        order (int): truncation order m.
        totals (List[ndarray]): torus-summed K_1 .. K_m.
        origin_terms (List[FockOperator]): T-compatible origin terms of K_1 .. K_m.
        blocks (Dict[int, ndarray]): L_mu + V_mu per order.
        bookkeeping (Dict[int, Bookkeeping]): contributing multi-indices per order.
    """
    order: int
    H: Interaction
    V: Optional[Interaction]
    kernel: FilterKernel
    cache: SpectralCache
    field: FieldDerivation
    drive: np.ndarray
    totals: List[np.ndarray]
    origin_terms: List[FockOperator]
    blocks: Dict[int, np.ndarray]
    bookkeeping: Dict[int, Bookkeeping]

    @property
    def n_modes(self) -> int:
        return self.H.n_modes

    @property
    def hamiltonian(self) -> np.ndarray:
        return self.H.total.matrix

    def generator(self, eps: float) -> np.ndarray:
        """S_eps = sum_mu eps^mu K_mu."""
        S = np.zeros_like(self.drive)
        for mu, K in enumerate(self.totals, start=1):
            S += eps ** mu * K
        return S

    def dressed_block(self, mu: int) -> np.ndarray:
        """i[K_mu, H] + L_mu + V_mu."""
        K = self.totals[mu - 1]
        Hm = self.hamiltonian
        return 1j * (K @ Hm - Hm @ K) + self.blocks[mu]


def _translation_average(T: Optional[MagneticTranslation], m: np.ndarray, n_modes: int) -> np.ndarray:
    """(1/|Lambda|) sum_gamma T_gamma(m); removes the rounding noise that breaks translation invariance."""
    if T is None:
        return m
    total = torus_sum(T, FockOperator(m, frozenset(range(n_modes)), n_modes)).matrix
    return total / T.lattice.n_modes


def _check_generator(K: FockOperator, gens_H: Interaction, total: np.ndarray, mu: int,
                     tolerance: float = TOL_IDENTITY) -> None:
    if not K.self_adjoint:
        logger.warning(f"⚠️ K_{mu} origin term is not self-adjoint")
    T = gens_H.translation
    if T is None:
        return
    if not is_t_compatible(T, K):
        logger.warning(f"⚠️ K_{mu} origin term failed the T-compatibility test")
    diff = np.max(np.abs(torus_sum(T, K).matrix - total))
    if diff > tolerance * max(1.0, float(np.max(np.abs(total)))):
        logger.warning(f"⚠️ K_{mu}: torus sum of the origin term differs from the total by {diff:.2e}")


def neass_generators(H: Interaction, V: Optional[Interaction], m: int, kernel: FilterKernel,
                     cache: Optional[SpectralCache] = None, matrix_cache: Optional[MatrixCache] = None,
                     direction: int = 1, tolerance: float = TOL_IDENTITY) -> NeassGenerators:
    """
    Build K_1 .. K_m.

    Args:
        H (Interaction): periodic Hamiltonian.
        V (Interaction | None): periodic perturbation, None for zero.
        m (int): order, 1 <= m <= MAX_NEASS_ORDER.
        kernel (FilterKernel): filter with g below the spectral gap.
        cache (SpectralCache | None): eigendecomposition of H, computed if missing.
        direction (int): field direction of the linear potential.
        tolerance (float): relative bound for the origin-term torus sums.
    Returns:
        NeassGenerators
    """
    if not 1 <= m <= MAX_NEASS_ORDER:
        raise OrderError(f"NEASS order must lie in 1..{MAX_NEASS_ORDER}, got {m}", {"order": m})
    cache = cache if cache is not None else spectral_cache(H.total, matrix_cache)
    require_gap(cache, kernel)
    Hm = H.total.matrix
    h0 = H.origin_term()
    fd = field_derivation(H, cache, direction)
    n = H.n_modes
    T = H.translation
    drive = _translation_average(T, fd.position, n)
    if V is not None:
        drive = drive + V.total.matrix

    totals: List[np.ndarray] = []
    origins: List[FockOperator] = []
    blocks: Dict[int, np.ndarray] = {}
    book: Dict[int, Bookkeeping] = {}
    memo: Dict[Tuple[Tuple[int, ...], str], np.ndarray] = {}
    for mu in range(1, m + 1):
        terms = order_terms(mu)
        block = np.zeros_like(Hm)
        for seq, label, coeff in terms:
            base = Hm if label == "H" else drive
            block += float(coeff) * _nested(totals, seq, base, memo, label)
        block = _translation_average(T, block, n)
        blocks[mu] = block
        book[mu] = terms
        K = -inverse_apply(cache, 1j * (block @ Hm - Hm @ block), kernel)
        K0 = FockOperator(-inverse_apply(cache, 1j * (block @ h0.matrix - h0.matrix @ block), kernel),
                          frozenset(range(n)), n)
        _check_generator(K0, H, K, mu, tolerance)
        totals.append(K)
        origins.append(K0)
        logger.info(f"➕ K_{mu}: {len(terms)} nested terms, norm {np.linalg.norm(K, 2):.4g}")
    return NeassGenerators(m, H, V, kernel, cache, fd, drive, totals, origins, blocks, book)


def order_condition(gens: NeassGenerators, mu: int, probes: Optional[Sequence[FockOperator]] = None) -> float:
    """
    max |omega_0([Htilde_mu, B])| over the probes; without probes the norm of the
    ground-to-excited block of Htilde_mu, which bounds every normalized test operator.
    """
    Ht = gens.dressed_block(mu)
    P = gens.cache.ground_projector
    if probes is None:
        return float(np.linalg.norm(P @ Ht @ (np.eye(len(P)) - P), 2))
    rho = P / np.real(np.trace(P))
    comm = rho @ Ht - Ht @ rho
    return max(abs(np.einsum("ij,ji->", comm, B.matrix)) for B in probes)


# === Dressed states ===
@dataclass(frozen=True, eq=False)
class DressedState:
    eps: float
    generator: np.ndarray
    unitary: np.ndarray
    state: State
    generators: NeassGenerators

    def expect(self, A) -> complex:
        return self.state.expect(A)


def dress_state(omega0: State, gens: NeassGenerators, eps: float) -> DressedState:
    """omega_eps(A) = omega_0(e^{iS_eps} A e^{-iS_eps})."""
    if abs(eps) > 1.0:
        raise ValueError(f"field strength must satisfy |eps| <= 1, got {eps}")
    S = gens.generator(eps)
    if eps == 0.0:
        U = np.eye(S.shape[0], dtype=complex)
        return DressedState(0.0, S, U, omega0, gens)
    U = linalg.expm(1j * S)
    if omega0.kind == "vector":
        dressed = State.vector(U.conj().T @ omega0.data)
    elif omega0.kind == "projector":
        dressed = State.projector(U.conj().T @ omega0.data @ U)
    else:
        raise ValueError("dressing needs a vector or projector ground state")
    return DressedState(eps, S, U, dressed, gens)


# === Stationarity ===
@dataclass(frozen=True, eq=False)
class Probe:
    operator: FockOperator
    norm: float


def neass_probes(gens: NeassGenerators, count: int, rng: np.random.Generator,
                 nu: int = NEASS_PROBE_NU, size: int = 2) -> List[Probe]:
    """Random local gauge-invariant probes with their decay norms around the anchor."""
    lat = gens.H.lattice
    out = []
    for _ in range(count):
        anchor = lat.site(int(rng.integers(lat.n_modes)))
        A = random_local_operator(lat, rng, size=size, anchor=anchor)
        out.append(Probe(A, decay_norm(A, nu, anchor, lat)))
    return out


def stationarity_residual(state: DressedState, probes: Sequence[Probe]) -> float:
    """max_A |omega_eps([H + eps V + eps X^H, A])| / ||A||_nu."""
    gens = state.generators
    Hm = gens.hamiltonian + state.eps * gens.drive
    rho = state.state.density_matrix
    comm = rho @ Hm - Hm @ rho
    worst = 0.0
    for p in probes:
        worst = max(worst, abs(np.einsum("ij,ji->", comm, p.operator.matrix)) / p.norm)
    return float(worst)


def log_slope(eps: Sequence[float], values: Sequence[float]) -> Tuple[float, float]:
    """Least-squares slope of log(value) against log(eps) with its r^2; zeros are dropped."""
    x = np.asarray(eps, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return math.nan, math.nan
    lx, ly = np.log(x[keep]), np.log(y[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    fit = slope * lx + intercept
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - fit) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


@dataclass
class NeassReport:
    order: int
    eps: List[float]
    residuals: List[float]
    slope: float
    r2: float
    s_ratios: List[float]
    conditions: Dict[int, float]
    profile: str
    tolerance: float = TOL_FLOW
    extra: Dict[str, Any] = field(default_factory=dict)

    def rows(self) -> List[Dict[str, float]]:
        return [{"eps": e, "residual": r, "s_norm_over_eps": s}
                for e, r, s in zip(self.eps, self.residuals, self.s_ratios)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "order": self.order,
            "profile": self.profile,
            "eps": self.eps,
            "residuals": self.residuals,
            "slope": self.slope,
            "r2": self.r2,
            "s_norm_over_eps": self.s_ratios,
            "order_conditions": {str(k): v for k, v in self.conditions.items()},
            "order_conditions_passed": all(c <= self.tolerance for c in self.conditions.values()),
            **self.extra,
        }


def neass_scan(omega0: State, gens: NeassGenerators, eps_grid: Sequence[float],
               probes: Sequence[Probe], workers: int = WORKER_COUNT, tolerance: float = TOL_FLOW) -> NeassReport:
    """Stationarity residuals over the eps grid plus the per-order conditions."""
    eps_grid = [float(e) for e in eps_grid]

    def one(eps: float) -> Tuple[float, float]:
        st = dress_state(omega0, gens, eps)
        s = float(np.linalg.norm(st.generator, 2)) / eps if eps > 0 else math.nan
        return stationarity_residual(st, probes), s

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, eps_grid))
    residuals = [r for r, _ in results]
    ratios = [s for _, s in results]
    conditions = {mu: order_condition(gens, mu, [p.operator for p in probes])
                  for mu in range(1, gens.order + 1)}
    for mu, c in conditions.items():
        if c > tolerance:
            logger.warning(f"⚠️ order-{mu} condition violated: {c:.2e}")
    slope, r2 = log_slope(eps_grid, residuals)
    logger.info(f"✅ NEASS m={gens.order}: residual slope {slope:.3f} (r2 {r2:.3f})")
    return NeassReport(gens.order, eps_grid, residuals, slope, r2, ratios, conditions, gens.kernel.profile,
                       tolerance)
