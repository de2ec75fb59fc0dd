# hallab/spectral_flow.py

"""
Spectral filter maps.

The filter W_g is fixed by its Fourier data: weight(k) = i/k for |k| >= g and
an odd polynomial profile inside the gap, matched to i/k at +-g. Everything is
evaluated in the eigenbasis of the many-body Hamiltonian; the time-quadrature
path re-evaluates the same maps from samples of W_g(s) and exists to
cross-check the spectral shortcut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import integrate, special

from hallab.exceptions import GapError, QuadratureError
from hallab.fock import FockOperator, Site
from hallab.hofstadter import SpectralCache
from hallab.interactions import Interaction, LiouvillianSpec, MagneticTranslation, is_t_compatible, liouvillian_apply, position_commutator
from hallab.utils.log import get_logger
from hallab.utils.settings import TOL_DEGENERACY, TOL_IDENTITY, TOL_QUADRATURE_PLATEAU

logger = get_logger(__name__)

# q(k) = (a x + b x^3 + c x^5) / g with x = k / g; weight = i q inside the gap.
# "poly" matches i/k in value and slope at +-g, "quintic" also in curvature.
PROFILES: Dict[str, Tuple[float, float, float]] = {
    "poly": (2.0, -1.0, 0.0),
    "quintic": (3.0, -3.0, 1.0),
}

_LEGENDRE_U, _LEGENDRE_W = np.polynomial.legendre.leggauss(96)
_LEGENDRE_U = 0.5 * (_LEGENDRE_U + 1.0)
_LEGENDRE_W = 0.5 * _LEGENDRE_W
_SERIES_SWITCH = 40.0


def _sine_moments(tau: np.ndarray, n_max: int = 5) -> Dict[int, np.ndarray]:
    """S_n(tau) = int_0^1 u^n sin(tau u) du for n = 0..n_max."""
    tau = np.asarray(tau, dtype=float)
    out = {n: np.zeros_like(tau) for n in range(n_max + 1)}
    small = tau <= _SERIES_SWITCH
    if np.any(small):
        t = tau[small][:, None]
        s = np.sin(t * _LEGENDRE_U[None, :])
        for n in range(n_max + 1):
            out[n][small] = (s * _LEGENDRE_U[None, :] ** n) @ _LEGENDRE_W
    big = ~small
    if np.any(big):
        t = tau[big]
        sn = (1.0 - np.cos(t)) / t
        cn = np.sin(t) / t
        out[0][big] = sn
        for n in range(1, n_max + 1):
            sn, cn = -np.cos(t) / t + n / t * cn, np.sin(t) / t - n / t * sn
            out[n][big] = sn
    return out


# === Filter kernel ===
@dataclass(frozen=True)
class FilterKernel:
    """
    Args:
        g (float): gap parameter, > 0.
        profile (str): inside-gap profile id ("poly" or "quintic").
        t_max (float | None): Simpson horizon of the time quadrature (default 20 / g).
        nodes (int): Simpson intervals on [0, t_max] (even).
    """
    g: float
    profile: str = "poly"
    t_max: Optional[float] = None
    nodes: int = 20000

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError(f"filter gap parameter must be positive, got {self.g}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.nodes < 2 or self.nodes % 2:
            raise ValueError("Simpson node count must be even and >= 2")

    @property
    def horizon(self) -> float:
        return self.t_max if self.t_max is not None else 20.0 / self.g

    def _q(self, k: np.ndarray) -> np.ndarray:
        a, b, c = PROFILES[self.profile]
        k = np.asarray(k, dtype=float)
        x = k / self.g
        inside = (a * x + b * x ** 3 + c * x ** 5) / self.g
        with np.errstate(divide="ignore"):
            outside = np.where(k == 0, 0.0, 1.0 / np.where(k == 0, 1.0, k))
        return np.where(np.abs(k) >= self.g, outside, inside)

    def weight(self, k) -> np.ndarray:
        """int W_g(s) e^{iks} ds."""
        return 1j * self._q(k)

    def inverse_weight(self, k) -> np.ndarray:
        """K2(k) = -weight(k) / (i k), with its limit -q'(0) at k = 0."""
        a, b, c = PROFILES[self.profile]
        k = np.asarray(k, dtype=float)
        x = k / self.g
        inside = -(a + b * x ** 2 + c * x ** 4) / self.g ** 2
        with np.errstate(divide="ignore"):
            outside = -1.0 / np.where(k == 0, 1.0, k) ** 2
        return np.where(np.abs(k) >= self.g, outside, inside)

    def time_profile(self, s) -> np.ndarray:
        """W_g(s), odd, from the inverse Fourier transform of the weight."""
        a, b, c = PROFILES[self.profile]
        s = np.asarray(s, dtype=float)
        tau = self.g * np.abs(s)
        mom = _sine_moments(tau)
        si, _ = special.sici(tau)
        w = 0.5 - si / math.pi + (a * mom[1] + b * mom[3] + c * mom[5]) / math.pi
        return np.sign(s) * w

    def _simpson(self, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
        s = np.linspace(0.0, self.horizon, nodes + 1)
        h = s[1] - s[0]
        w = np.ones(nodes + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= h / 3.0
        ws = self.time_profile(s)
        ws[0] = 0.5
        return s, w * ws

    @lru_cache(maxsize=4096)
    def _tail(self, k: float) -> float:
        if k == 0.0:
            return 0.0
        value, _ = integrate.quad(lambda t: float(self.time_profile(t)), self.horizon, np.inf,
                                  weight="sin", wvar=k, limlst=200, epsabs=1e-14)
        return value

    def quadrature_weight(self, k, nodes: Optional[int] = None, tail: bool = True) -> np.ndarray:
        """Time-quadrature estimate of weight(k): 2i int_0^inf W(s) sin(ks) ds."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        mag = np.abs(k)
        uniq, inverse = np.unique(np.round(mag, 13), return_inverse=True)
        s, sw = self._simpson(nodes or self.nodes)
        chunks = np.array_split(uniq, len(uniq) // 256 + 1)
        body = np.concatenate([np.sin(c[:, None] * s[None, :]) @ sw for c in chunks])
        if tail:
            body = body + np.array([self._tail(float(x)) for x in uniq])
        values = 2j * body[inverse]
        return np.sign(k) * values

    def quadrature_inverse_weight(self, k, nodes: Optional[int] = None) -> np.ndarray:
        """Time-quadrature estimate of K2(k); k = 0 uses -2 int_0^inf s W(s) ds."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        out = np.empty(k.shape, dtype=complex)
        zero = np.abs(k) < TOL_DEGENERACY
        if np.any(~zero):
            out[~zero] = -self.quadrature_weight(k[~zero], nodes) / (1j * k[~zero])
        if np.any(zero):
            s, sw = self._simpson(nodes or self.nodes)
            body = float(np.dot(s, sw))
            tail, _ = integrate.quad(lambda t: t * float(self.time_profile(t)), self.horizon, np.inf,
                                     epsabs=1e-14, limit=400)
            out[zero] = -2.0 * (body + tail)
        return out


def filter_weight(kernel: FilterKernel, k: float) -> complex:
    return complex(kernel.weight(k))


# === Spectral maps ===
def _as_matrix(A) -> np.ndarray:
    return A.matrix if isinstance(A, FockOperator) else np.asarray(A)


def i_map(cache: SpectralCache, A, kernel: FilterKernel) -> FockOperator:
    """(I_H A)_mn = weight(E_m - E_n) A_mn in the eigenbasis of H."""
    a = cache.to_eigenbasis(_as_matrix(A))
    out = cache.from_eigenbasis(kernel.weight(cache.energy_differences) * a)
    n = int(round(math.log2(out.shape[0])))
    return FockOperator(out, frozenset(range(n)), n)


def inverse_apply(cache: SpectralCache, B, kernel: FilterKernel) -> np.ndarray:
    """Entrywise K2(E_m - E_n) B_mn in the eigenbasis of H."""
    b = cache.to_eigenbasis(_as_matrix(B))
    return cache.from_eigenbasis(kernel.inverse_weight(cache.energy_differences) * b)


@dataclass(frozen=True, eq=False)
class FlowSpec:
    """
    Input of the off-diagonal and inverse-Liouvillian maps.

    Args:
        psi (LiouvillianSpec): generator p * Phi + q * X_j.
        cache (SpectralCache): eigendecomposition of the full Hamiltonian.
        h0 (FockOperator): origin term of the Hamiltonian.
        alpha (ndarray | None): unitary U of the automorphism alpha(B) = U B U*.
        translation (MagneticTranslation | None): used for the T-compatibility check.
        origin (Site): anchor of h0, centre of the position coordinates.
        covariant (bool): transport the derivation along alpha as well,
            L_Psi -> alpha^{-1} L_Psi alpha, so the dressed maps equal
            alpha^{-1} applied to the undressed ones.
    """
    psi: LiouvillianSpec
    cache: SpectralCache
    h0: FockOperator
    alpha: Optional[np.ndarray] = None
    translation: Optional[MagneticTranslation] = None
    origin: Site = (0, 0)
    covariant: bool = False


def require_gap(cache: SpectralCache, kernel: FilterKernel) -> None:
    if cache.gap < kernel.g * (1.0 - 1e-12):
        raise GapError(
            f"spectral gap {cache.gap:.6g} is smaller than the filter parameter g={kernel.g:.6g}",
            {"gap": cache.gap, "g": kernel.g, "spectrum_excerpt": cache.excerpt()},
        )


def _flow_integrand(flow: FlowSpec) -> np.ndarray:
    """alpha i L_Psi alpha^{-1} h0; just i L_Psi h0 for a covariant flow."""
    U = None if flow.covariant else flow.alpha
    B = flow.h0
    if U is not None:
        B = FockOperator(U.conj().T @ B.matrix @ U, frozenset(range(B.n_modes)), B.n_modes)
    C = 1j * liouvillian_apply(flow.psi, B, center=flow.origin).matrix
    if U is not None:
        C = U @ C @ U.conj().T
    return C


def _undress(flow: FlowSpec, out: np.ndarray) -> np.ndarray:
    if flow.alpha is None:
        return out
    return flow.alpha.conj().T @ out @ flow.alpha


def _check_output(op: FockOperator, flow: FlowSpec, label: str) -> None:
    if not op.self_adjoint:
        logger.warning(f"⚠️ {label}: output not self-adjoint "
                       f"({np.max(np.abs(op.matrix - op.matrix.conj().T)):.2e})")
    if flow.translation is not None and not is_t_compatible(flow.translation, op):
        logger.warning(f"⚠️ {label}: output failed the T-compatibility test")


def od_map(flow: FlowSpec, kernel: FilterKernel) -> FockOperator:
    """(Psi^OD_alpha)_* = alpha^{-1} I_H(alpha i L_Psi alpha^{-1} h0)."""
    require_gap(flow.cache, kernel)
    out = _undress(flow, i_map(flow.cache, _flow_integrand(flow), kernel).matrix)
    result = FockOperator(out, frozenset(range(flow.h0.n_modes)), flow.h0.n_modes)
    _check_output(result, flow, "od_map")
    return result


def inverse_liouvillian(flow: FlowSpec, kernel: FilterKernel) -> FockOperator:
    """
    I(Psi)_*: entries of i L_Psi h0 times K2(E_m - E_n), dressed by alpha
    exactly as od_map, so that i[I(Psi)_*, alpha^{-1}(H)] = (Psi^OD_alpha)_*.
    """
    require_gap(flow.cache, kernel)
    out = _undress(flow, inverse_apply(flow.cache, _flow_integrand(flow), kernel))
    result = FockOperator(out, frozenset(range(flow.h0.n_modes)), flow.h0.n_modes)
    _check_output(result, flow, "inverse_liouvillian")
    return result


def time_quadrature_filter(cache: SpectralCache, A: Union[FockOperator, np.ndarray, FlowSpec],
                           kernel: FilterKernel, mode: str = "i_map",
                           check: bool = True) -> FockOperator:
    """
    Time-integral version of i_map / od_map / inverse_liouvillian.

    For "od" and "inverse", A is a FlowSpec; for "i_map" an operator. The
    convergence check compares against half the node count and raises
    QuadratureError above the plateau tolerance.
    """
    if mode not in ("i_map", "od", "inverse"):
        raise ValueError(f"unknown quadrature mode {mode!r}")
    if mode == "i_map":
        integrand = _as_matrix(A)
    else:
        if not isinstance(A, FlowSpec):
            raise ValueError(f"mode {mode!r} expects a FlowSpec")
        require_gap(cache, kernel)
        integrand = _flow_integrand(A)
    a = cache.to_eigenbasis(integrand)
    de = cache.energy_differences
    kernel_fn = kernel.quadrature_inverse_weight if mode == "inverse" else kernel.quadrature_weight
    flat = de.ravel()
    fine = kernel_fn(flat).reshape(de.shape)
    if check:
        coarse = kernel_fn(flat, nodes=kernel.nodes // 2 + (kernel.nodes // 2) % 2).reshape(de.shape)
        err = float(np.max(np.abs(fine - coarse) * np.abs(a), initial=0.0))
        if err > TOL_QUADRATURE_PLATEAU:
            raise QuadratureError(f"time quadrature not converged (estimated error {err:.2e})",
                                  {"nodes": kernel.nodes, "t_max": kernel.horizon})
        logger.debug(f"quadrature error estimate {err:.2e}")
    out = cache.from_eigenbasis(fine * a)
    if isinstance(A, FlowSpec):
        out = _undress(A, out)
    n = int(round(math.log2(out.shape[0])))
    return FockOperator(out, frozenset(range(n)), n)


# === Field derivation ===
@dataclass(frozen=True, eq=False)
class FieldDerivation:
    """
    Position derivation adapted to H: X^H with [X^H, H] = C on all entries
    between different energies, C being the torus sum of the local rule
    L_{X_j} applied to every term around its anchor.
    """
    direction: int
    current: np.ndarray
    position: np.ndarray

    def apply(self, A) -> FockOperator:
        a = _as_matrix(A)
        n = int(round(math.log2(a.shape[0])))
        return FockOperator(self.position @ a - a @ self.position, frozenset(range(n)), n)


def field_derivation(H: Interaction, cache: SpectralCache, j: int) -> FieldDerivation:
    lat = H.lattice
    current = np.zeros((2 ** lat.n_modes, 2 ** lat.n_modes), dtype=complex)
    for t in H.terms:
        current += position_commutator(lat, j, t.operator, center=t.anchor).matrix
    c = cache.to_eigenbasis(current)
    diff = -cache.energy_differences
    mask = np.abs(diff) > TOL_DEGENERACY
    x = np.zeros_like(c)
    x[mask] = c[mask] / diff[mask]
    return FieldDerivation(j, current, cache.from_eigenbasis(x))
