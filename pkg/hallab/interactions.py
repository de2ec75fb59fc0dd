# hallab/interactions.py

"""
Interactions on the torus: maps from finite site-sets to local self-adjoint,
gauge-invariant operators.

Each stored term remembers the shift (anchor) of the translate it belongs to,
so the origin term Phi_0 is the sum of the terms anchored at (0, 0). User-built
terms get the centroid shift s(M); periodize() sets the anchors explicitly,
which keeps boxes that cover the whole torus apart.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from hallab.exceptions import CompatibilityError, GaugeError, SupportError
from hallab.fock import (
    FockOperator,
    Site,
    State,
    TorusLattice,
    annihilator,
    conditional_expectation,
    conjugate_sparse,
    hopping_op,
    mode_permutation_unitary,
    number_diagonal,
    number_op,
    operator_norm,
)
from hallab.utils.log import get_logger
from hallab.utils.settings import TOL_EXACT, TOL_FLOW, TOL_IDENTITY

logger = get_logger(__name__)


# === Magnetic translations ===
@dataclass(frozen=True)
class MagneticTranslation:
    """
    T_gamma a_y = exp(-i b y_1 gamma_2) a_{y + gamma} on the torus of `lattice`.
    """
    lattice: TorusLattice

    @property
    def b(self) -> float:
        return self.lattice.b

    def unitary(self, gamma: Sequence[int]):
        lat = self.lattice
        g = (int(gamma[0]) % lat.L, int(gamma[1]) % lat.L)
        perm = tuple(lat.index(lat.shift(y, g)) for y in lat.sites())
        phases = tuple(complex(np.exp(1j * self.b * y[0] * g[1])) for y in lat.sites())
        return mode_permutation_unitary(lat.n_modes, perm, phases)

    def shift_modes(self, modes: Iterable[int], gamma: Sequence[int]) -> frozenset:
        lat = self.lattice
        return frozenset(lat.index(lat.shift(lat.site(i), gamma)) for i in modes)

    def apply(self, gamma: Sequence[int], A: FockOperator) -> FockOperator:
        if gamma[0] % self.lattice.L == 0 and gamma[1] % self.lattice.L == 0:
            return A
        m = conjugate_sparse(self.unitary(gamma), A.matrix)
        return FockOperator(m, self.shift_modes(A.support, gamma), A.n_modes)

    def apply_matrix(self, gamma: Sequence[int], m: np.ndarray) -> np.ndarray:
        return conjugate_sparse(self.unitary(gamma), m)

    def same_as(self, other: Optional["MagneticTranslation"]) -> bool:
        return other is not None and other.lattice.L == self.lattice.L and abs(other.b - self.b) <= TOL_EXACT


def magnetic_translate(T: MagneticTranslation, gamma: Sequence[int], A: FockOperator) -> FockOperator:
    """Conjugation of A by the magnetic translation unitary for the shift gamma."""
    return T.apply(gamma, A)


def is_t_compatible(T: MagneticTranslation, A: FockOperator, tol: float = TOL_IDENTITY) -> bool:
    """Composition test T_g2 T_g1 A = T_{g1+g2} A on the generating shifts."""
    pairs = [((1, 0), (0, 1)), ((0, 1), (1, 0)), ((1, 1), (1, 0))]
    scale = max(1.0, A.norm)
    for g1, g2 in pairs:
        lhs = T.apply(g2, T.apply(g1, A)).matrix
        rhs = T.apply((g1[0] + g2[0], g1[1] + g2[1]), A).matrix
        if np.max(np.abs(lhs - rhs)) > tol * scale:
            return False
    return True


def torus_sum(T: MagneticTranslation, A: FockOperator) -> FockOperator:
    """sum_gamma T_gamma(A) over all torus shifts."""
    total = np.zeros_like(A.matrix)
    for gamma in T.lattice.shifts():
        total += T.apply(gamma, A).matrix
    return FockOperator(total, frozenset(range(A.n_modes)), A.n_modes)


# === Interaction ===
@dataclass(frozen=True, eq=False)
class Term:
    support: frozenset
    anchor: Site
    operator: FockOperator


def _term_key(item) -> Tuple:
    (support, anchor), _ = item
    return anchor, tuple(sorted(support))


class Interaction:
    """
    Finite family of local terms Phi(M), each tagged with its anchor shift.

    Args:
        lattice (TorusLattice): the torus.
        terms (Iterable[Term]): terms; equal (support, anchor) pairs are summed.
        translation (MagneticTranslation | None): translation the family is periodic under.
        name (str): label used in logs and summaries.
    """

    def __init__(self, lattice: TorusLattice, terms: Iterable[Term] = (),
                 translation: Optional[MagneticTranslation] = None, name: str = "interaction"):
        self.lattice = lattice
        self.translation = translation
        self.name = name
        merged: Dict[Tuple[frozenset, Site], np.ndarray] = {}
        for t in terms:
            key = (frozenset(t.support), tuple(t.anchor))
            merged[key] = merged[key] + t.operator.matrix if key in merged else t.operator.matrix.copy()
        n = lattice.n_modes
        self.terms: Tuple[Term, ...] = tuple(
            Term(s, a, FockOperator(m, s, n))
            for (s, a), m in sorted(merged.items(), key=_term_key)
            if np.any(m)
        )

    def __len__(self) -> int:
        return len(self.terms)

    def __repr__(self) -> str:
        return f"Interaction({self.name!r}, L={self.lattice.L}, terms={len(self.terms)})"

    @property
    def n_modes(self) -> int:
        return self.lattice.n_modes

    @cached_property
    def grouped(self) -> Dict[frozenset, np.ndarray]:
        """Phi(M) as a function of the site set (anchors summed)."""
        out: Dict[frozenset, np.ndarray] = {}
        for t in self.terms:
            out[t.support] = out[t.support] + t.operator.matrix if t.support in out else t.operator.matrix.copy()
        return out

    @cached_property
    def total(self) -> FockOperator:
        """Summed full-space operator."""
        m = np.zeros((2 ** self.n_modes, 2 ** self.n_modes), dtype=complex)
        for t in self.terms:
            m += t.operator.matrix
        return FockOperator(m, frozenset(range(self.n_modes)), self.n_modes)

    def origin_term(self, origin: Site = (0, 0)) -> FockOperator:
        """Sum of the terms anchored at `origin`."""
        m = np.zeros((2 ** self.n_modes, 2 ** self.n_modes), dtype=complex)
        support: frozenset = frozenset()
        for t in self.terms:
            if tuple(t.anchor) == tuple(origin):
                m += t.operator.matrix
                support |= t.support
        return FockOperator(m, support, self.n_modes)

    def scaled(self, c: complex) -> "Interaction":
        return Interaction(self.lattice, (Term(t.support, t.anchor, c * t.operator) for t in self.terms),
                           self.translation, self.name)

    def map_terms(self, fn: Callable[[Term], FockOperator], name: Optional[str] = None) -> "Interaction":
        return Interaction(self.lattice, (Term(t.support, t.anchor, fn(t)) for t in self.terms),
                           self.translation, name or self.name)

    def _joined_translation(self, other: "Interaction") -> Optional[MagneticTranslation]:
        if self.translation is None:
            return other.translation
        if other.translation is None or self.translation.same_as(other.translation):
            return self.translation
        raise CompatibilityError("interactions are periodic under different translations")

    def __add__(self, other: "Interaction") -> "Interaction":
        return Interaction(self.lattice, self.terms + other.terms, self._joined_translation(other),
                           f"{self.name}+{other.name}")

    def __sub__(self, other: "Interaction") -> "Interaction":
        return self + other.scaled(-1.0)

    def is_periodic(self, tol: float = TOL_IDENTITY) -> bool:
        """T_gamma Phi(M, a) = Phi(M + gamma, a + gamma) for the generating shifts."""
        if self.translation is None:
            return False
        lat = self.lattice
        lookup = {(t.support, tuple(t.anchor)): t.operator for t in self.terms}
        for gamma in ((1, 0), (0, 1)):
            for t in self.terms:
                key = (self.translation.shift_modes(t.support, gamma), lat.shift(t.anchor, gamma))
                partner = lookup.get(key)
                moved = self.translation.apply(gamma, t.operator).matrix
                if partner is None:
                    if np.max(np.abs(moved)) > tol:
                        return False
                elif np.max(np.abs(moved - partner.matrix)) > tol * max(1.0, t.operator.norm):
                    return False
        return True

    def validate(self) -> None:
        """Each term self-adjoint, gauge-invariant and supported in its site set."""
        for t in self.terms:
            if not t.operator.self_adjoint:
                raise CompatibilityError(f"term on {sorted(t.support)} is not self-adjoint")
            if not t.operator.gauge_invariant:
                raise GaugeError(f"term on {sorted(t.support)} is not gauge invariant")

    def describe(self) -> List[Dict[str, Any]]:
        lat = self.lattice
        return [
            {"sites": [list(lat.site(i)) for i in sorted(t.support)], "anchor": list(t.anchor),
             "norm": t.operator.norm}
            for t in self.terms
        ]


# === Builders ===
def number_interaction(lat: TorusLattice, translation: Optional[MagneticTranslation] = None) -> Interaction:
    """N = sum_x n_x as singleton terms."""
    T = translation or MagneticTranslation(lat)
    terms = [Term(frozenset([lat.index(x)]), x, number_op(lat, x)) for x in lat.sites()]
    return Interaction(lat, terms, T, "N")


_FACTOR = re.compile(r"^(n|cd|c)(\d+)$")


def _parse_expression(lat: TorusLattice, sites: Sequence[Site], expr: str) -> np.ndarray:
    """
    Named-operator expression on the record's sites, e.g. "0.5*cd0*c1 + h.c." or "n0*n1".
    Indices refer to positions in the record's site list; terms are joined by ' + '.
    """
    n = lat.n_modes
    modes = [lat.index(s) for s in sites]
    total = np.zeros((2 ** n, 2 ** n), dtype=complex)
    conj = False
    for chunk in re.split(r"\s+\+\s+", expr.strip()):
        chunk = chunk.strip()
        if chunk.lower() in ("h.c.", "hc"):
            conj = True
            continue
        coeff: complex = 1.0
        m = np.eye(2 ** n, dtype=complex)
        for factor in chunk.split("*"):
            factor = factor.strip()
            hit = _FACTOR.match(factor)
            if hit is None:
                coeff *= complex(factor.replace("i", "j")) if "i" in factor else complex(factor)
                continue
            kind, pos = hit.group(1), int(hit.group(2))
            if pos >= len(modes):
                raise SupportError(f"operator {factor!r} refers to site #{pos}, record has {len(modes)}")
            a = annihilator(n, modes[pos])
            op = {"n": a.getH() @ a, "cd": a.getH(), "c": a}[kind]
            m = m @ op.toarray()
        total += coeff * m
    if conj:
        total = total + total.conj().T
    return total


def interaction_from_records(lat: TorusLattice, records: Sequence[Dict[str, Any]],
                             translation: Optional[MagneticTranslation] = None,
                             name: str = "V") -> Interaction:
    """
    Build a T-periodic interaction from origin-cell records
    {"sites": [[x1, x2], ...], "expr": "..."}; every record is translated over the torus.
    """
    lat.require_fock()
    T = translation or MagneticTranslation(lat)
    terms: List[Term] = []
    for rec in records:
        sites = [lat.check_site(s) for s in rec["sites"]]
        support = frozenset(lat.index(s) for s in sites)
        op = FockOperator(_parse_expression(lat, sites, rec["expr"]), support, lat.n_modes)
        if not op.gauge_invariant:
            raise GaugeError(f"record {rec!r} is not gauge invariant")
        anchor = lat.centroid_anchor(support)
        for gamma in lat.shifts():
            terms.append(Term(T.shift_modes(support, gamma), lat.shift(anchor, gamma), T.apply(gamma, op)))
    return Interaction(lat, terms, T, name)


# === Norms ===
def interaction_norm(phi: Interaction, nu: int) -> float:
    """max_x sum_{M containing x} (1 + diam M)^nu ||Phi(M)||."""
    lat = phi.lattice
    per_site = np.zeros(lat.n_modes)
    for support, m in phi.grouped.items():
        w = (1 + lat.diameter(support)) ** nu * operator_norm(m)
        for i in support:
            per_site[i] += w
    return float(per_site.max()) if len(per_site) else 0.0


# === Periodization ===
def periodize(A: FockOperator, T: MagneticTranslation) -> Interaction:
    """
    T-periodic interaction with origin term A from the telescoping boxes
    E_{Lambda_0} A, E_{Lambda_k} A - E_{Lambda_{k-1}} A, translated over the torus.
    """
    if not (A.self_adjoint and A.gauge_invariant):
        raise CompatibilityError("periodize needs a self-adjoint gauge-invariant operator")
    if not is_t_compatible(T, A):
        raise CompatibilityError("operator is not T-compatible")
    lat = T.lattice
    origin = (0, 0)
    pieces: List[Tuple[frozenset, np.ndarray]] = []
    previous = np.zeros_like(A.matrix)
    for k in range(lat.max_radius + 1):
        box = lat.box(origin, k)
        current = conditional_expectation(box, A).matrix
        delta = current - previous
        if operator_norm(delta) > TOL_EXACT:
            pieces.append((box, delta))
        previous = current
        if A.support <= box:
            break
    terms = [
        Term(T.shift_modes(box, gamma), gamma, T.apply(gamma, FockOperator(delta, box, lat.n_modes)))
        for gamma in lat.shifts()
        for box, delta in pieces
    ]
    return Interaction(lat, terms, T, "periodized")


def origin_term(phi: Interaction) -> FockOperator:
    return phi.origin_term()


# === Liouvillians ===
@dataclass(frozen=True, eq=False)
class LiouvillianSpec:
    """Generator p * Phi + q * X_j (j = 1 or 2)."""
    p: float = 0.0
    phi: Optional[Interaction] = None
    q: float = 0.0
    j: int = 1
    lattice: Optional[TorusLattice] = None

    def geometry(self, A: FockOperator) -> TorusLattice:
        if self.lattice is not None:
            return self.lattice
        if self.phi is not None:
            return self.phi.lattice
        L = int(round(np.sqrt(A.n_modes)))
        return TorusLattice(L, 0.0, magnetic_pbc=False)


def position_weights(lat: TorusLattice, A: FockOperator, j: int, center: Optional[Site] = None) -> np.ndarray:
    """
    Coordinate x_j of every mode in supp(A): minimal image around `center`, or,
    without a center, relative to the floor centroid of the (non-wrapping) support.
    """
    if j not in (1, 2):
        raise ValueError(f"direction must be 1 or 2, got {j}")
    weights = np.zeros(lat.n_modes)
    modes = sorted(A.support)
    if not modes:
        return weights
    if center is not None:
        for i in modes:
            weights[i] = lat.displacement(lat.site(i), center)[j - 1]
        return weights
    pts = lat.unwrap(modes)
    coords = np.array([p[j - 1] for p in pts])
    for axis in (0, 1):
        side = max(p[axis] for p in pts) - min(p[axis] for p in pts) + 1
        if side >= lat.L:
            raise SupportError(f"support {modes} wraps the torus", {"support": modes})
    centroid = int(np.floor(coords.sum() / len(coords)))
    for i, c in zip(modes, coords):
        weights[i] = c - centroid
    return weights


def position_commutator(lat: TorusLattice, j: int, A: FockOperator, center: Optional[Site] = None) -> FockOperator:
    """L_{X_j} A = sum_{x in supp A} x_j [n_x, A]."""
    if not A.gauge_invariant:
        raise GaugeError("L_X is applied to gauge-invariant operators only")
    d = number_diagonal(lat.n_modes, position_weights(lat, A, j, center))
    return FockOperator((d[:, None] - d[None, :]) * A.matrix, A.support, A.n_modes)


def liouvillian_apply(spec: LiouvillianSpec, A: FockOperator, center: Optional[Site] = None) -> FockOperator:
    """
    p * sum_M [Phi(M), A] + q * sum_{x in S} x_j [n_x, A].

    Only terms overlapping supp(A) are summed.
    """
    if not A.gauge_invariant:
        raise GaugeError("Liouvillians act on gauge-invariant operators")
    out = np.zeros_like(A.matrix)
    if spec.p != 0.0 and spec.phi is not None:
        for support, m in spec.phi.grouped.items():
            if support & A.support:
                out += spec.p * (m @ A.matrix - A.matrix @ m)
    if spec.q != 0.0:
        out += spec.q * position_commutator(spec.geometry(A), spec.j, A, center).matrix
    return FockOperator(out, A.support, A.n_modes)


def commutator_interaction(phi: Interaction, psi: Interaction, factor: complex = 1j) -> Interaction:
    """
    factor * [Phi, Psi] with terms sum_{M1 u M2 = M} [Phi(M1), Psi(M2)], anchored at the Phi term.
    The default factor i gives self-adjoint terms.
    """
    if phi.translation is None or not phi.translation.same_as(psi.translation):
        raise CompatibilityError("commutator needs two interactions periodic under the same translation")
    terms = []
    for t1 in phi.terms:
        for t2 in psi.terms:
            if t1.support & t2.support:
                c = factor * t1.operator.commutator(t2.operator)
                terms.append(Term(t1.support | t2.support, t1.anchor, c))
    return Interaction(phi.lattice, terms, phi.translation, f"[{phi.name},{psi.name}]")


def position_commutator_interaction(psi: Interaction, j: int, factor: complex = 1j) -> Interaction:
    """factor * [X_j, Psi], term by term around each term's anchor."""
    lat = psi.lattice
    return psi.map_terms(lambda t: factor * position_commutator(lat, j, t.operator, center=t.anchor),
                         name=f"[X{j},{psi.name}]")


# === Per-volume expectations ===
def check_translation_invariant(state: State, T: MagneticTranslation, tol: float = TOL_FLOW) -> None:
    """Compare omega(T_gamma B) with omega(B) for a few local observables."""
    lat = T.lattice
    probes = [number_op(lat, (0, 0))]
    if lat.L > 1:
        hop = hopping_op(lat, (1 % lat.L, 0), (0, 0))
        probes.append(hop + hop.dagger())
        probes.append(number_op(lat, (0, 0)) @ number_op(lat, (0, 1 % lat.L)))
    for B in probes:
        ref = state.expect(B)
        for gamma in ((1, 0), (0, 1)):
            if abs(state.expect(T.apply(gamma, B)) - ref) > tol:
                raise CompatibilityError("state is not invariant under the magnetic translations",
                                         {"shift": list(gamma)})


def volume_average(state: State, phi: Interaction) -> float:
    """(1/|Lambda|) sum_M omega(Phi(M)) over the full torus."""
    return float(np.real(state.expect(phi.total))) / phi.lattice.n_modes


def per_volume_expectation(state: State, phi: Interaction) -> float:
    """omega(Phi_0) for a periodic state and a periodic interaction."""
    if phi.translation is None:
        raise CompatibilityError("per-volume expectation needs a periodic interaction")
    check_translation_invariant(state, phi.translation)
    value = state.expect(phi.origin_term())
    avg = volume_average(state, phi)
    if abs(np.real(value) - avg) > TOL_IDENTITY * max(1.0, abs(avg)):
        logger.warning(f"⚠️ origin-term and volume-average routes differ: {np.real(value):.3e} vs {avg:.3e}")
    return float(np.real(value))
