# hallab/fock.py

"""
Finite CAR algebra on an L x L torus.

Modes are the lattice sites in lexicographic order, mode(x1, x2) = x1 * L + x2.
Fermionic operators are built by a Jordan-Wigner string with mode 0 as the
leftmost tensor factor, so the Fock basis state with occupied modes
o1 < o2 < ... < ok is exactly a*_{o1} a*_{o2} ... a*_{ok} |0>.

Besides the operators themselves the module provides the tracial state, the
conditional expectations E_M (normalized partial traces), decay norms and the
State container used by the higher modules.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy import linalg

from hallab.exceptions import FluxQuantizationError, GaugeError, LatticeSizeError, SiteError
from hallab.utils.log import get_logger
from hallab.utils.settings import FLUX_TOL, MAX_MODES, TOL_EXACT

logger = get_logger(__name__)

Site = Tuple[int, int]
Matrix = Union[np.ndarray, "FockOperator"]


# === Lattice ===
def flux_quantized(b: float, L: int) -> bool:
    """True if b * L is an integer multiple of 2 pi (within FLUX_TOL)."""
    r = b * L / (2.0 * math.pi)
    return abs(r - round(r)) <= FLUX_TOL * max(1.0, abs(r))


@dataclass(frozen=True)
class TorusLattice:
    """
    L x L torus with flux b per plaquette.

    Args:
        L (int): side length.
        b (float): flux per plaquette in radians.
        magnetic_pbc (bool): magnetic periodic boundary conditions; requires b * L in 2 pi Z.
    """
    L: int
    b: float = 0.0
    magnetic_pbc: bool = True

    def __post_init__(self):
        if not isinstance(self.L, (int, np.integer)) or self.L < 1:
            raise LatticeSizeError(f"side length must be a positive integer, got {self.L!r}")
        if self.magnetic_pbc and not flux_quantized(self.b, self.L):
            raise FluxQuantizationError(
                f"flux b={self.b:.12g} is not quantized on an L={self.L} torus (b*L must lie in 2*pi*Z)",
                {"b": self.b, "L": self.L},
            )

    @property
    def n_modes(self) -> int:
        return self.L * self.L

    @property
    def dim(self) -> int:
        return 2 ** self.n_modes

    @property
    def max_radius(self) -> int:
        return self.L // 2

    def check_site(self, x: Sequence[int]) -> Site:
        if len(x) != 2 or not all(0 <= int(c) < self.L for c in x):
            raise SiteError(f"site {tuple(x)} outside the {self.L}x{self.L} torus", {"site": list(x)})
        return int(x[0]), int(x[1])

    def index(self, x: Sequence[int]) -> int:
        x1, x2 = self.check_site(x)
        return x1 * self.L + x2

    def site(self, mode: int) -> Site:
        if not 0 <= mode < self.n_modes:
            raise SiteError(f"mode {mode} outside 0..{self.n_modes - 1}", {"mode": mode})
        return divmod(int(mode), self.L)

    def sites(self) -> List[Site]:
        return [self.site(i) for i in range(self.n_modes)]

    def shift(self, x: Sequence[int], gamma: Sequence[int]) -> Site:
        return (x[0] + gamma[0]) % self.L, (x[1] + gamma[1]) % self.L

    def shifts(self) -> List[Site]:
        """All torus shifts gamma, in mode order."""
        return self.sites()

    def minimal_image(self, d: int) -> int:
        """Representative of d mod L in (-L/2, L/2]."""
        r = int(d) % self.L
        if r > self.L // 2:
            r -= self.L
        return r

    def displacement(self, x: Sequence[int], y: Sequence[int]) -> Site:
        return self.minimal_image(x[0] - y[0]), self.minimal_image(x[1] - y[1])

    def distance(self, x: Sequence[int], y: Sequence[int]) -> int:
        d1, d2 = self.displacement(x, y)
        return max(abs(d1), abs(d2))

    def box(self, center: Sequence[int], k: int) -> FrozenSet[int]:
        """Modes of Lambda_k around center (minimal-image sup distance <= k)."""
        return frozenset(i for i, x in enumerate(self.sites()) if self.distance(x, center) <= k)

    def diameter(self, modes: Iterable[int]) -> int:
        pts = [self.site(i) for i in modes]
        if len(pts) < 2:
            return 0
        return min(self.L - 1, max(self.distance(p, q) for p, q in itertools.combinations(pts, 2)))

    def unwrap(self, modes: Iterable[int]) -> List[Site]:
        """Coordinates of the sites relative to the first (sorted) one, minimal image."""
        pts = [self.site(i) for i in sorted(modes)]
        if not pts:
            return []
        ref = pts[0]
        out = []
        for p in pts:
            d1, d2 = self.displacement(p, ref)
            out.append((ref[0] + d1, ref[1] + d2))
        return out

    def centroid_anchor(self, modes: Iterable[int]) -> Site:
        """Shift s(M): floor of the minimal-image centroid of M, wrapped onto the torus."""
        pts = self.unwrap(modes)
        if not pts:
            return 0, 0
        n = len(pts)
        c1 = sum(p[0] for p in pts) // n
        c2 = sum(p[1] for p in pts) // n
        return c1 % self.L, c2 % self.L

    def require_fock(self) -> None:
        if self.n_modes > MAX_MODES:
            raise LatticeSizeError(
                f"L={self.L} gives {self.n_modes} modes; full Fock space is capped at {MAX_MODES}",
                {"L": self.L, "max_modes": MAX_MODES},
            )


# === Jordan-Wigner operators ===
_A = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex))
_Z = sp.csr_matrix(np.diag([1.0, -1.0]).astype(complex))


@lru_cache(maxsize=None)
def annihilator(n_modes: int, mode: int) -> sp.csr_matrix:
    """Sparse a_mode on n_modes modes."""
    if not 0 <= mode < n_modes:
        raise SiteError(f"mode {mode} outside 0..{n_modes - 1}", {"mode": mode})
    left = sp.identity(1, dtype=complex, format="csr")
    for _ in range(mode):
        left = sp.kron(left, _Z, format="csr")
    right = sp.identity(2 ** (n_modes - mode - 1), dtype=complex, format="csr")
    return sp.kron(sp.kron(left, _A, format="csr"), right, format="csr")


@lru_cache(maxsize=None)
def occupations(n_modes: int) -> np.ndarray:
    """(2**n, n) 0/1 array; row s holds the occupation of each mode in basis state s."""
    s = np.arange(2 ** n_modes)[:, None]
    shifts = np.arange(n_modes - 1, -1, -1)[None, :]
    occ = (s >> shifts) & 1
    occ.setflags(write=False)
    return occ


@lru_cache(maxsize=None)
def particle_numbers(n_modes: int) -> np.ndarray:
    counts = occupations(n_modes).sum(axis=1)
    counts.setflags(write=False)
    return counts


def number_diagonal(n_modes: int, weights: Sequence[float]) -> np.ndarray:
    """Diagonal of sum_x weights[x] n_x in the Fock basis."""
    return occupations(n_modes) @ np.asarray(weights, dtype=float)


# === FockOperator ===
@dataclass(frozen=True, eq=False)
class FockOperator:
    """
    Dense operator on the Fock space of n_modes modes with a declared support.

    The self_adjoint and gauge_invariant flags are computed from the matrix.
    """
    matrix: np.ndarray
    support: FrozenSet[int]
    n_modes: int

    @classmethod
    def from_matrix(cls, matrix, support: Optional[Iterable[int]] = None, n_modes: Optional[int] = None) -> "FockOperator":
        m = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=complex)
        if n_modes is None:
            n_modes = int(round(math.log2(m.shape[0])))
        if m.shape != (2 ** n_modes, 2 ** n_modes):
            raise SiteError(f"matrix shape {m.shape} does not match {n_modes} modes")
        supp = frozenset(range(n_modes)) if support is None else frozenset(int(i) for i in support)
        return cls(m, supp, n_modes)

    @classmethod
    def identity(cls, n_modes: int) -> "FockOperator":
        return cls(np.eye(2 ** n_modes, dtype=complex), frozenset(), n_modes)

    @classmethod
    def zero(cls, n_modes: int) -> "FockOperator":
        return cls(np.zeros((2 ** n_modes, 2 ** n_modes), dtype=complex), frozenset(), n_modes)

    @cached_property
    def self_adjoint(self) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= TOL_EXACT * max(1.0, self.norm))

    @cached_property
    def gauge_invariant(self) -> bool:
        return is_gauge_invariant(self.matrix, self.n_modes)

    @cached_property
    def norm(self) -> float:
        """Operator norm (largest singular value)."""
        return operator_norm(self.matrix)

    def dagger(self) -> "FockOperator":
        return FockOperator(self.matrix.conj().T.copy(), self.support, self.n_modes)

    def commutator(self, other: "FockOperator") -> "FockOperator":
        return FockOperator(self.matrix @ other.matrix - other.matrix @ self.matrix,
                            self.support | other.support, self.n_modes)

    def anticommutator(self, other: "FockOperator") -> "FockOperator":
        return FockOperator(self.matrix @ other.matrix + other.matrix @ self.matrix,
                            self.support | other.support, self.n_modes)

    def __add__(self, other: "FockOperator") -> "FockOperator":
        return FockOperator(self.matrix + other.matrix, self.support | other.support, self.n_modes)

    def __sub__(self, other: "FockOperator") -> "FockOperator":
        return FockOperator(self.matrix - other.matrix, self.support | other.support, self.n_modes)

    def __neg__(self) -> "FockOperator":
        return FockOperator(-self.matrix, self.support, self.n_modes)

    def __mul__(self, c: complex) -> "FockOperator":
        return FockOperator(c * self.matrix, self.support, self.n_modes)

    __rmul__ = __mul__

    def __matmul__(self, other: "FockOperator") -> "FockOperator":
        return FockOperator(self.matrix @ other.matrix, self.support | other.support, self.n_modes)

    def with_support(self, support: Iterable[int]) -> "FockOperator":
        return FockOperator(self.matrix, frozenset(support), self.n_modes)


def as_matrix(A: Matrix) -> np.ndarray:
    return A.matrix if isinstance(A, FockOperator) else np.asarray(A)


def operator_norm(matrix: np.ndarray) -> float:
    if matrix.size == 0 or not np.any(matrix):
        return 0.0
    return float(linalg.norm(matrix, 2))


def is_gauge_invariant(matrix: np.ndarray, n_modes: int, tol: float = TOL_EXACT) -> bool:
    """A commutes with N  <=>  no entry connects basis states of different particle number."""
    N = particle_numbers(n_modes)
    mask = N[:, None] != N[None, :]
    if not np.any(mask):
        return True
    scale = max(1.0, float(np.max(np.abs(matrix))))
    return bool(np.max(np.abs(matrix[mask])) <= tol * scale)


def gauge_project(matrix: np.ndarray, n_modes: int) -> np.ndarray:
    """Sum over N of P_N A P_N."""
    N = particle_numbers(n_modes)
    return np.where(N[:, None] == N[None, :], matrix, 0.0)


# === Elementary operators ===
def annihilation_op(lat: TorusLattice, x: Sequence[int]) -> FockOperator:
    lat.require_fock()
    i = lat.index(x)
    return FockOperator(annihilator(lat.n_modes, i).toarray(), frozenset([i]), lat.n_modes)


def creation_op(lat: TorusLattice, x: Sequence[int]) -> FockOperator:
    """a*_x with the Jordan-Wigner sign string in lexicographic mode order."""
    lat.require_fock()
    i = lat.index(x)
    return FockOperator(annihilator(lat.n_modes, i).getH().toarray(), frozenset([i]), lat.n_modes)


def number_op(lat: TorusLattice, x: Sequence[int]) -> FockOperator:
    lat.require_fock()
    i = lat.index(x)
    diag = occupations(lat.n_modes)[:, i].astype(complex)
    return FockOperator(np.diag(diag), frozenset([i]), lat.n_modes)


def total_number_op(lat: TorusLattice) -> FockOperator:
    lat.require_fock()
    return FockOperator(np.diag(particle_numbers(lat.n_modes).astype(complex)),
                        frozenset(range(lat.n_modes)), lat.n_modes)


def hopping_op(lat: TorusLattice, x: Sequence[int], y: Sequence[int], t: complex = 1.0) -> FockOperator:
    """t a*_x a_y (not symmetrized)."""
    lat.require_fock()
    i, j = lat.index(x), lat.index(y)
    n = lat.n_modes
    m = t * (annihilator(n, i).getH() @ annihilator(n, j))
    return FockOperator(m.toarray(), frozenset([i, j]), n)


def tracial_expectation(A: Matrix) -> complex:
    """Normalized trace."""
    m = as_matrix(A)
    return complex(np.trace(m) / m.shape[0])


# === Mode permutations ===
@lru_cache(maxsize=256)
def mode_permutation_unitary(n_modes: int, perm: Tuple[int, ...],
                             phases: Optional[Tuple[complex, ...]] = None) -> sp.csr_matrix:
    """
    Fock unitary U with U a*_i U* = phases[i] a*_{perm[i]}.

    Basis state a*_{o1}...a*_{ok}|0> is mapped to (prod phases) * sign * |sorted images>,
    sign being the parity of the sort.
    """
    if sorted(perm) != list(range(n_modes)):
        raise SiteError(f"{perm} is not a permutation of {n_modes} modes")
    ph = np.ones(n_modes, dtype=complex) if phases is None else np.asarray(phases, dtype=complex)
    dim = 2 ** n_modes
    occ = occupations(n_modes)
    rows = np.empty(dim, dtype=np.int64)
    vals = np.empty(dim, dtype=complex)
    for s in range(dim):
        occupied = np.flatnonzero(occ[s])
        images = [perm[o] for o in occupied]
        inversions = sum(1 for a, b in itertools.combinations(images, 2) if a > b)
        target = sum(1 << (n_modes - 1 - m) for m in images)
        rows[s] = target
        vals[s] = (-1) ** inversions * np.prod(ph[occupied]) if len(occupied) else 1.0
    return sp.csr_matrix((vals, (rows, np.arange(dim))), shape=(dim, dim))


def conjugate_sparse(U: sp.spmatrix, m: np.ndarray) -> np.ndarray:
    """U m U* for a sparse unitary U and a dense m."""
    return np.asarray(U.conj() @ np.asarray(U @ m).T).T


def _front_permutation(n_modes: int, modes: Sequence[int]) -> Tuple[sp.csr_matrix, int]:
    """U mapping new mode i to modes[i] (chosen modes first, the rest after, both sorted)."""
    first = sorted(modes)
    rest = [i for i in range(n_modes) if i not in set(first)]
    return mode_permutation_unitary(n_modes, tuple(first + rest)), len(first)


def embed_local(n_modes: int, modes: Sequence[int], local: np.ndarray) -> FockOperator:
    """
    Place an even operator given on the modes `modes` (local JW ordering, sorted)
    into the full Fock space.
    """
    U, k = _front_permutation(n_modes, modes)
    full = np.kron(local, np.eye(2 ** (n_modes - k)))
    matrix = conjugate_sparse(U, full)
    return FockOperator(matrix, frozenset(modes), n_modes)


# === Conditional expectations ===
def conditional_expectation(M: Iterable[int], A: FockOperator) -> FockOperator:
    """
    E_M(A) for gauge-invariant A: normalized partial trace over the modes outside M,
    tensored with the identity.

    Args:
        M (Iterable[int]): mode set.
        A (FockOperator): gauge-invariant operator.
    Returns:
        FockOperator: supported in M intersected with supp(A).
    """
    if not A.gauge_invariant:
        raise GaugeError("conditional expectation is only defined on gauge-invariant operators")
    n = A.n_modes
    M = frozenset(int(i) for i in M)
    if A.support <= M:
        return A
    if not M:
        return FockOperator(tracial_expectation(A) * np.eye(2 ** n, dtype=complex), frozenset(), n)
    U, k = _front_permutation(n, M)
    rotated = conjugate_sparse(U.getH().tocsr(), A.matrix)
    r = n - k
    blocks = rotated.reshape(2 ** k, 2 ** r, 2 ** k, 2 ** r)
    reduced = np.einsum("ajbj->ab", blocks) / 2 ** r
    back = np.kron(reduced, np.eye(2 ** r))
    result = conjugate_sparse(U, back)
    return FockOperator(result, M & A.support, n)


def decay_norm(A: FockOperator, nu: int, center: Sequence[int], lat: TorusLattice) -> float:
    """
    ||A||_nu = ||A|| + max_k (1 + k)^nu ||A - E_{Lambda_k} A||, k = 0 .. floor(L/2).
    """
    if not A.gauge_invariant:
        raise GaugeError("decay norms are defined on gauge-invariant operators")
    tail = 0.0
    for k in range(lat.max_radius + 1):
        box = lat.box(center, k)
        if A.support <= box:
            break
        diff = A.matrix - conditional_expectation(box, A).matrix
        tail = max(tail, (1 + k) ** nu * operator_norm(diff))
    return A.norm + tail


# === Random local probes ===
def _monomials(n_modes: int, modes: Sequence[int]) -> List[sp.csr_matrix]:
    """Gauge-invariant monomials a*_C a_D (|C| = |D|) on the given modes."""
    out = []
    modes = sorted(modes)
    ident = sp.identity(2 ** n_modes, dtype=complex, format="csr")
    for k in range(len(modes) + 1):
        for C in itertools.combinations(modes, k):
            for D in itertools.combinations(modes, k):
                m = ident
                for c in C:
                    m = m @ annihilator(n_modes, c).getH()
                for d in reversed(D):
                    m = m @ annihilator(n_modes, d)
                out.append(m.tocsr())
    return out


def random_local_operator(lat: TorusLattice, rng: np.random.Generator, size: int = 2,
                          self_adjoint: bool = False, anchor: Optional[Site] = None) -> FockOperator:
    """
    Random gauge-invariant operator on a connected support of `size` sites grown
    from a random (or given) anchor by nearest-neighbour steps.
    """
    lat.require_fock()
    x = anchor if anchor is not None else lat.site(int(rng.integers(lat.n_modes)))
    support = [lat.index(x)]
    steps = [(1, 0), (0, 1), (-1, 0), (0, -1)]
    while len(support) < min(size, lat.n_modes):
        base = lat.site(support[int(rng.integers(len(support)))])
        nxt = lat.index(lat.shift(base, steps[int(rng.integers(4))]))
        if nxt not in support:
            support.append(nxt)
    monos = _monomials(lat.n_modes, support)
    coeffs = rng.normal(size=len(monos)) + 1j * rng.normal(size=len(monos))
    m = sum(c * mono for c, mono in zip(coeffs, monos)).toarray()
    if self_adjoint:
        m = 0.5 * (m + m.conj().T)
    m /= max(operator_norm(m), TOL_EXACT)
    return FockOperator(m, frozenset(support), lat.n_modes)


def random_gauge_invariant(n_modes: int, rng: np.random.Generator, self_adjoint: bool = False) -> FockOperator:
    """Random gauge-invariant operator on all modes (dense, normalized)."""
    d = 2 ** n_modes
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    m = gauge_project(m, n_modes)
    if self_adjoint:
        m = 0.5 * (m + m.conj().T)
    m /= operator_norm(m)
    return FockOperator(m, frozenset(range(n_modes)), n_modes)


# === Fixed particle-number sectors ===
@dataclass(frozen=True)
class Sector:
    """Basis states with exactly `particles` occupied modes."""
    n_modes: int
    particles: int

    @cached_property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(particle_numbers(self.n_modes) == self.particles)

    @property
    def dim(self) -> int:
        return len(self.indices)

    def bitstrings(self) -> List[str]:
        return [format(int(s), f"0{self.n_modes}b") for s in self.indices]

    def restrict(self, A: Matrix) -> np.ndarray:
        m = as_matrix(A)
        return m[np.ix_(self.indices, self.indices)]

    def embed(self, vector: np.ndarray) -> np.ndarray:
        full = np.zeros(2 ** self.n_modes, dtype=complex)
        full[self.indices] = vector
        return full


# === States ===
@dataclass(frozen=True, eq=False)
class State:
    """
    A state on the Fock algebra.

    kind "vector": unit vector; "projector": uniform mixture over the range of a
    projector; "quasi_free": two-point matrix Gamma with omega(a*_x a_y) = Gamma[y, x].
    """
    kind: str
    data: np.ndarray

    def __post_init__(self):
        if self.kind == "vector":
            nrm = np.linalg.norm(self.data)
            if abs(nrm - 1.0) > 1e-10:
                raise ValueError(f"state vector not normalized (norm {nrm})")
        elif self.kind == "projector":
            P = self.data
            if np.max(np.abs(P @ P - P)) > 1e-9 or np.real(np.trace(P)) < 0.5:
                raise ValueError("projector state needs a non-zero orthogonal projector")
        elif self.kind == "quasi_free":
            G = self.data
            if np.max(np.abs(G - G.conj().T)) > 1e-10:
                raise ValueError("two-point matrix must be hermitian")
            ev = np.linalg.eigvalsh(G)
            if ev.min() < -1e-10 or ev.max() > 1 + 1e-10:
                raise ValueError("two-point matrix must satisfy 0 <= Gamma <= 1")
        else:
            raise ValueError(f"unknown state kind {self.kind!r}")

    @classmethod
    def vector(cls, v: np.ndarray) -> "State":
        return cls("vector", np.asarray(v, dtype=complex))

    @classmethod
    def projector(cls, P: np.ndarray) -> "State":
        return cls("projector", np.asarray(P, dtype=complex))

    @classmethod
    def quasi_free(cls, gamma: np.ndarray) -> "State":
        return cls("quasi_free", np.asarray(gamma, dtype=complex))

    @classmethod
    def vacuum(cls, n_modes: int) -> "State":
        v = np.zeros(2 ** n_modes, dtype=complex)
        v[0] = 1.0
        return cls.vector(v)

    @cached_property
    def density_matrix(self) -> np.ndarray:
        if self.kind == "vector":
            return np.outer(self.data, self.data.conj())
        if self.kind == "projector":
            return self.data / np.real(np.trace(self.data))
        return quasi_free_density(self.data)

    def expect(self, A: Matrix) -> complex:
        m = as_matrix(A)
        if self.kind == "vector":
            return complex(np.vdot(self.data, m @ self.data))
        return complex(np.einsum("ij,ji->", self.density_matrix, m))

    def two_point(self) -> np.ndarray:
        """Gamma[y, x] = omega(a*_x a_y)."""
        if self.kind == "quasi_free":
            return self.data
        n = int(round(math.log2(self.data.shape[0])))
        G = np.empty((n, n), dtype=complex)
        for x in range(n):
            for y in range(n):
                G[y, x] = self.expect((annihilator(n, x).getH() @ annihilator(n, y)).toarray())
        return G


def quasi_free_density(gamma: np.ndarray) -> np.ndarray:
    """Fock density matrix of the gauge-invariant quasi-free state with two-point matrix gamma."""
    n = gamma.shape[0]
    if n > MAX_MODES:
        raise LatticeSizeError(f"{n} modes exceed the Fock cap {MAX_MODES}")
    nu, phi = np.linalg.eigh(gamma)
    rho = sp.identity(2 ** n, dtype=complex, format="csr")
    ident = sp.identity(2 ** n, dtype=complex, format="csr")
    for k in range(n):
        b_dag = sum(phi[x, k] * annihilator(n, x).getH() for x in range(n))
        occ = (b_dag @ b_dag.getH()).tocsr()
        factor = nu[k] * occ + (1.0 - nu[k]) * (ident - occ)
        rho = rho @ factor
    return rho.toarray()


def slater_state(lat: TorusLattice, P: np.ndarray) -> State:
    """Pure quasi-free Fock vector for the projector P (one-body, rank N)."""
    lat.require_fock()
    n = lat.n_modes
    nu, phi = np.linalg.eigh(P)
    v = np.zeros(2 ** n, dtype=complex)
    v[0] = 1.0
    for k in np.flatnonzero(nu > 0.5):
        b_dag = sum(phi[x, k] * annihilator(n, x).getH() for x in range(n))
        v = b_dag @ v
    return State.vector(v / np.linalg.norm(v))
