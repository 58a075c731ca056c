"""Measurement-optimality analysis for interferometer output states.

Covers four independent questions: when bare photon-number counting already
saturates the QFI (the shifted-support condition on the occupied photon
number sectors), the classical Fisher information of explicit projective
measurements at the working point, the 2x2 phase-matrix conditions that a
record-conditioned beam mixer must satisfy (including the entangled
two-photon state for which counting alone is suboptimal but counting plus
linear optics is optimal), and Lie-algebra controllability of the blockaded
three-mode Kerr generators used by the reabsorption hardware.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolated, ValidationError
from .linalg import dag, hermitize
from .oracle import BinnedStateVector, apply_mixing_generator, number_sectors


# ---------------------------------------------------------------------------
# photon-number support condition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhotonNumberSupport:
    """Finite set of (n_A, n_B) photon-number sectors carrying the state."""

    sectors: frozenset

    @staticmethod
    def from_pairs(pairs) -> "PhotonNumberSupport":
        sectors = frozenset((int(a), int(b)) for a, b in pairs)
        if any(a < 0 or b < 0 for a, b in sectors):
            raise ValidationError("photon numbers must be nonnegative")
        return PhotonNumberSupport(sectors)


def check_number_optimality(support: PhotonNumberSupport):
    """Shifted-support test: no sector may have a (+-1, +-1) neighbour.

    If every simultaneous single-photon shift of both ports leaves the
    support, photon counting at the two outputs is an optimal measurement
    around the zero-phase working point.  Returns ``(True, None)`` or
    ``(False, witness_pair)``.
    """
    sectors = support.sectors
    for (na, nb) in sorted(sectors):
        for da, db in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            neighbor = (na + da, nb + db)
            if neighbor in sectors:
                return False, ((na, nb), neighbor)
    return True, None


def state_support(state: BinnedStateVector, tol: float = 1e-12) -> PhotonNumberSupport:
    """Occupied (n_A, n_B) sectors of a binned state."""
    na, nb = number_sectors(state)
    weight = np.abs(state.amplitudes) ** 2
    pairs = set()
    for a, b in zip(na.ravel(), nb.ravel()):
        pairs.add((int(a), int(b)))
    occupied = set()
    for pair in pairs:
        mask = (na == pair[0]) & (nb == pair[1])
        if float(weight[mask].sum()) > tol:
            occupied.add(pair)
    return PhotonNumberSupport(frozenset(occupied))


def sector_projectors(state: BinnedStateVector):
    """Boolean masks of every occupied (n_A, n_B) sector plus the rest."""
    na, nb = number_sectors(state)
    support = state_support(state)
    masks = {pair: (na == pair[0]) & (nb == pair[1]) for pair in support.sectors}
    return masks


# ---------------------------------------------------------------------------
# classical Fisher information of projective measurements
# ---------------------------------------------------------------------------

@dataclass
class CfiResult:
    cfi: float
    infinite: bool
    outcomes: list


def cfi_projective(state: BinnedStateVector, projector_masks,
                   tol: float = 1e-12) -> CfiResult:
    """CFI of a projective measurement at the zero-phase working point.

    Outcome probabilities p_i(phi) = <psi_phi| P_i |psi_phi> are expanded
    analytically: p' = 2 Im<psi|P H_d|psi> and
    p'' = 2 <H psi|P|H psi> - 2 Re <H^2 psi|P|psi>.  Outcomes with p(0) > 0
    contribute (p')^2 / p; outcomes with p(0) = 0 and p' = 0 contribute the
    limit 2 p''; p(0) = 0 with p' != 0 is a non-smooth point and is flagged
    as infinite rather than clipped.
    """
    psi = state.amplitudes
    hd_psi = apply_mixing_generator(state)
    hd2_psi = apply_mixing_generator(
        BinnedStateVector(hd_psi, state.eps, state.norm_sq, state.channels))
    total_mask = np.zeros(psi.shape, dtype=bool)
    cfi = 0.0
    infinite = False
    outcomes = []
    for mask in projector_masks:
        total_mask |= mask
        p0 = float(np.sum(np.abs(psi[mask]) ** 2))
        p1 = 2.0 * float(np.vdot(psi[mask], hd_psi[mask]).imag)
        p2 = (2.0 * float(np.vdot(hd_psi[mask], hd_psi[mask]).real)
              - 2.0 * float(np.vdot(hd2_psi[mask], psi[mask]).real))
        outcomes.append({"p": p0, "dp": p1, "d2p": p2})
        if p0 > tol:
            cfi += p1 ** 2 / p0
        elif abs(p1) > math.sqrt(tol):
            infinite = True
        else:
            cfi += 2.0 * p2
    if not total_mask.all():
        raise ValidationError("projector masks must partition the state space")
    return CfiResult(cfi=cfi, infinite=infinite, outcomes=outcomes)


def two_outcome_masks(state: BinnedStateVector, support: PhotonNumberSupport):
    """Masks of (Pi_support, complement) for the two-outcome reduction."""
    na, nb = number_sectors(state)
    inside = np.zeros(na.shape, dtype=bool)
    for a, b in support.sectors:
        inside |= (na == a) & (nb == b)
    return [inside, ~inside]


# ---------------------------------------------------------------------------
# two-photon wavefunctions and the phase matrices
# ---------------------------------------------------------------------------

@dataclass
class TwoPhotonWavefunction:
    """Two-photon amplitudes on a uniform time grid.

    ``psi_aa[i, j]`` is the both-photons-in-port-A amplitude at
    (tau_i, tau_j) (symmetric), ``psi_ab[i, j]`` the port-A photon at tau_i
    with the port-B photon at tau_j (no symmetry), ``psi_bb`` symmetric.
    Sector weights in the norm are (1/2, 1, 1/2) to undo bosonic double
    counting on the full square; the psi_ab diagonal is excluded.
    """

    taus: np.ndarray
    psi_aa: np.ndarray
    psi_ab: np.ndarray
    psi_bb: np.ndarray

    @property
    def delta(self) -> float:
        return float(self.taus[1] - self.taus[0])

    def norm_sq(self) -> float:
        off = ~np.eye(len(self.taus), dtype=bool)
        return self.delta ** 2 * float(
            0.5 * np.sum(np.abs(self.psi_aa) ** 2)
            + np.sum(np.abs(self.psi_ab[off]) ** 2)
            + 0.5 * np.sum(np.abs(self.psi_bb) ** 2))

    def mean_mixing_generator(self) -> float:
        """<H_d> with H_d = i Int (a^dag b - a b^dag)."""
        z = (np.conj(self.psi_aa) * self.psi_ab.T
             + np.conj(self.psi_ab) * self.psi_bb)
        off = ~np.eye(len(self.taus), dtype=bool)
        return -2.0 * self.delta ** 2 * float(np.sum(z[off].imag))


def entangled_counterexample(taus: np.ndarray,
                             kernel=None) -> TwoPhotonWavefunction:
    """Entangled two-photon state with traceless but nonzero phase matrices.

    Amplitudes on ordered times tau1 < tau2:
    Psi(tau1,tau2; ) = f, Psi(tau1; tau2) = -f, Psi( ; tau1,tau2) = (1+i) f,
    Psi(tau2; tau1) = (1+i) f, with f symmetric and normalized.  Photon
    counting alone is suboptimal on this state although the traces of all
    phase matrices vanish.
    """
    taus = np.asarray(taus, dtype=float)
    if kernel is None:
        t0 = taus.mean()
        width = (taus[-1] - taus[0]) / 4 or 1.0
        kernel = lambda x, y: np.exp(-((x - t0) ** 2 + (y - t0) ** 2)
                                     / (2 * width ** 2))
    xx, yy = np.meshgrid(taus, taus, indexing="ij")
    f = np.asarray(kernel(xx, yy), dtype=complex)
    if np.max(np.abs(f - f.T)) > 1e-12 * max(1.0, np.max(np.abs(f))):
        raise ValidationError("counterexample kernel must be symmetric")
    lower = xx > yy  # tau1 (row) later than tau2 (column)
    psi_ab = np.where(lower, (1 + 1j) * f, -f)
    np.fill_diagonal(psi_ab, 0.0)
    tpw = TwoPhotonWavefunction(taus=taus, psi_aa=f.copy(), psi_ab=psi_ab,
                                psi_bb=(1 + 1j) * f)
    scale = math.sqrt(tpw.norm_sq())
    tpw.psi_aa /= scale
    tpw.psi_ab /= scale
    tpw.psi_bb /= scale
    return tpw


@dataclass
class LambdaReport:
    """Diagonals and traces of the 2x2 phase matrices on ordered pairs."""

    taus: np.ndarray
    lambda1_diag: np.ndarray | None  # one-detection matrix diagonal (product case)
    la_11: np.ndarray
    la_22: np.ndarray
    lb_11: np.ndarray
    lb_22: np.ndarray

    def trace_a(self) -> np.ndarray:
        return self.la_11 + self.la_22

    def trace_b(self) -> np.ndarray:
        return self.lb_11 + self.lb_22

    def max_abs_trace(self) -> float:
        return float(max(np.max(np.abs(self.trace_a())),
                         np.max(np.abs(self.trace_b()))))


def lambda_two_photon(tpw: TwoPhotonWavefunction) -> LambdaReport:
    """Phase-matrix diagonals of a joint two-photon state, pointwise.

    Evaluated on ordered pairs tau_i < tau_j; vanishing traces are necessary
    for optimality of counting supplemented with a record-conditioned mixer,
    vanishing diagonals for optimality of bare counting.
    """
    n = len(tpw.taus)
    iu = np.triu_indices(n, k=1)
    psi12 = tpw.psi_ab[iu]           # a-photon first (tau1 < tau2)
    psi21 = tpw.psi_ab[(iu[1], iu[0])]  # a-photon second
    aa = tpw.psi_aa[iu]
    bb = tpw.psi_bb[iu]
    la_11 = ((psi12 + psi21) * np.conj(aa)).imag
    la_22 = ((bb - aa) * np.conj(psi12)).imag
    lb_11 = ((bb - aa) * np.conj(psi21)).imag
    lb_22 = -((psi12 + psi21) * np.conj(bb)).imag
    return LambdaReport(taus=tpw.taus, lambda1_diag=None,
                        la_11=la_11, la_22=la_22, lb_11=lb_11, lb_22=lb_22)


@dataclass
class ProductAmplitudes:
    """Per-port amplitudes of an unentangled two-port state on a tau grid."""

    taus: np.ndarray
    a_vac: complex
    a_one: np.ndarray
    a_two: np.ndarray
    b_vac: complex
    b_one: np.ndarray
    b_two: np.ndarray


def lambda_product(pa: ProductAmplitudes, tol: float = 1e-14) -> LambdaReport:
    """Phase matrices of a product state from the per-port amplitudes.

    Raises :class:`AssumptionViolated` where an amplitude that the
    construction requires to be nonzero vanishes.
    """
    n = len(pa.taus)
    needed = [abs(pa.a_vac), abs(pa.b_vac),
              float(np.min(np.abs(pa.a_one))), float(np.min(np.abs(pa.b_one)))]
    if min(needed) <= tol:
        raise AssumptionViolated(
            "a required port amplitude vanishes on the grid")
    iu = np.triu_indices(n, k=1)
    t1, t2 = iu
    a1, a2 = pa.a_one[t1], pa.a_one[t2]
    b1, b2 = pa.b_one[t1], pa.b_one[t2]
    a12 = pa.a_two[iu]
    b12 = pa.b_two[iu]
    lambda1 = (pa.a_one * pa.a_vac * np.conj(pa.b_vac) * np.conj(pa.b_one)).imag
    la_11 = ((a1 * b2 + a2 * b1) * np.conj(a12) * np.conj(pa.b_vac)).imag
    la_22 = ((pa.a_vac * b12 - a12 * pa.b_vac) * np.conj(a1) * np.conj(b2)).imag
    lb_11 = ((pa.a_vac * b12 - a12 * pa.b_vac) * np.conj(a2) * np.conj(b1)).imag
    lb_22 = -((a1 * b2 + a2 * b1) * np.conj(pa.a_vac) * np.conj(b12)).imag
    return LambdaReport(taus=pa.taus, lambda1_diag=lambda1,
                        la_11=la_11, la_22=la_22, lb_11=lb_11, lb_22=lb_22)


# ---------------------------------------------------------------------------
# blockaded Kerr generators and Lie closure
# ---------------------------------------------------------------------------

def _blockade_basis(d_max: int):
    return [n for n in itertools.product(range(d_max + 1), repeat=3)
            if sum(n) <= d_max]


def blockade_generators(d_max: int):
    """Drive generators of three Kerr-coupled modes on the <= D photon sector.

    Returns the dict {"H0": ..., "plus": [H_k^+], "minus": [H_k^-],
    "basis": ...} with H_k^+ = c_k^dag (N - D) + h.c., its conjugate
    quadrature, and H0 = i sum_k xi_k [H_k^+, H_k^-] for
    xi = (2^(1/3), 3^(1/3), 5^(1/3)).  Requires 2D - 1 not divisible by 5,
    which guarantees non-degenerate level spacings of H0.
    """
    if d_max < 1:
        raise ValidationError("photon blockade cutoff must be >= 1")
    if (2 * d_max - 1) % 5 == 0:
        raise ValidationError(
            f"D = {d_max} has 2D - 1 divisible by 5; level spacings degenerate")
    basis = _blockade_basis(d_max)
    index = {n: i for i, n in enumerate(basis)}
    dim = len(basis)
    xi = (2.0 ** (1 / 3), 3.0 ** (1 / 3), 5.0 ** (1 / 3))
    plus, minus = [], []
    for k in range(3):
        t_op = np.zeros((dim, dim), dtype=complex)  # c_k^dag (N - D)
        for n in basis:
            if sum(n) + 1 > d_max:
                continue
            up = list(n)
            up[k] += 1
            t_op[index[tuple(up)], index[n]] = math.sqrt(n[k] + 1) * (sum(n) - d_max)
        plus.append(t_op + dag(t_op))
        minus.append(1j * (t_op - dag(t_op)))
    h0 = np.zeros((dim, dim), dtype=complex)
    for k in range(3):
        h0 += 1j * xi[k] * (plus[k] @ minus[k] - minus[k] @ plus[k])
    return {"H0": h0, "plus": plus, "minus": minus, "basis": basis,
            "dim": dim, "xi": xi}


def level_spacing_gaps(gens: dict, k: int) -> np.ndarray:
    """Squared H0 level spacings (mu(n + e_k) - mu(n))^2 over the basis."""
    basis = gens["basis"]
    index = {n: i for i, n in enumerate(basis)}
    mu = np.diag(gens["H0"]).real
    gaps = []
    for n in basis:
        up = list(n)
        up[k] += 1
        if tuple(up) in index:
            gaps.append((mu[index[tuple(up)]] - mu[index[n]]) ** 2)
    return np.array(gaps)


@dataclass
class LieClosureReport:
    generator_count: int
    ambient_dim: int
    closure_dim: int
    max_residual: float

    @property
    def is_full_algebra(self) -> bool:
        return self.closure_dim == self.ambient_dim ** 2 - 1


def lie_closure(generators, tol: float = 1e-9) -> LieClosureReport:
    """Dimension of the real Lie algebra generated under nested commutators.

    Gram-Schmidt runs in the real vector space of traceless Hermitian
    matrices with the Hilbert-Schmidt inner product; a commutator joins the
    basis when its orthogonal residual exceeds ``tol`` relative to its norm.
    """
    gens = [np.asarray(g, dtype=complex) for g in generators]
    dim = gens[0].shape[0]
    eye = np.eye(dim) / dim

    def project(x):
        x = hermitize(x)
        return x - np.trace(x) * eye

    basis = []

    def try_add(x) -> bool:
        x = project(x)
        norm0 = np.linalg.norm(x)
        if norm0 < 1e-14:
            return False
        for b in basis:
            x = x - np.trace(dag(b) @ x).real * b
        resid = np.linalg.norm(x)
        if resid <= tol * norm0:
            return False
        x = x / resid
        for b in basis:  # second pass for numerical orthogonality
            x = x - np.trace(dag(b) @ x).real * b
        basis.append(x / np.linalg.norm(x))
        return True

    for g in gens:
        try_add(g)
    frontier = list(range(len(basis)))
    max_dim = dim * dim - 1
    while frontier and len(basis) < max_dim:
        new_frontier = []
        for i in frontier:
            for j in range(len(basis)):
                if len(basis) >= max_dim:
                    break
                comm = -1j * (basis[i] @ basis[j] - basis[j] @ basis[i])
                if try_add(comm):
                    new_frontier.append(len(basis) - 1)
        frontier = new_frontier
    max_resid = 0.0
    for b in basis:
        max_resid = max(max_resid, abs(np.trace(b).real),
                        float(np.max(np.abs(b - dag(b)))))
    return LieClosureReport(generator_count=len(gens), ambient_dim=dim,
                            closure_dim=len(basis), max_residual=max_resid)
