"""Liouvillian assembly, channel propagation, spectral analysis, contractivity.

The generator is rho -> -i[H(t), rho] + Sum_X D_{L_X}(rho) with every jump
(port or loss) contributing a dissipator; loss jumps enter the dynamics here
but are excluded from correlator insertions downstream, which turns reported
QFI values into purification upper bounds.

Two step discretizations are supported:

* ``exact``  - E_k = expm(eps * L_k), the exact piecewise-constant channel;
* ``kraus``  - E_k = U_k . K with Kraus set K_0 = (I - eps Q)^(1/2),
  K_j = -i sqrt(eps) L_j, the first-order decomposition that also defines
  the time-bin matrix-product state and the brute-force oracle.

Per-step contraction bounds such as sqrt(1 - gamma*eps) for a decaying
two-level emitter are statements about the ``kraus`` step, not about the
exact exponential (which only satisfies exp(-gamma*tau/2) over a span).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import (TOL, dag, expm, hermitize, identity_vec, kraus_channel,
                     lindblad_generator, positive_projection, sandwich,
                     trace_norm, unitary_superop, unvec, vec)
from .model import SourceModel

SQL_BOUND = "SqlBound"
HL_POSSIBLE = "HlPossible"


@dataclass
class Liouvillian:
    """Per-step Lindblad generators of a source model, as superoperator matrices."""

    model: SourceModel
    eps: float
    num_steps: int
    has_loss: bool
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def is_constant(self) -> bool:
        return self.model.schedule.is_constant

    def generator(self, k: int) -> np.ndarray:
        """Generator matrix on step k (1-based)."""
        key = 0 if self.is_constant else k
        if key not in self._cache:
            h = self.model.schedule.hamiltonian(1 if self.is_constant else k)
            jumps = [j.matrix for j in self.model.jumps]
            self._cache[key] = lindblad_generator(h, jumps)
        return self._cache[key]

    def averaged_generator(self) -> np.ndarray:
        if self.is_constant:
            return self.generator(1)
        acc = np.zeros_like(self.generator(1))
        for k in range(1, self.num_steps + 1):
            acc += self.generator(k)
        return acc / self.num_steps


def build_liouvillian(model: SourceModel) -> Liouvillian:
    return Liouvillian(model=model, eps=model.schedule.step,
                       num_steps=model.num_steps, has_loss=model.has_loss)


def kraus_step_ops(model: SourceModel) -> list[np.ndarray]:
    """Kraus set {K_0, K_j} of one time-bin: K_0 = (I - eps Q)^(1/2).

    The square root uses a Hermitian eigendecomposition with eigenvalues
    clamped at zero, since eps*Q may brush 1 numerically.
    """
    eps = model.schedule.step
    d = model.dim
    q = np.zeros((d, d), dtype=complex)
    for j in model.jumps:
        q += dag(j.matrix) @ j.matrix
    if eps * np.linalg.norm(q, 2) >= 1.0:
        raise ValidationError("step too large: eps * ||Q|| must be < 1 for the "
                              "Kraus decomposition")
    w, v = np.linalg.eigh(hermitize(np.eye(d) - eps * q))
    k0 = (v * np.sqrt(np.clip(w, 0.0, None))) @ dag(v)
    ops = [k0]
    ops.extend(-1j * np.sqrt(eps) * j.matrix for j in model.jumps)
    return ops


@dataclass
class StepPropagators:
    """Cached per-step channel matrices E_k, k = 1..M.

    ``kind`` selects the discretization (see module docstring).  Distinct
    step generators are exponentiated once and reused by every sweep.
    """

    model: SourceModel
    kind: str = "exact"
    _liou: Liouvillian | None = None
    _cache: dict = field(default_factory=dict, repr=False)
    _kraus_matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("exact", "kraus"):
            raise ValidationError(f"unknown propagator kind {self.kind!r}")
        if self._liou is None:
            self._liou = build_liouvillian(self.model)
        if self.kind == "kraus":
            self._kraus_matrix = kraus_channel(kraus_step_ops(self.model))

    @property
    def eps(self) -> float:
        return self.model.schedule.step

    @property
    def num_steps(self) -> int:
        return self.model.num_steps

    @property
    def dim(self) -> int:
        return self.model.dim

    def step_matrix(self, k: int) -> np.ndarray:
        """Channel matrix of step k (1-based)."""
        if not 1 <= k <= self.num_steps:
            raise ValueError(f"step index {k} outside 1..{self.num_steps}")
        key = 0 if self.model.schedule.is_constant else k
        if key not in self._cache:
            if self.kind == "exact":
                mat = expm(self.eps * self._liou.generator(k))
            else:
                h = self.model.schedule.hamiltonian(k)
                u = expm(-1j * self.eps * h)
                mat = unitary_superop(u) @ self._kraus_matrix
            self._cache[key] = mat
        return self._cache[key]

    def span_matrix(self, k_from: int, k_to: int) -> np.ndarray:
        """Channel matrix over steps k_from+1 .. k_to (identity if equal)."""
        if not 0 <= k_from <= k_to <= self.num_steps:
            raise ValueError("reversed or out-of-range step indices")
        d2 = self.dim ** 2
        if k_from == k_to:
            return np.eye(d2, dtype=complex)
        if self.kind == "exact" and self.model.schedule.is_constant:
            return expm((k_to - k_from) * self.eps * self._liou.generator(1))
        out = np.eye(d2, dtype=complex)
        for k in range(k_from + 1, k_to + 1):
            out = self.step_matrix(k) @ out
        return out


def propagate(state: np.ndarray, k_from: int, k_to: int,
              props: StepPropagators) -> np.ndarray:
    """Evolve a density matrix from step k_from to k_to (forward only)."""
    if k_from > k_to:
        raise ValueError("propagate requires k_from <= k_to")
    v = vec(state)
    for k in range(k_from + 1, k_to + 1):
        v = props.step_matrix(k) @ v
    return unvec(v)


def adjoint_propagate(observable: np.ndarray, k_from: int, k_to: int,
                      props: StepPropagators) -> np.ndarray:
    """Heisenberg-picture backward sweep X(t_k) = E^dag(t_from, t_k)(X).

    ``k_from`` is the later step index (typically M), ``k_to`` the earlier.
    Non-Hermitian inputs are allowed (internal complex insertions are
    propagated the same way); Hermiticity of the result is then meaningless.
    """
    if k_to > k_from:
        raise ValueError("adjoint_propagate runs backward: k_to <= k_from")
    v = vec(observable)
    for k in range(k_from, k_to, -1):
        v = dag(props.step_matrix(k)) @ v
    return unvec(v)


# ---------------------------------------------------------------------------
# spectral analysis
# ---------------------------------------------------------------------------

@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    fixed_points: list
    gap: float
    classification: str
    num_fixed_points: int
    time_averaged: bool = False
    schur_fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "num_fixed_points": self.num_fixed_points,
            "gap": self.gap,
            "classification": self.classification,
            "time_averaged": self.time_averaged,
            "schur_fallback": self.schur_fallback,
        }


def spectrum(liou: Liouvillian, tol: float = TOL.fixed_point,
             gap_floor: float = TOL.gap_floor) -> SpectrumReport:
    """Eigenvalues, fixed points and SQL/HL classification of the generator.

    A unique fixed point together with a spectral gap above ``gap_floor``
    bounds the emitted-photon QFI to linear growth in the horizon
    (classification ``SqlBound``); anything else leaves quadratic scaling
    possible (``HlPossible``).  Time-dependent schedules are classified via
    the time-averaged generator and flagged, since the spectral criterion is
    a statement about time-independent dynamics.
    """
    gen = liou.averaged_generator()
    time_averaged = not liou.is_constant
    schur_fallback = False
    fixed_points = []
    try:
        eigvals, eigvecs = np.linalg.eig(gen)
        order = np.argsort(-eigvals.real)
        eigvals = eigvals[order]
        eigvecs = eigvecs[:, order]
        for idx in np.flatnonzero(np.abs(eigvals) < tol):
            fixed_points.append(positive_projection(unvec(eigvecs[:, idx])))
        num_fixed = int(np.sum(np.abs(eigvals) < tol))
    except np.linalg.LinAlgError:
        schur_fallback = True
        import scipy.linalg
        t_mat, _ = scipy.linalg.schur(gen, output="complex")
        eigvals = np.sort_complex(np.diag(t_mat))[::-1]
        num_fixed = int(np.sum(np.abs(eigvals) < tol))
    decaying = eigvals[np.abs(eigvals) >= tol]
    gap = float(-np.max(decaying.real)) if decaying.size else 0.0
    classification = SQL_BOUND if (num_fixed == 1 and gap > gap_floor) else HL_POSSIBLE
    return SpectrumReport(eigenvalues=eigvals, fixed_points=fixed_points,
                          gap=gap, classification=classification,
                          num_fixed_points=num_fixed,
                          time_averaged=time_averaged,
                          schur_fallback=schur_fallback)


# ---------------------------------------------------------------------------
# contractivity estimation
# ---------------------------------------------------------------------------

def _batch_trace_norms(vecs: np.ndarray, dim: int) -> np.ndarray:
    """Trace norms of a batch of vectorized Hermitian matrices (columns)."""
    mats = vecs.T.reshape(-1, dim, dim).transpose(0, 2, 1)
    mats = 0.5 * (mats + np.conj(np.transpose(mats, (0, 2, 1))))
    return np.abs(np.linalg.eigvalsh(mats)).sum(axis=1)


def _orthogonal_pure_pairs_qubit(n_theta: int = 121, n_phi: int = 240) -> np.ndarray:
    """Deterministic parametrized family covering all orthogonal qubit pairs."""
    thetas = np.linspace(0.0, np.pi / 2, n_theta)
    phis = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    tt, pp = np.meshgrid(thetas, phis, indexing="ij")
    tt = tt.ravel()
    pp = pp.ravel()
    psi1 = np.stack([np.cos(tt), np.exp(1j * pp) * np.sin(tt)], axis=1)
    psi2 = np.stack([np.sin(tt), -np.exp(1j * pp) * np.cos(tt)], axis=1)
    return np.stack([psi1, psi2], axis=1)  # (N, 2, dim)


def _orthogonal_pure_pairs_random(dim: int, n_pairs: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(n_pairs, dim, 2)) + 1j * rng.normal(size=(n_pairs, dim, 2))
    q, _ = np.linalg.qr(raw)
    return q.transpose(0, 2, 1)  # (N, 2, dim)


def contraction_coefficient(props: StepPropagators, k_from: int, k_to: int,
                            n_pairs: int = 20000, seed: int = 7) -> float:
    """Estimated sup of ||E(Delta)||_1 / ||Delta||_1 over orthogonal pure pairs.

    Maximizing over differences of orthogonal pure states is enough
    (Ruskai reduction).  D = 2 uses an exhaustive parametrized grid; larger
    dimensions sample at least ``n_pairs`` random orthonormal pairs.
    """
    dim = props.dim
    e_mat = props.span_matrix(k_from, k_to)
    if dim == 2:
        pairs = _orthogonal_pure_pairs_qubit()
    else:
        pairs = _orthogonal_pure_pairs_random(dim, max(n_pairs, 10000), seed)
    p1, p2 = pairs[:, 0, :], pairs[:, 1, :]
    deltas = (np.einsum("ni,nj->nij", p1, p1.conj())
              - np.einsum("ni,nj->nij", p2, p2.conj()))
    cols = deltas.transpose(0, 2, 1).reshape(len(pairs), -1).T  # vec by columns
    out = e_mat @ cols
    ratios = _batch_trace_norms(out, dim) / 2.0
    return float(min(1.0, ratios.max()))


def jump_frame_lambda0(model: SourceModel) -> float:
    """Smallest frame eigenvalue of the jump set on traceless operators.

    For jump sets spanning the traceless operator space this is the rate
    lambda_0 appearing in the full-Kraus-rank contraction bound
    exp(-lambda_0 * tau).
    """
    d = model.dim
    frame = np.zeros((d * d, d * d), dtype=complex)
    for j in model.jumps:
        v = vec(j.matrix)
        frame += np.outer(v, v.conj())
    # restrict to the traceless subspace: project out vec(I)/sqrt(D)
    iv = identity_vec(d) / np.sqrt(d)
    proj = np.eye(d * d) - np.outer(iv, iv.conj())
    w, v = np.linalg.eigh(hermitize(proj @ frame @ proj))
    # the projected-out direction contributes a spurious zero eigenvalue
    w_sorted = np.sort(w)
    return float(w_sorted[1]) if len(w_sorted) > 1 else float(w_sorted[0])
