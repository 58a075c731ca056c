"""Dense complex linear algebra and Liouville-space (superoperator) primitives.

Conventions fixed once for the whole package:

* Vectorization is column-stacking, ``vec(X)[i + D*j] = X[i, j]``, i.e.
  ``X.reshape(-1, order="F")``.  The induced identity
  ``vec(A @ X @ B) = kron(B.T, A) @ vec(X)`` is the only superoperator
  construction rule used anywhere; a single convention prevents transpose
  bugs between modules.
* A superoperator on a D-level system is a dense ``(D**2, D**2)`` complex
  array acting on vectorized operators.
* All numerical tolerances live in :data:`TOL` so tests and library code
  reference one source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    unitary: float = 1e-10
    trace: float = 1e-10
    trace_preserving: float = 1e-9
    choi_psd: float = 1e-8
    state_psd: float = 1e-10
    fixed_point: float = 1e-9
    gap_floor: float = 1e-6
    postselection_floor: float = 1e-6
    expm_roundtrip: float = 1e-10
    isometry: float = 1e-10
    lie_residual: float = 1e-9


TOL = Tolerances()


# ---------------------------------------------------------------------------
# vectorization
# ---------------------------------------------------------------------------

def vec(x: np.ndarray) -> np.ndarray:
    """Column-stack a square matrix into a vector."""
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"vectorize expects a square matrix, got shape {x.shape}")
    return np.asarray(x, dtype=complex).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValueError(f"vector of length {v.size} is not a stacked square matrix")
    return v.reshape((d, d), order="F")


def dag(a: np.ndarray) -> np.ndarray:
    return np.conj(a).T


def vec_projector(phi: np.ndarray) -> np.ndarray:
    """vec(|phi><phi|); as a covector it evaluates <phi|X|phi> = vec(P) . vec(X)."""
    phi = np.asarray(phi, dtype=complex).ravel()
    return vec(np.outer(phi, phi.conj()))


def identity_vec(dim: int) -> np.ndarray:
    """vec(I); as a covector it evaluates the trace."""
    return vec(np.eye(dim, dtype=complex))


# ---------------------------------------------------------------------------
# superoperator builders
# ---------------------------------------------------------------------------

def left_mul(a: np.ndarray) -> np.ndarray:
    """Superoperator for X -> A X."""
    d = a.shape[0]
    return np.kron(np.eye(d), a)


def right_mul(b: np.ndarray) -> np.ndarray:
    """Superoperator for X -> X B."""
    d = b.shape[0]
    return np.kron(b.T, np.eye(d))


def sandwich(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator for X -> A X B^dagger."""
    return np.kron(np.conj(b), a)


def unitary_superop(u: np.ndarray) -> np.ndarray:
    """Superoperator for X -> U X U^dagger."""
    return sandwich(u, u)


def kraus_channel(kraus_ops) -> np.ndarray:
    """Superoperator Sum_k K X K^dagger for a list of Kraus operators."""
    ks = list(kraus_ops)
    d = ks[0].shape[0]
    s = np.zeros((d * d, d * d), dtype=complex)
    for k in ks:
        s += sandwich(k, k)
    return s


def dissipator(l_op: np.ndarray) -> np.ndarray:
    """Superoperator for X -> L X L^dag - {L^dag L, X}/2."""
    ldl = dag(l_op) @ l_op
    return sandwich(l_op, l_op) - 0.5 * (left_mul(ldl) + right_mul(ldl))


def lindblad_generator(h: np.ndarray, jump_ops) -> np.ndarray:
    """Superoperator matrix of rho -> -i[H, rho] + Sum_L D_L(rho)."""
    gen = -1j * (left_mul(h) - right_mul(h))
    for l_op in jump_ops:
        gen = gen + dissipator(l_op)
    return gen


# ---------------------------------------------------------------------------
# matrix functions and norms
# ---------------------------------------------------------------------------

def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling-and-squaring Pade)."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expm expects a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("expm input contains non-finite entries")
    return scipy.linalg.expm(a)


def trace_norm(a: np.ndarray) -> float:
    """Sum of singular values."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"trace_norm expects a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("trace_norm input contains non-finite entries")
    return float(np.linalg.svd(a, compute_uv=False).sum())


def hermitize(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + dag(x))


def is_hermitian(a: np.ndarray, tol: float = TOL.hermitian) -> bool:
    return bool(np.max(np.abs(a - dag(a))) <= tol)


def is_unitary(a: np.ndarray, tol: float = TOL.unitary) -> bool:
    d = a.shape[0]
    return bool(np.max(np.abs(dag(a) @ a - np.eye(d))) <= tol)


# ---------------------------------------------------------------------------
# channel diagnostics
# ---------------------------------------------------------------------------

def choi_matrix(s: np.ndarray) -> np.ndarray:
    """Choi matrix C[(k,i),(l,j)] = S[(i,j),(k,l)] of a superoperator."""
    dd = s.shape[0]
    d = int(round(np.sqrt(dd)))
    s4 = s.reshape((d, d, d, d), order="F")
    return np.ascontiguousarray(np.transpose(s4, (2, 0, 3, 1))).reshape(dd, dd)


def choi_min_eigval(s: np.ndarray) -> float:
    c = choi_matrix(s)
    return float(np.linalg.eigvalsh(hermitize(c)).min())


def is_completely_positive(s: np.ndarray, tol: float = TOL.choi_psd) -> bool:
    return choi_min_eigval(s) >= -tol


def trace_preservation_defect(s: np.ndarray) -> float:
    """max |vec(I)^dag S - vec(I)^dag|; zero for a trace-preserving map."""
    dd = s.shape[0]
    d = int(round(np.sqrt(dd)))
    iv = identity_vec(d)
    return float(np.max(np.abs(iv.conj() @ s - iv.conj())))


def is_trace_preserving(s: np.ndarray, tol: float = TOL.trace_preserving) -> bool:
    return trace_preservation_defect(s) <= tol


# ---------------------------------------------------------------------------
# misc utilities
# ---------------------------------------------------------------------------

def positive_projection(x: np.ndarray) -> np.ndarray:
    """Hermitize, clip negative eigenvalues at zero, renormalize the trace."""
    h = hermitize(x)
    w, v = np.linalg.eigh(h)
    w = np.clip(w, 0.0, None)
    out = (v * w) @ dag(v)
    tr = np.trace(out).real
    if tr <= 0:
        raise ValueError("matrix has no positive part to normalize")
    return out / tr


def complete_to_unitary(isometry: np.ndarray) -> np.ndarray:
    """Extend orthonormal columns to a full unitary.

    Completion is deterministic: remaining columns are drawn from the
    canonical basis, picking at each round the basis vector with the largest
    residual after projecting out the span built so far.
    """
    v = np.asarray(isometry, dtype=complex)
    n, r = v.shape
    if r > n:
        raise ValueError("isometry has more columns than rows")
    cols = [v[:, j].copy() for j in range(r)]
    candidates = np.eye(n, dtype=complex)
    while len(cols) < n:
        basis = np.column_stack(cols) if cols else np.zeros((n, 0))
        resid = candidates - basis @ (dag(basis) @ candidates)
        norms = np.linalg.norm(resid, axis=0)
        j = int(np.argmax(norms))
        if norms[j] < 1e-12:
            raise ValueError("cannot complete isometry: candidate basis exhausted")
        new = resid[:, j] / norms[j]
        # second Gram-Schmidt pass for orthogonality at machine precision
        new = new - basis @ (dag(basis) @ new)
        new = new / np.linalg.norm(new)
        cols.append(new)
    u = np.column_stack(cols)
    if not is_unitary(u, 1e-9):
        raise ValueError("unitary completion failed orthogonality check")
    return u
