"""Exact gradients of time-bin objectives with respect to per-step controls.

Objectives are sums of contractions gamma of the controlled bin chain
U_M K ... U_1 K with one insertion gate (single sums) or two (double sums),
composed with a Wirtinger-differentiable f: dGamma/dtheta = 2 Re f' dgamma.
The naive derivative costs O(M^2) / O(M^3); the sweeps below reuse left/right
partial contractions (l_p, r_p and the mixed c_{p,m}) to reach O(M) and
O(M^2), which is what makes control optimization at large M feasible.

Controls enter only through U_p = exp(-i eps sum_j theta_{p,j} B_j) over a
Hermitian generator basis; jump operators are control-independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import PostselectionTooUnlikely, ValidationError
from .linalg import TOL, dag, kraus_channel, sandwich, unitary_superop, vec, vec_projector
from .model import SourceModel
from .dynamics import kraus_step_ops


# ---------------------------------------------------------------------------
# parametrization
# ---------------------------------------------------------------------------

def hermitian_basis(dim: int) -> np.ndarray:
    """Traceless Hermitian generator basis (generalized Gell-Mann), D^2 - 1 ops."""
    ops = []
    for i in range(dim):
        for j in range(i + 1, dim):
            sym = np.zeros((dim, dim), dtype=complex)
            sym[i, j] = sym[j, i] = 1.0
            ops.append(sym)
            asym = np.zeros((dim, dim), dtype=complex)
            asym[i, j] = -1j
            asym[j, i] = 1j
            ops.append(asym)
    for k in range(1, dim):
        diag = np.zeros((dim, dim), dtype=complex)
        diag[:k, :k] = np.eye(k)
        diag[k, k] = -k
        ops.append(diag * np.sqrt(2.0 / (k * (k + 1))))
    return np.array(ops)


@dataclass(frozen=True)
class ParamSchedule:
    """Control coefficients theta[p, j] over a Hermitian generator basis."""

    eps: float
    generators: np.ndarray  # (B, D, D)
    theta: np.ndarray  # (M, B)

    def __post_init__(self):
        if self.theta.ndim != 2 or self.theta.shape[1] != len(self.generators):
            raise ValidationError("theta must be (num_steps, num_generators)")
        for j, b in enumerate(self.generators):
            if np.max(np.abs(b - dag(b))) > TOL.hermitian:
                raise ValidationError(f"generator {j} is not Hermitian")

    @property
    def num_steps(self) -> int:
        return self.theta.shape[0]


def unitary_derivative(theta_p: np.ndarray, generators: np.ndarray, eps: float):
    """U_p = exp(-i eps sum theta_j B_j) and its exact parameter derivatives.

    Uses the spectral divided-difference kernel
    (exp(-i la) - exp(-i lb)) / (la - lb) with the analytic diagonal limit,
    so degenerate eigenvalues need no special casing.
    """
    a = eps * np.tensordot(theta_p, generators, axes=(0, 0))
    lam, v = np.linalg.eigh(0.5 * (a + dag(a)))
    phase = np.exp(-1j * lam)
    diff = lam[:, None] - lam[None, :]
    num = phase[:, None] - phase[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = np.where(np.abs(diff) > 1e-12, num / np.where(diff == 0, 1, diff),
                          -1j * phase[:, None])
    u = (v * phase) @ dag(v)
    dus = np.empty((len(generators),) + a.shape, dtype=complex)
    for j, b in enumerate(generators):
        bt = dag(v) @ (eps * b) @ v
        dus[j] = v @ (bt * kernel) @ dag(v)
    return u, dus


# ---------------------------------------------------------------------------
# controlled chain workspace
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlChain:
    """Bin Kraus set, boundaries and generator basis of a controlled source."""

    eps: float
    kraus: np.ndarray  # (d+1, D, D)
    generators: np.ndarray
    phi_i: np.ndarray
    phi_f: np.ndarray
    port_index: int

    @property
    def dim(self) -> int:
        return self.kraus.shape[1]

    @property
    def num_generators(self) -> int:
        return len(self.generators)

    def random_theta(self, num_steps: int, scale: float, rng) -> np.ndarray:
        return rng.uniform(-scale, scale, size=(num_steps, self.num_generators))


def control_chain(model: SourceModel, num_steps: int | None = None,
                  generators: np.ndarray | None = None) -> ControlChain:
    """Chain data of a model whose Hamiltonian is handed over to controls."""
    if num_steps is None:
        num_steps = model.num_steps
    if num_steps != model.num_steps:
        from .model import Schedule
        model = model.with_schedule(Schedule(
            num_steps, model.horizon / num_steps,
            constant=np.zeros((model.dim, model.dim))))
    ops = np.array(kraus_step_ops(model))
    ports = [i for i, j in enumerate(model.jumps) if j.channel != "loss"]
    if generators is None:
        generators = hermitian_basis(model.dim)
    return ControlChain(eps=model.schedule.step, kraus=ops,
                        generators=np.asarray(generators, dtype=complex),
                        phi_i=model.phi_i.copy(), phi_f=model.phi_f.copy(),
                        port_index=1 + ports[0])


class _Workspace:
    """Per-theta precomputation shared by objective and gradient passes."""

    def __init__(self, chain: ControlChain, theta: np.ndarray,
                 with_derivatives: bool = True):
        theta = np.asarray(theta, dtype=float)
        m_steps = theta.shape[0]
        d = chain.dim
        self.chain = chain
        self.m_steps = m_steps
        self.k_mat = kraus_channel(chain.kraus)
        self.us = np.empty((m_steps, d, d), dtype=complex)
        self.dus = np.empty((m_steps, chain.num_generators, d, d), dtype=complex) \
            if with_derivatives else None
        self.u_mats = np.empty((m_steps, d * d, d * d), dtype=complex)
        for p in range(m_steps):
            if with_derivatives:
                u, du = unitary_derivative(theta[p], chain.generators, chain.eps)
                self.dus[p] = du
            else:
                a = chain.eps * np.tensordot(theta[p], chain.generators, axes=(0, 0))
                lam, v = np.linalg.eigh(0.5 * (a + dag(a)))
                u = (v * np.exp(-1j * lam)) @ dag(v)
            self.us[p] = u
            self.u_mats[p] = unitary_superop(u)
        # prefix vectors e[m] = E_0^m vec(rho_i) and suffix covectors
        self.e = np.empty((m_steps + 1, d * d), dtype=complex)
        self.e[0] = vec(np.outer(chain.phi_i, chain.phi_i.conj()))
        for m in range(1, m_steps + 1):
            self.e[m] = self.u_mats[m - 1] @ (self.k_mat @ self.e[m - 1])
        self.g = np.empty((m_steps + 2, d * d), dtype=complex)
        self.g[m_steps + 1] = vec_projector(chain.phi_f).conj()
        self.g[m_steps] = self.g[m_steps + 1] @ self.u_mats[m_steps - 1]
        for n in range(m_steps - 1, 0, -1):
            self.g[n] = (self.g[n + 1] @ self.k_mat) @ self.u_mats[n - 1]
        self.g[0] = self.g[1] @ self.k_mat

    @property
    def norm_sq(self) -> float:
        return float((self.g[self.m_steps + 1] @ self.e[self.m_steps]).real)

    def f_vec(self, p: int) -> np.ndarray:
        """R_0^{p-1} vec(rho_i), the prefix with the trailing bin channel."""
        return self.k_mat @ self.e[p - 1] if p >= 1 else self.e[0]

    def g_cov(self, p: int) -> np.ndarray:
        """Covector of L_{p+1}^M (bare boundary at p = M)."""
        if p >= self.m_steps:
            return self.g[self.m_steps + 1]
        return self.g[p + 1] @ self.k_mat

    def contract_derivative(self, p: int, a_mat: np.ndarray) -> np.ndarray:
        """Tr(d(U_p (x) U_p*)/dtheta_{p,j} @ A) for all generators j."""
        d = self.chain.dim
        a4 = a_mat.reshape(d, d, d, d, order="F")
        u = self.us[p - 1]
        dus = self.dus[p - 1]
        out = np.einsum("bjl,ik,klij->b", dus.conj(), u, a4, optimize=True)
        out += np.einsum("jl,bik,klij->b", u.conj(), dus, a4, optimize=True)
        return out


@dataclass
class GradientReport:
    grad: np.ndarray
    objective: float
    wall_time_s: float
    method: str = "adjoint"


def _insertion_matrix(insertion) -> np.ndarray:
    """Superoperator of the gate M(X) = Q X P^dag for insertion = (P, Q)."""
    p_op, q_op = insertion
    return sandwich(q_op, p_op)


# ---------------------------------------------------------------------------
# single sums
# ---------------------------------------------------------------------------

def single_sum_value(chain: ControlChain, theta: np.ndarray, insertion,
                     f) -> float:
    ws = _Workspace(chain, theta, with_derivatives=False)
    m_ins = _insertion_matrix(insertion)
    return float(sum(
        f(complex((ws.g[m] @ m_ins) @ ws.e[m - 1]))
        for m in range(1, ws.m_steps + 1)))


def grad_single_sum(chain: ControlChain, theta: np.ndarray, insertion,
                    f, fprime, ws: _Workspace | None = None) -> GradientReport:
    """Gradient of Gamma = sum_m f(gamma_m) in O(M) chain sweeps."""
    t0 = time.perf_counter()
    if ws is None:
        ws = _Workspace(chain, theta)
    m_steps = ws.m_steps
    m_ins = _insertion_matrix(insertion)
    gam = np.empty(m_steps + 1, dtype=complex)
    for m in range(1, m_steps + 1):
        gam[m] = (ws.g[m] @ m_ins) @ ws.e[m - 1]
    objective = float(sum(f(complex(z)) for z in gam[1:]))
    fp = np.array([fprime(complex(z)) for z in gam[1:]])

    d2 = chain.dim ** 2
    r_list = np.zeros((m_steps + 1, d2), dtype=complex)
    r = np.zeros(d2, dtype=complex)
    for p in range(1, m_steps + 1):
        prev = ws.u_mats[p - 2] @ r if p >= 2 else r
        r = ws.k_mat @ prev + fp[p - 1] * (m_ins @ ws.e[p - 1])
        r_list[p] = r

    grad = np.zeros_like(np.asarray(theta, dtype=float))
    l_cov = np.zeros(d2, dtype=complex)
    for p in range(m_steps, 0, -1):
        a_mat = np.outer(ws.f_vec(p), l_cov) + np.outer(r_list[p], ws.g_cov(p))
        grad[p - 1] = 2.0 * ws.contract_derivative(p, a_mat).real
        l_cov = (l_cov @ ws.u_mats[p - 1]) @ ws.k_mat + fp[p - 1] * (ws.g[p] @ m_ins)
    return GradientReport(grad=grad, objective=objective,
                          wall_time_s=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# double sums
# ---------------------------------------------------------------------------

def double_sum_value(chain: ControlChain, theta: np.ndarray,
                     insertion_outer, insertion_inner, f) -> float:
    ws = _Workspace(chain, theta, with_derivatives=False)
    m1 = _insertion_matrix(insertion_outer)
    m2 = _insertion_matrix(insertion_inner)
    total = 0.0
    cols = np.zeros((chain.dim ** 2, 0), dtype=complex)
    for n in range(1, ws.m_steps + 1):
        if cols.shape[1]:
            row = (ws.g[n] @ m1) @ cols
            total += sum(f(complex(z)) for z in row)
        new_col = m2 @ ws.e[n - 1]
        stacked = np.column_stack([ws.k_mat @ cols, new_col]) \
            if cols.shape[1] else new_col.reshape(-1, 1)
        cols = ws.u_mats[n - 1] @ stacked
    return float(total)


def grad_double_sum(chain: ControlChain, theta: np.ndarray,
                    insertion_outer, insertion_inner, f, fprime,
                    ws: _Workspace | None = None) -> GradientReport:
    """Gradient of Gamma = sum_{n>m} f(gamma_{n,m}) in O(M^2) sweeps.

    The forward pass batches the inner-inserted columns u_n^(m) and stores
    the per-step snapshots (O(M^2 D^2) memory); the backward pass carries
    the covector matrix c_{p,m} for all m at once, so each step costs one
    (M x D^2) by (D^2 x D^2) product and the total stays O(M^2 D^4).
    """
    t0 = time.perf_counter()
    if ws is None:
        ws = _Workspace(chain, theta)
    m_steps = ws.m_steps
    d2 = chain.dim ** 2
    m1 = _insertion_matrix(insertion_outer)
    m2 = _insertion_matrix(insertion_inner)
    a_cov = np.empty((m_steps + 1, d2), dtype=complex)
    for n in range(1, m_steps + 1):
        a_cov[n] = ws.g[n] @ m1

    fp_rows = [None] * (m_steps + 1)  # fprime(gamma[n, m]) for m = 1..n-1
    u_store = [None] * (m_steps + 1)  # columns u_p^(m), m = 1..p
    r_list = np.zeros((m_steps + 1, d2), dtype=complex)
    objective = 0.0
    cols = np.zeros((d2, 0), dtype=complex)
    r = np.zeros(d2, dtype=complex)
    for n in range(1, m_steps + 1):
        if cols.shape[1]:
            row = a_cov[n] @ cols
            objective += float(sum(f(complex(z)) for z in row))
            fp = np.array([fprime(complex(z)) for z in row])
            s_n = cols @ fp
        else:
            fp = np.zeros(0, dtype=complex)
            s_n = np.zeros(d2, dtype=complex)
        fp_rows[n] = fp
        new_col = m2 @ ws.e[n - 1]
        u_store[n] = np.column_stack([cols, new_col]) if cols.shape[1] \
            else new_col.reshape(-1, 1)
        prev = ws.u_mats[n - 2] @ r if n >= 2 else r
        r = ws.k_mat @ prev + m1 @ s_n
        r_list[n] = r
        cols = ws.u_mats[n - 1] @ np.column_stack([ws.k_mat @ cols, new_col]) \
            if cols.shape[1] else (ws.u_mats[n - 1] @ new_col).reshape(-1, 1)

    grad = np.zeros_like(np.asarray(theta, dtype=float))
    c_rows = np.zeros((m_steps + 1, d2), dtype=complex)  # c_{p,m} in row m
    l_cov = np.zeros(d2, dtype=complex)
    for p in range(m_steps, 0, -1):
        # columns m < p carry R_m^{p-1} = K E_m^{p-1}; the m = p column has
        # the empty span R_p^{p-1} = identity, so no channel factor
        w_mat = np.outer(u_store[p][:, -1], c_rows[p])
        if p > 1:
            w_mat = w_mat + (ws.k_mat @ u_store[p][:, :-1]) @ c_rows[1: p]
        a_mat = np.outer(ws.f_vec(p), l_cov) + w_mat \
            + np.outer(r_list[p], ws.g_cov(p))
        grad[p - 1] = 2.0 * ws.contract_derivative(p, a_mat).real
        l_src = (c_rows[p] @ ws.u_mats[p - 1]) @ m2
        l_cov = (l_cov @ ws.u_mats[p - 1]) @ ws.k_mat + l_src
        if p > 1:
            c_rows[1: p] = (c_rows[1: p] @ ws.u_mats[p - 1]) @ ws.k_mat \
                + np.outer(fp_rows[p], a_cov[p])
    return GradientReport(grad=grad, objective=objective,
                          wall_time_s=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# postselection norm and the Q2 objective
# ---------------------------------------------------------------------------

def norm_gradient(chain: ControlChain, theta: np.ndarray,
                  ws: _Workspace | None = None):
    """N^2 and its exact control gradient from the single contraction chain."""
    if ws is None:
        ws = _Workspace(chain, theta)
    grad = np.zeros_like(np.asarray(theta, dtype=float))
    for p in range(1, ws.m_steps + 1):
        a_mat = np.outer(ws.f_vec(p), ws.g_cov(p))
        grad[p - 1] = ws.contract_derivative(p, a_mat).real
    return ws.norm_sq, grad


def q2_value(chain: ControlChain, theta: np.ndarray) -> float:
    """Discrete two-point QFI contribution Q2 of the controlled chain."""
    k0 = chain.kraus[0]
    k1 = chain.kraus[chain.port_index]
    ws = _Workspace(chain, theta, with_derivatives=False)
    n2 = ws.norm_sq
    if n2 < TOL.postselection_floor:
        raise PostselectionTooUnlikely(f"N^2 = {n2:.3e} below floor")
    abs2 = lambda z: abs(z) ** 2
    obj_g = _pair_sum(ws, sandwich(k1, k0), sandwich(k0, k1), abs2)
    obj_chi = _pair_sum(ws, sandwich(k0, k1), sandwich(k0, k1), abs2)
    return 2.0 * (obj_g - obj_chi) / n2 ** 2


def _pair_sum(ws: _Workspace, m1: np.ndarray, m2: np.ndarray, f) -> float:
    total = 0.0
    cols = np.zeros((ws.chain.dim ** 2, 0), dtype=complex)
    for n in range(1, ws.m_steps + 1):
        if cols.shape[1]:
            row = (ws.g[n] @ m1) @ cols
            total += float(np.sum([f(complex(z)) for z in row]))
        new_col = m2 @ ws.e[n - 1]
        stacked = np.column_stack([ws.k_mat @ cols, new_col]) \
            if cols.shape[1] else new_col.reshape(-1, 1)
        cols = ws.u_mats[n - 1] @ stacked
    return total


def grad_q2(chain: ControlChain, theta: np.ndarray) -> GradientReport:
    """Exact gradient of the discrete Q2 assembled by the quotient rule.

    Q2 = 2 (|Cg|^2-sum - |Cchi|^2-sum) / N^4; the numerator gradients come
    from two double-sum passes with f(z) = |z|^2 and the denominator from
    the single-contraction norm chain.
    """
    t0 = time.perf_counter()
    ws = _Workspace(chain, theta)
    n2 = ws.norm_sq
    if n2 < TOL.postselection_floor:
        raise PostselectionTooUnlikely(f"N^2 = {n2:.3e} below floor")
    k0 = chain.kraus[0]
    k1 = chain.kraus[chain.port_index]
    f_abs2 = lambda z: abs(z) ** 2
    fp_abs2 = lambda z: np.conj(z)
    rep_g = grad_double_sum(chain, theta, (k0, k1), (k1, k0), f_abs2, fp_abs2, ws=ws)
    rep_chi = grad_double_sum(chain, theta, (k1, k0), (k1, k0), f_abs2, fp_abs2, ws=ws)
    _, dn2 = norm_gradient(chain, theta, ws=ws)
    num = rep_g.objective - rep_chi.objective
    grad = (2.0 * (rep_g.grad - rep_chi.grad) / n2 ** 2
            - 4.0 * num / n2 ** 3 * dn2)
    q2 = 2.0 * num / n2 ** 2
    return GradientReport(grad=grad, objective=q2,
                          wall_time_s=time.perf_counter() - t0)


def finite_difference(value_fn, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar objective."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for p in range(theta.shape[0]):
        for j in range(theta.shape[1]):
            up = theta.copy()
            up[p, j] += h
            dn = theta.copy()
            dn[p, j] -= h
            grad[p, j] = (value_fn(up) - value_fn(dn)) / (2 * h)
    return grad
