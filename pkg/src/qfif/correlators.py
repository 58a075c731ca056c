"""Two-time and multi-time field correlators from source dynamics alone.

Every correlator of the emitted field reduces, via the quantum regression
theorem, to a nested channel evolution of the source with operator
insertions: annihilation-side operators multiply the evolving matrix from
the left, creation-side (daggered) operators from the right.  With the
backward-propagated projector P_f(t) = E^dag(T,t)(|phi_f><phi_f|) and the
forward state rho_i(s), the two used most are

    C_g(t, s)   = Tr(L^dag P_f(t) E(t,s)(L rho_i(s))) / N^2      (t >= s)
    C_chi(t, s) = Tr(P_f(t) L E(t,s)(L rho_i(s))) / N^2

together with the flux n(t) = Tr(P_f(t) L rho_i(t) L^dag) and the
postselection probability N^2 = <phi_f| E(T,0)(rho_i) |phi_f>.

Loss-tagged jumps participate in the channel but are never inserted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PostselectionTooUnlikely, ValidationError
from .linalg import dag, unvec, vec, vec_projector
from .model import MODE_IDENTICAL, SourceModel
from .dynamics import StepPropagators

LEFT = "left"
RIGHT = "right"


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def normalization(model: SourceModel, props: StepPropagators | None = None) -> float:
    """Postselection probability N^2 = <phi_f| E(T,0)(rho_i) |phi_f|>."""
    if props is None:
        props = StepPropagators(model)
    v = props.span_matrix(0, props.num_steps) @ vec(model.rho_i())
    val = vec_projector(model.phi_f).conj() @ v
    if abs(val.imag) > 1e-10:
        raise ValidationError(f"normalization has imaginary part {val.imag:.2e}")
    n2 = float(val.real)
    if n2 < model.norm_floor:
        raise PostselectionTooUnlikely(
            f"N^2 = {n2:.3e} below floor {model.norm_floor:.1e}")
    return n2


# ---------------------------------------------------------------------------
# grid evolution helpers
# ---------------------------------------------------------------------------

def _grid_matrices(model: SourceModel, props: StepPropagators, m_grid: int):
    """Channel matrices for each of the m_grid intervals of the time grid."""
    if m_grid < 1:
        raise ValidationError("grid needs at least one interval")
    if props.kind == "exact" and model.schedule.is_constant:
        delta = model.horizon / m_grid
        gen = props._liou.generator(1)
        from .linalg import expm
        g = expm(delta * gen)
        return [g] * m_grid, delta
    if props.num_steps % m_grid != 0:
        raise ValidationError(
            f"grid ({m_grid}) must divide the schedule steps ({props.num_steps})")
    stride = props.num_steps // m_grid
    mats = [props.span_matrix((j - 1) * stride, j * stride) for j in range(1, m_grid + 1)]
    return mats, model.horizon / m_grid


def _forward_backward(model, grid_mats):
    """Vectorized rho_i(t_k) and P_f(t_k) on the grid (raw, unnormalized)."""
    m_grid = len(grid_mats)
    d2 = model.dim ** 2
    rho = np.empty((m_grid + 1, d2), dtype=complex)
    rho[0] = vec(model.rho_i())
    for k in range(m_grid):
        rho[k + 1] = grid_mats[k] @ rho[k]
    pf = np.empty((m_grid + 1, d2), dtype=complex)
    pf[m_grid] = vec_projector(model.phi_f)
    for k in range(m_grid, 0, -1):
        pf[k - 1] = dag(grid_mats[k - 1]) @ pf[k]
    return rho, pf


def _spectral_decomposition(g: np.ndarray):
    """Eigendecomposition of a grid channel, or None if too ill-conditioned."""
    try:
        w, v = np.linalg.eig(g)
        vinv = np.linalg.inv(v)
    except np.linalg.LinAlgError:
        return None
    resid = np.max(np.abs((v * w) @ vinv - g))
    if resid > 1e-11 * max(1.0, np.max(np.abs(g))):
        return None
    return w, v, vinv


@dataclass
class CorrelatorGrid:
    """Lower-triangular two-time correlators on a uniform grid.

    ``cg[k, j]`` and ``cchi[k, j]`` hold the normalized correlators at
    (t_k, t_j) for j <= k; entries above the diagonal are zero.  ``flux`` is
    the raw n(t) (not divided by ``norm_sq``), so cg[k, k] * norm_sq equals
    flux[k] up to roundoff.
    """

    times: np.ndarray
    cg: np.ndarray
    cchi: np.ndarray
    flux: np.ndarray
    norm_sq: float
    upper_bound_flag: bool = False


def two_point_grid(model: SourceModel, props: StepPropagators | None = None,
                   m_grid: int | None = None) -> CorrelatorGrid:
    """Fill the lower triangle of C_g, C_chi and the flux on a uniform grid.

    The generic path is a forward sweep of the insertions L rho_i(s), one
    column per s, at O(m_grid^2 D^4) cost.  Time-independent models instead
    go through one eigendecomposition of the grid channel, which brings the
    pair cost down to O(m_grid^2 D^2); the two paths agree to roundoff and
    the spectral one falls back automatically if the eigenbasis is
    ill-conditioned.
    """
    if props is None:
        props = StepPropagators(model)
    if m_grid is None:
        m_grid = props.num_steps
    l_op = model.single_port_jump()
    grid_mats, delta = _grid_matrices(model, props, m_grid)
    rho, pf = _forward_backward(model, grid_mats)
    norm_val = vec_projector(model.phi_f).conj() @ rho[m_grid]
    n2 = float(norm_val.real)
    if n2 < model.norm_floor:
        raise PostselectionTooUnlikely(
            f"N^2 = {n2:.3e} below floor {model.norm_floor:.1e}")

    d = model.dim
    ml = np.kron(np.eye(d), l_op)  # vec(L X) = (I (x) L) vec(X)
    x0 = (ml @ rho.T).T  # vec(L rho_i(t_j)) rows
    pf_mats = pf.reshape(m_grid + 1, d, d).transpose(0, 2, 1)
    wg = np.einsum("kab,bc->kac", pf_mats, l_op)            # P_f(t_k) L
    wchi = np.einsum("ab,kbc->kac", dag(l_op), pf_mats)     # L^dag P_f(t_k)
    wg_vec = wg.transpose(0, 2, 1).reshape(m_grid + 1, d * d).conj()
    wchi_vec = wchi.transpose(0, 2, 1).reshape(m_grid + 1, d * d).conj()

    flux = np.einsum("kb,kb->k", wg_vec, x0).real  # Tr(L^dag P_f L rho)

    cg = np.zeros((m_grid + 1, m_grid + 1), dtype=complex)
    cchi = np.zeros((m_grid + 1, m_grid + 1), dtype=complex)

    constant = model.schedule.is_constant
    spec = _spectral_decomposition(grid_mats[0]) if constant else None
    if spec is not None:
        w, v, vinv = spec
        xt = x0 @ vinv.T  # rows: Vinv @ x0_j
        ag = wg_vec @ v  # cg_raw[k, j] = sum_q ag[k, q] w_q^(k-j) xt[j, q]
        achi = wchi_vec @ v
        lam_pow = np.ones_like(w)
        for lag in range(m_grid + 1):
            rows = slice(lag, m_grid + 1)
            cols = slice(0, m_grid + 1 - lag)
            kern = xt[cols] * lam_pow
            cg[np.arange(lag, m_grid + 1), np.arange(0, m_grid + 1 - lag)] = \
                np.einsum("kq,kq->k", ag[rows], kern)
            cchi[np.arange(lag, m_grid + 1), np.arange(0, m_grid + 1 - lag)] = \
                np.einsum("kq,kq->k", achi[rows], kern)
            lam_pow = lam_pow * w
    else:
        x = np.asfortranarray(x0.T.copy())  # columns evolve in place
        for k in range(m_grid + 1):
            cg[k, : k + 1] = wg_vec[k] @ x[:, : k + 1]
            cchi[k, : k + 1] = wchi_vec[k] @ x[:, : k + 1]
            if k < m_grid:
                x[:, : k + 1] = grid_mats[k] @ x[:, : k + 1]

    diag = np.abs(cg[np.arange(m_grid + 1), np.arange(m_grid + 1)].imag)
    if diag.size and diag.max() > 1e-8 * max(1.0, np.abs(cg).max()):
        raise ValidationError("diagonal of C_g is not real: Hermiticity violated")

    return CorrelatorGrid(
        times=np.arange(m_grid + 1) * delta,
        cg=cg / n2,
        cchi=cchi / n2,
        flux=flux,
        norm_sq=n2,
        upper_bound_flag=model.has_loss,
    )


@dataclass
class TwoPortGrid:
    """Correlators entering the general two-port QFI, lower triangles."""

    times: np.ndarray
    c2_abba: np.ndarray  # <a_t^dag b_s^dag b_t a_s> / N^2
    c2_bbaa: np.ndarray  # <b_t^dag b_s^dag a_t a_s> / N^2
    c1_aa: np.ndarray
    c1_bb: np.ndarray
    c1_ab: np.ndarray  # <a_t^dag b_t> / N^2
    norm_sq: float
    upper_bound_flag: bool = False


def two_point_grid_two_port(model: SourceModel, props: StepPropagators | None = None,
                            m_grid: int | None = None) -> TwoPortGrid:
    """Two-port analogue of :func:`two_point_grid` for a single source.

    Both four-point correlators share the evolved insertion
    E(t,s)(L_A rho_i(s) L_B^dag), so one sweep fills both triangles.
    """
    if props is None:
        props = StepPropagators(model)
    if m_grid is None:
        m_grid = props.num_steps
    la = model.port_jump("A")
    lb = model.port_jump("B")
    grid_mats, delta = _grid_matrices(model, props, m_grid)
    rho, pf = _forward_backward(model, grid_mats)
    n2 = float((vec_projector(model.phi_f).conj() @ rho[m_grid]).real)
    if n2 < model.norm_floor:
        raise PostselectionTooUnlikely(
            f"N^2 = {n2:.3e} below floor {model.norm_floor:.1e}")

    d = model.dim
    rho_mats = rho.reshape(m_grid + 1, d, d).transpose(0, 2, 1)
    pf_mats = pf.reshape(m_grid + 1, d, d).transpose(0, 2, 1)

    # one-point correlators: Tr(P_f L_y rho L_x^dag) for (x, y) insertions
    def one_point(lx, ly):
        return np.einsum("kab,bc,kcd,da->k", pf_mats, ly, rho_mats, dag(lx),
                         optimize=True)

    c1_aa = one_point(la, la).real
    c1_bb = one_point(lb, lb).real
    c1_ab = one_point(la, lb)

    # insertion at s: X(s) = L_A rho_i(s) L_B^dag, evolved to t
    x0 = np.einsum("ab,kbc,cd->kad", la, rho_mats, dag(lb))
    x0_vec = x0.transpose(0, 2, 1).reshape(m_grid + 1, d * d)
    # abba reads Tr(M X) with M = L_A^dag P_f L_B; bbaa with M = L_B^dag P_f L_A.
    # Tr(M X) = vec(M^dag)^dag vec(X), so the covector rows are conj(vec(M^dag)).
    m_abba_dag = np.einsum("ab,kbc,cd->kad", dag(lb), pf_mats, la)
    m_bbaa_dag = np.einsum("ab,kbc,cd->kad", dag(la), pf_mats, lb)
    w_abba_vec = np.conj(np.transpose(m_abba_dag, (0, 2, 1)).reshape(m_grid + 1, d * d))
    w_bbaa_vec = np.conj(np.transpose(m_bbaa_dag, (0, 2, 1)).reshape(m_grid + 1, d * d))

    c2_abba = np.zeros((m_grid + 1, m_grid + 1), dtype=complex)
    c2_bbaa = np.zeros((m_grid + 1, m_grid + 1), dtype=complex)
    constant = model.schedule.is_constant
    spec = _spectral_decomposition(grid_mats[0]) if constant else None
    if spec is not None:
        w, v, vinv = spec
        xt = x0_vec @ vinv.T
        a1 = w_abba_vec @ v
        a2 = w_bbaa_vec @ v
        lam_pow = np.ones_like(w)
        for lag in range(m_grid + 1):
            rows = np.arange(lag, m_grid + 1)
            cols = np.arange(0, m_grid + 1 - lag)
            kern = xt[cols] * lam_pow
            c2_abba[rows, cols] = np.einsum("kq,kq->k", a1[rows], kern)
            c2_bbaa[rows, cols] = np.einsum("kq,kq->k", a2[rows], kern)
            lam_pow = lam_pow * w
    else:
        x = np.asfortranarray(x0_vec.T.copy())
        for k in range(m_grid + 1):
            c2_abba[k, : k + 1] = w_abba_vec[k] @ x[:, : k + 1]
            c2_bbaa[k, : k + 1] = w_bbaa_vec[k] @ x[:, : k + 1]
            if k < m_grid:
                x[:, : k + 1] = grid_mats[k] @ x[:, : k + 1]

    return TwoPortGrid(
        times=np.arange(m_grid + 1) * delta,
        c2_abba=c2_abba / n2,
        c2_bbaa=c2_bbaa / n2,
        c1_aa=c1_aa / n2,
        c1_bb=c1_bb / n2,
        c1_ab=c1_ab / n2,
        norm_sq=n2,
        upper_bound_flag=model.has_loss,
    )


# ---------------------------------------------------------------------------
# n-point correlators
# ---------------------------------------------------------------------------

def _time_to_step(t: float, eps: float, num_steps: int) -> int:
    k = int(round(t / eps))
    if abs(t - k * eps) > 1e-9 * max(1.0, abs(t)) or not 0 <= k <= num_steps:
        raise ValidationError(f"insertion time {t} is not on the step grid")
    return k


def n_point(model: SourceModel, insertions, props: StepPropagators | None = None,
            norm_sq: float | None = None) -> complex:
    """Normalized n-point correlator with explicit operator insertions.

    ``insertions`` is a list of ``(time, side, jump_index)`` with times sorted
    in descending order; ``side`` is ``"left"`` for annihilation-type
    insertions (L applied on the left of the evolving matrix) and ``"right"``
    for creation-type ones (L^dag applied on the right).  ``jump_index``
    indexes the port-tagged jumps of the model.  An empty list returns 1.
    """
    if props is None:
        props = StepPropagators(model)
    ports = [j.matrix for j in model.port_jumps()]
    times = [ins[0] for ins in insertions]
    if any(times[i] < times[i + 1] for i in range(len(times) - 1)):
        raise ValidationError("insertion times must be sorted in descending order")
    steps = [_time_to_step(t, props.eps, props.num_steps) for t in times]

    if norm_sq is None:
        norm_sq = normalization(model, props)

    x = model.rho_i().astype(complex)
    prev = 0
    # walk from the earliest insertion up
    for ins, k in sorted(zip(insertions, steps), key=lambda p: (p[1],)):
        _, side, idx = ins
        if not 0 <= idx < len(ports):
            raise ValidationError(f"jump index {idx} out of range")
        x = unvec(props.span_matrix(prev, k) @ vec(x))
        if side == LEFT:
            x = ports[idx] @ x
        elif side == RIGHT:
            x = x @ dag(ports[idx])
        else:
            raise ValidationError(f"insertion side must be 'left' or 'right', got {side!r}")
        prev = k
    x = unvec(props.span_matrix(prev, props.num_steps) @ vec(x))
    val = model.phi_f.conj() @ x @ model.phi_f
    return complex(val / norm_sq)


# ---------------------------------------------------------------------------
# two-photon mixing measurement
# ---------------------------------------------------------------------------

_PORTS = ("a", "b")


def _four_point(model, t, s, x, y, z, w, props, norm_sq):
    """<x_t^dag y_s^dag z_t w_s> for port labels in {'a','b'}, t > s."""
    idx = {p: i for i, p in enumerate(_PORTS)}
    return n_point(
        model,
        [(t, LEFT, idx[z]), (t, RIGHT, idx[x]), (s, LEFT, idx[w]), (s, RIGHT, idx[y])],
        props=props, norm_sq=norm_sq)


def _mix_coefficients(t, s, theta1_rate, theta2):
    """Coefficient of each four-point correlator in the mixed G2."""
    kappa = {
        ("a", t): np.exp(1j * theta1_rate * t) * np.cos(theta2),
        ("b", t): np.sin(theta2),
        ("a", s): np.exp(1j * theta1_rate * s) * np.cos(theta2),
        ("b", s): np.sin(theta2),
    }
    coeffs = {}
    for x in _PORTS:
        for y in _PORTS:
            for z in _PORTS:
                for w in _PORTS:
                    coeffs[(x, y, z, w)] = (np.conj(kappa[(x, t)]) * np.conj(kappa[(y, s)])
                                            * kappa[(z, t)] * kappa[(w, s)])
    return coeffs


def g2_mixing(model: SourceModel, theta1_rate: float, theta2: float,
              props: StepPropagators | None = None):
    """Mixed second-order correlation after a phase shifter and a beam mixer.

    The output mode is c_t = a_t e^{i theta1 t} cos(theta2) + b_t sin(theta2);
    the returned callable evaluates G2_c(t, s) = <c_t^dag c_s^dag c_t c_s>
    for t > s by expanding into the sixteen four-point port correlators.
    """
    if props is None:
        props = StepPropagators(model)
    n2 = normalization(model, props)

    def g2(t: float, s: float) -> float:
        if t <= s:
            raise ValidationError("mixing correlator requires t > s")
        coeffs = _mix_coefficients(t, s, theta1_rate, theta2)
        total = 0.0 + 0.0j
        for (x, y, z, w), c in coeffs.items():
            if abs(c) < 1e-15:
                continue
            total += c * _four_point(model, t, s, x, y, z, w, props, n2)
        if abs(total.imag) > 1e-8 * max(1.0, abs(total)):
            raise ValidationError("mixed G2 came out complex; convention bug")
        return float(total.real)

    return g2


@dataclass
class ExtractionReport:
    """Least-squares reconstruction of correlators from mixed-G2 samples."""

    values: dict
    condition_number: float
    singular: bool
    residual: float

    def re_abba(self) -> float:
        return self.values[("a", "b", "b", "a")].real


def extract_two_point(model: SourceModel, t: float, s: float,
                      theta1_rates, theta2s,
                      props: StepPropagators | None = None) -> ExtractionReport:
    """Invert the mixing formula on a sample grid of (theta1*, theta2).

    Builds synthetic G2 samples, then solves the real linear system for the
    sixteen four-point correlators (conjugate pairs share unknowns).  A
    singular system is reported through the condition number, not raised.
    """
    if props is None:
        props = StepPropagators(model)
    combos = [(x, y, z, w) for x in _PORTS for y in _PORTS
              for z in _PORTS for w in _PORTS]
    # conjugation pairs (x,y,z,w) <-> (z,w,x,y); self-paired combos are real
    pair_of = {c: (c[2], c[3], c[0], c[1]) for c in combos}
    unknowns = []  # (combo, "re"/"im")
    seen = set()
    for c in combos:
        if c in seen:
            continue
        seen.add(c)
        seen.add(pair_of[c])
        unknowns.append((c, "re"))
        if pair_of[c] != c:
            unknowns.append((c, "im"))
    col = {u: i for i, u in enumerate(unknowns)}

    rows = []
    rhs = []
    g2_cache = {}
    n2 = normalization(model, props)
    true_vals = {c: _four_point(model, t, s, *c, props, n2) for c in combos}
    for r1 in theta1_rates:
        for th2 in theta2s:
            coeffs = _mix_coefficients(t, s, r1, th2)
            row = np.zeros(len(unknowns))
            sample = 0.0
            for c in combos:
                coef = coeffs[c]
                sample += (coef * true_vals[c]).real
                canon = c if (c, "re") in col else pair_of[c]
                # value(pair) = conj(value(canon)); G2 row in terms of canon
                if canon == c:
                    row[col[(canon, "re")]] += coef.real
                    if (canon, "im") in col:
                        row[col[(canon, "im")]] += -coef.imag
                else:
                    row[col[(canon, "re")]] += coef.real
                    row[col[(canon, "im")]] += coef.imag
            rows.append(row)
            rhs.append(sample)
    a_mat = np.array(rows)
    b_vec = np.array(rhs)
    sol, res, rank, svals = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else np.inf
    values = {}
    for c in combos:
        canon = c if (c, "re") in col else pair_of[c]
        re = sol[col[(canon, "re")]]
        im = sol[col[(canon, "im")]] if (canon, "im") in col else 0.0
        values[c] = complex(re, im) if canon == c else complex(re, -im)
    resid = float(np.linalg.norm(a_mat @ sol - b_vec))
    return ExtractionReport(values=values, condition_number=cond,
                            singular=not np.isfinite(cond) or cond > 1e10,
                            residual=resid)
