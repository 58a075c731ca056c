"""Declarative source models: level structure, controls, jump operators.

A :class:`SourceModel` is a few-level emitter coupled to one or two
propagating ports (plus optional loss channels), driven over a horizon ``T``
by a piecewise-constant Hamiltonian schedule.  Presets reproduce the
standard worked systems: a laser-driven two-level emitter, the four-level
pi system with two driven decay paths sharing one collective jump operator,
Dicke and Tavis-Cummings ensembles in the permutation-symmetric basis, a
decaying cavity mode, and a two-level emitter with extra dark states.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SchemaError, ValidationError
from .linalg import TOL, dag, is_hermitian

PORT_A = "A"
PORT_B = "B"
LOSS = "loss"

MODE_SINGLE = "single"  # one source emitting into both ports
MODE_IDENTICAL = "identical"  # identical independent sources, one per port


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant Hamiltonian over ``num_steps`` steps of size ``step``.

    Exactly one of three encodings is used: a single constant Hamiltonian,
    explicit per-step Hamiltonians, or coefficients ``theta[k, j]`` over a
    Hermitian generator basis ``generators[j]``.
    """

    num_steps: int
    step: float
    constant: np.ndarray | None = None
    hamiltonians: np.ndarray | None = None  # (M, D, D)
    generators: np.ndarray | None = None  # (B, D, D)
    theta: np.ndarray | None = None  # (M, B)

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValidationError("schedule needs at least one step")
        if self.step <= 0:
            raise ValidationError("schedule step must be positive")
        encodings = [self.constant is not None, self.hamiltonians is not None,
                     self.theta is not None]
        if sum(encodings) != 1:
            raise ValidationError("schedule must use exactly one encoding")
        if self.theta is not None:
            if self.generators is None:
                raise ValidationError("theta schedule requires a generator basis")
            if self.theta.shape != (self.num_steps, len(self.generators)):
                raise SchemaError(
                    f"theta shape {self.theta.shape} does not match "
                    f"({self.num_steps}, {len(self.generators)})")
            for j, b in enumerate(self.generators):
                if not is_hermitian(b):
                    raise ValidationError(f"generator {j} is not Hermitian")
        if self.hamiltonians is not None and len(self.hamiltonians) != self.num_steps:
            raise SchemaError("explicit Hamiltonian list length != num_steps")

    @property
    def horizon(self) -> float:
        return self.num_steps * self.step

    @property
    def is_constant(self) -> bool:
        if self.constant is not None:
            return True
        if self.hamiltonians is not None:
            return all(np.array_equal(self.hamiltonians[0], h) for h in self.hamiltonians)
        return all(np.array_equal(self.theta[0], row) for row in self.theta)

    def hamiltonian(self, k: int) -> np.ndarray:
        """Hamiltonian on step k (1-based, covering ((k-1)*step, k*step])."""
        if not 1 <= k <= self.num_steps:
            raise ValueError(f"step index {k} outside 1..{self.num_steps}")
        if self.constant is not None:
            return self.constant
        if self.hamiltonians is not None:
            return self.hamiltonians[k - 1]
        return np.tensordot(self.theta[k - 1], self.generators, axes=(0, 0))


@dataclass(frozen=True)
class JumpOperator:
    matrix: np.ndarray
    channel: str = PORT_A

    def __post_init__(self):
        if self.channel not in (PORT_A, PORT_B, LOSS):
            raise ValidationError(f"unknown channel tag {self.channel!r}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError("jump operator has non-finite entries")


@dataclass(frozen=True)
class SourceModel:
    """Source description: levels, schedule, jumps, boundary states, horizon."""

    dim: int
    schedule: Schedule
    jumps: tuple
    phi_i: np.ndarray
    phi_f: np.ndarray
    mode: str = MODE_IDENTICAL
    norm_floor: float = TOL.postselection_floor
    name: str = "custom"

    def __post_init__(self):
        if self.mode not in (MODE_SINGLE, MODE_IDENTICAL):
            raise ValidationError(f"unknown mode {self.mode!r}")
        for v, label in ((self.phi_i, "initial"), (self.phi_f, "final")):
            if v.shape != (self.dim,):
                raise SchemaError(f"{label} state has wrong dimension")
            if abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise ValidationError(f"{label} state is not normalized")
        h0 = self.schedule.hamiltonian(1)
        if h0.shape != (self.dim, self.dim):
            raise SchemaError("schedule dimension does not match the model")
        if not is_hermitian(h0):
            raise ValidationError("schedule Hamiltonian is not Hermitian")
        for j in self.jumps:
            if j.matrix.shape != (self.dim, self.dim):
                raise SchemaError("jump operator dimension does not match the model")
        if not self.port_jumps():
            raise ValidationError("model needs at least one port-tagged jump operator")

    @property
    def horizon(self) -> float:
        return self.schedule.horizon

    @property
    def num_steps(self) -> int:
        return self.schedule.num_steps

    def port_jumps(self) -> list:
        return [j for j in self.jumps if j.channel != LOSS]

    def loss_jumps(self) -> list:
        return [j for j in self.jumps if j.channel == LOSS]

    @property
    def has_loss(self) -> bool:
        return bool(self.loss_jumps())

    def port_jump(self, channel: str) -> np.ndarray:
        ops = [j.matrix for j in self.jumps if j.channel == channel]
        if len(ops) != 1:
            raise ValidationError(f"expected exactly one jump on port {channel}")
        return ops[0]

    def single_port_jump(self) -> np.ndarray:
        """The jump operator of an identical-sources model (one port only)."""
        ports = self.port_jumps()
        if len(ports) != 1:
            raise ValidationError(
                "identical-sources mode expects exactly one port jump")
        return ports[0].matrix

    def rho_i(self) -> np.ndarray:
        return np.outer(self.phi_i, self.phi_i.conj())

    def with_schedule(self, schedule: Schedule) -> "SourceModel":
        return replace(self, schedule=schedule)


def product_model(model: SourceModel) -> SourceModel:
    """Two identical independent copies merged into one two-port source.

    L_A = L (x) I and L_B = I (x) L, H = H (x) I + I (x) H, boundary states
    are tensor squares.  Used to reduce identical-sources questions to the
    general two-port machinery (and to the brute-force oracle).
    """
    if model.mode != MODE_IDENTICAL:
        raise ValidationError("product construction expects an identical-sources model")
    l_op = model.single_port_jump()
    d = model.dim
    eye = np.eye(d)
    sched = model.schedule
    if sched.is_constant:
        h = sched.hamiltonian(1)
        new_sched = Schedule(sched.num_steps, sched.step,
                             constant=np.kron(h, eye) + np.kron(eye, h))
    else:
        hams = np.array([np.kron(sched.hamiltonian(k), eye) + np.kron(eye, sched.hamiltonian(k))
                         for k in range(1, sched.num_steps + 1)])
        new_sched = Schedule(sched.num_steps, sched.step, hamiltonians=hams)
    jumps = [JumpOperator(np.kron(l_op, eye), PORT_A),
             JumpOperator(np.kron(eye, l_op), PORT_B)]
    for lj in model.loss_jumps():
        jumps.append(JumpOperator(np.kron(lj.matrix, eye), LOSS))
        jumps.append(JumpOperator(np.kron(eye, lj.matrix), LOSS))
    return SourceModel(
        dim=d * d,
        schedule=new_sched,
        jumps=tuple(jumps),
        phi_i=np.kron(model.phi_i, model.phi_i),
        phi_f=np.kron(model.phi_f, model.phi_f),
        mode=MODE_SINGLE,
        norm_floor=model.norm_floor,
        name=model.name + "_squared",
    )


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _collective_lowering(n_spins: int) -> np.ndarray:
    """Collective lowering operator in the spin-J basis, J = n_spins/2.

    Basis ordering is m = J, J-1, ..., -J (index 0 = fully excited).
    """
    j = n_spins / 2.0
    dim = n_spins + 1
    low = np.zeros((dim, dim))
    for idx in range(dim - 1):
        m = j - idx
        low[idx + 1, idx] = math.sqrt((j + m) * (j - m + 1))
    return low


def _annihilation(dim: int) -> np.ndarray:
    a = np.zeros((dim, dim))
    for n in range(1, dim):
        a[n - 1, n] = math.sqrt(n)
    return a


def _coherent_state(alpha: complex, dim: int) -> np.ndarray:
    n = np.arange(dim)
    log_fact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, dim)))))
    amps = np.exp(-abs(alpha) ** 2 / 2) * alpha ** n / np.exp(0.5 * log_fact)
    return amps / np.linalg.norm(amps)


def _require(cond: bool, msg: str):
    if not cond:
        raise ValidationError(msg)


def two_level(omega: float = 1.0, gamma: float = 1.0, horizon: float = 10.0,
              steps: int = 500, phi_i=None, phi_f=None) -> SourceModel:
    """Laser-driven two-level emitter; basis (|g>, |e>)."""
    _require(gamma > 0, "decay rate must be positive")
    sig = np.array([[0, 1], [0, 0]], dtype=complex)  # |g><e|
    h = omega * sig + np.conj(omega) * dag(sig)
    ground = np.array([1, 0], dtype=complex)
    return SourceModel(
        dim=2,
        schedule=Schedule(steps, horizon / steps, constant=h),
        jumps=(JumpOperator(math.sqrt(gamma) * sig, PORT_A),),
        phi_i=ground if phi_i is None else np.asarray(phi_i, dtype=complex),
        phi_f=ground if phi_f is None else np.asarray(phi_f, dtype=complex),
        mode=MODE_IDENTICAL,
        name="two_level",
    )


def pi_level(omega0: float = 1.0, alpha: float = math.pi / 2, gamma: float = 1.0,
             horizon: float = 10.0, steps: int = 500) -> SourceModel:
    """Four-level emitter with two driven decay paths and one collective jump.

    Basis (|g1>, |e1>, |g2>, |e2>); both transitions emit through
    L = sqrt(gamma) (|g1><e1| + |g2><e2|), the drives differ by phase alpha.
    """
    _require(gamma > 0, "decay rate must be positive")
    s1 = np.zeros((4, 4), dtype=complex)
    s1[0, 1] = 1  # |g1><e1|
    s2 = np.zeros((4, 4), dtype=complex)
    s2[2, 3] = 1  # |g2><e2|
    h = omega0 * (s1 + dag(s1)) + omega0 * (np.exp(1j * alpha) * s2
                                            + np.exp(-1j * alpha) * dag(s2))
    phi = np.zeros(4, dtype=complex)
    phi[0] = phi[2] = 1 / math.sqrt(2)  # (|g1> + |g2>)/sqrt(2)
    return SourceModel(
        dim=4,
        schedule=Schedule(steps, horizon / steps, constant=h),
        jumps=(JumpOperator(math.sqrt(gamma) * (s1 + s2), PORT_A),),
        phi_i=phi, phi_f=phi,
        mode=MODE_IDENTICAL,
        name="pi_level",
    )


def dicke(n_emitters: int = 3, gamma: float = 1.0, horizon: float = 20.0,
          steps: int = 1000) -> SourceModel:
    """N excited emitters decaying collectively; spin-J basis, dim N+1."""
    _require(n_emitters >= 1, "need at least one emitter")
    _require(gamma > 0, "decay rate must be positive")
    dim = n_emitters + 1
    low = _collective_lowering(n_emitters)
    phi_i = np.zeros(dim, dtype=complex)
    phi_i[0] = 1  # fully excited
    phi_f = np.zeros(dim, dtype=complex)
    phi_f[-1] = 1  # collective ground
    return SourceModel(
        dim=dim,
        schedule=Schedule(steps, horizon / steps, constant=np.zeros((dim, dim))),
        jumps=(JumpOperator(math.sqrt(gamma) * low, PORT_A),),
        phi_i=phi_i, phi_f=phi_f,
        mode=MODE_IDENTICAL,
        name="dicke",
    )


def tavis_cummings(n_emitters: int = 2, g: float = 1.0, kappa: float = 10.0,
                   horizon: float = 20.0, steps: int = 1000,
                   cutoff: int | None = None) -> SourceModel:
    """N emitters exchanging excitations with a leaky cavity mode.

    Collective-spin basis (dim N+1) tensored with a photon space truncated at
    ``cutoff`` photons (default: initial excitation number + 2).  The cutoff
    is a config knob; QFI convergence in the cutoff is checked in the
    acceptance suite rather than assumed.
    """
    _require(n_emitters >= 1, "need at least one emitter")
    _require(g > 0 and kappa > 0, "coupling and decay must be positive")
    if cutoff is None:
        cutoff = n_emitters + 2
    _require(cutoff >= n_emitters, "photon cutoff below the initial excitation number")
    spin_dim = n_emitters + 1
    ph_dim = cutoff + 1
    dim = spin_dim * ph_dim
    low = _collective_lowering(n_emitters)
    a = _annihilation(ph_dim)
    h = g * (np.kron(low, dag(a)) + np.kron(dag(low), a))
    phi_i = np.zeros(dim, dtype=complex)
    phi_i[0] = 1  # all emitters excited, cavity empty (spin index 0, photon 0)
    phi_f = np.zeros(dim, dtype=complex)
    phi_f[(spin_dim - 1) * ph_dim] = 1  # emitters in ground, cavity empty
    return SourceModel(
        dim=dim,
        schedule=Schedule(steps, horizon / steps, constant=h),
        jumps=(JumpOperator(math.sqrt(kappa) * np.kron(np.eye(spin_dim), a), PORT_A),),
        phi_i=phi_i, phi_f=phi_f,
        mode=MODE_IDENTICAL,
        name="tavis_cummings",
    )


def cavity(state: str = "coherent", alpha: complex = 1.0, n_photons: int = 1,
           kappa: float = 1.0, horizon: float = 20.0, steps: int = 1000,
           cutoff: int | None = None) -> SourceModel:
    """Decaying cavity mode prepared in a coherent or Fock state.

    Fock cutoffs default to N+2.  Coherent states have Poisson tails, so the
    default cutoff there is ceil(|alpha|^2) + 7; sub-percent QFI accuracy is
    not reachable with an excitation+2 truncation.
    """
    _require(kappa > 0, "decay rate must be positive")
    if state == "fock":
        _require(n_photons >= 0, "photon number must be nonnegative")
        if cutoff is None:
            cutoff = n_photons + 2
        _require(cutoff >= n_photons, "cutoff below the initial photon number")
        dim = cutoff + 1
        phi_i = np.zeros(dim, dtype=complex)
        phi_i[n_photons] = 1
    elif state == "coherent":
        if cutoff is None:
            cutoff = int(math.ceil(abs(alpha) ** 2)) + 7
        dim = cutoff + 1
        phi_i = _coherent_state(alpha, dim)
    else:
        raise ValidationError(f"unknown cavity state {state!r}")
    a = _annihilation(dim)
    phi_f = np.zeros(dim, dtype=complex)
    phi_f[0] = 1  # long-time final state: empty cavity
    return SourceModel(
        dim=dim,
        schedule=Schedule(steps, horizon / steps, constant=np.zeros((dim, dim))),
        jumps=(JumpOperator(math.sqrt(kappa) * a, PORT_A),),
        phi_i=phi_i, phi_f=phi_f,
        mode=MODE_IDENTICAL,
        name=f"cavity_{state}",
    )


def dark_state_k(n_dark: int = 1, gamma: float = 1.0, horizon: float = 10.0,
                 steps: int = 500) -> SourceModel:
    """Two-level emitter with ``n_dark`` dark states the jump never touches.

    Basis (|g>, |e>, |m_1>, ..., |m_k>); L = sqrt(gamma)|g><e| annihilates
    every dark state exactly.  Boundary states default to the uniform
    superposition over the decay-free manifold {|g>, |m_j>}, which is what
    makes vacuum-component interference possible at all.
    """
    _require(n_dark >= 0, "number of dark states must be nonnegative")
    _require(gamma > 0, "decay rate must be positive")
    dim = 2 + n_dark
    l_op = np.zeros((dim, dim), dtype=complex)
    l_op[0, 1] = math.sqrt(gamma)
    phi = np.zeros(dim, dtype=complex)
    idle = [0] + list(range(2, dim))
    phi[idle] = 1 / math.sqrt(len(idle))
    return SourceModel(
        dim=dim,
        schedule=Schedule(steps, horizon / steps, constant=np.zeros((dim, dim))),
        jumps=(JumpOperator(l_op, PORT_A),),
        phi_i=phi, phi_f=phi,
        mode=MODE_IDENTICAL,
        name=f"dark_state_{n_dark}",
    )


_PRESETS = {
    "two_level": two_level,
    "pi_level": pi_level,
    "dicke": dicke,
    "tavis_cummings": tavis_cummings,
    "cavity": cavity,
    "dark_state_k": dark_state_k,
}

# aliases used by the control-optimization level structures
_PRESETS["dark_1"] = lambda **kw: dark_state_k(n_dark=1, **kw)
_PRESETS["dark_2"] = lambda **kw: dark_state_k(n_dark=2, **kw)


def preset(name: str, **params) -> SourceModel:
    """Build a named preset model; unknown names raise ``ValidationError``."""
    if name not in _PRESETS:
        raise ValidationError(
            f"unknown preset {name!r}; known: {sorted(_PRESETS)}")
    return _PRESETS[name](**params)


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------

def _complex_scalar(entry) -> complex:
    if not (isinstance(entry, (list, tuple)) and len(entry) == 2):
        raise SchemaError(f"complex entries are [re, im] pairs, got {entry!r}")
    return complex(entry[0], entry[1])


def _complex_matrix(rows, dim: int) -> np.ndarray:
    mat = np.array([[_complex_scalar(e) for e in row] for row in rows])
    if mat.shape != (dim, dim):
        raise SchemaError(f"matrix shape {mat.shape} does not match dimension {dim}")
    return mat


def _complex_vector(entries, dim: int) -> np.ndarray:
    v = np.array([_complex_scalar(e) for e in entries])
    if v.shape != (dim,):
        raise SchemaError(f"vector length {v.shape} does not match dimension {dim}")
    return v


def load_model(config_text: str) -> SourceModel:
    """Parse and validate a JSON model description.

    Keys: dimension, steps, horizon, one of {hamiltonians | generators+theta},
    jumps (list of {matrix, channel}), initial_state, final_state, optional
    step, mode ("single" | "identical").  Complex numbers are [re, im] pairs.
    """
    try:
        cfg = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config is not valid JSON: {exc}") from exc
    for key in ("dimension", "steps", "horizon", "jumps",
                "initial_state", "final_state"):
        if key not in cfg:
            raise SchemaError(f"config missing required key {key!r}")
    dim = int(cfg["dimension"])
    steps = int(cfg["steps"])
    horizon = float(cfg["horizon"])
    if steps < 1 or horizon <= 0:
        raise SchemaError("steps must be >= 1 and horizon positive")
    step = horizon / steps
    if "step" in cfg and abs(float(cfg["step"]) * steps - horizon) > 1e-12:
        raise SchemaError("step * steps does not equal horizon")

    if "hamiltonians" in cfg:
        hams = np.array([_complex_matrix(m, dim) for m in cfg["hamiltonians"]])
        if len(hams) == 1:
            schedule = Schedule(steps, step, constant=hams[0])
        else:
            schedule = Schedule(steps, step, hamiltonians=hams)
    elif "generators" in cfg and "theta" in cfg:
        gens = np.array([_complex_matrix(m, dim) for m in cfg["generators"]])
        theta = np.array(cfg["theta"], dtype=float)
        schedule = Schedule(steps, step, generators=gens, theta=theta)
    else:
        raise SchemaError("config needs 'hamiltonians' or 'generators'+'theta'")

    jumps = []
    for j in cfg["jumps"]:
        channel = j.get("channel", PORT_A)
        jumps.append(JumpOperator(_complex_matrix(j["matrix"], dim), channel))

    phi_i = _complex_vector(cfg["initial_state"], dim)
    phi_f = _complex_vector(cfg["final_state"], dim)
    for v, label in ((phi_i, "initial"), (phi_f, "final")):
        nrm = np.linalg.norm(v)
        if nrm < 1e-12:
            raise ValidationError(f"{label} state has zero norm")
        if abs(nrm - 1.0) > 1e-12:
            raise ValidationError(f"{label} state is not normalized")

    mode = cfg.get("mode", MODE_IDENTICAL)
    return SourceModel(dim=dim, schedule=schedule, jumps=tuple(jumps),
                       phi_i=phi_i, phi_f=phi_f, mode=mode,
                       norm_floor=float(cfg.get("norm_floor", TOL.postselection_floor)),
                       name=cfg.get("name", "custom"))
