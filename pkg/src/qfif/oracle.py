"""Brute-force time-binned state-vector simulation of source and field.

Ground truth for everything else at small bin counts: the joint state of the
D-level source and M qudit bins (one level per emission channel plus vacuum)
is evolved exactly through the same Kraus isometry sequence that defines the
time-bin MPS, then projected on the final source state.  QFI, correlators and
measurement statistics are evaluated by direct expectation values, so any
regression-theorem or transfer-matrix result must match these numbers to
roundoff on the shared discretization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MemoryGuardError, PostselectionTooUnlikely, ValidationError
from .linalg import expm
from .model import SourceModel
from .dynamics import kraus_step_ops

MAX_BINS = 14
MAX_AMPLITUDES = 1 << 26


@dataclass
class BinnedStateVector:
    """Normalized postselected field state over M time-bin qudits.

    ``amplitudes`` has shape (d+1,) * M with bin 1 on axis 0; qudit level 0
    is the empty bin and level 1+j holds one photon of the j-th jump channel.
    """

    amplitudes: np.ndarray
    eps: float
    norm_sq: float
    channels: tuple

    @property
    def num_bins(self) -> int:
        return self.amplitudes.ndim

    @property
    def phys_dim(self) -> int:
        return self.amplitudes.shape[0]

    def port_level(self, channel: str) -> int:
        hits = [i + 1 for i, c in enumerate(self.channels) if c == channel]
        if len(hits) != 1:
            raise ValidationError(f"state has no unique channel {channel!r}")
        return hits[0]


def simulate(model: SourceModel, m_bins: int | None = None) -> BinnedStateVector:
    """Exact application of the bin isometries, then boundary projection."""
    if m_bins is not None and m_bins != model.num_steps:
        if not model.schedule.is_constant:
            raise ValidationError("cannot rebin a time-dependent schedule")
        from .model import Schedule
        model = model.with_schedule(
            Schedule(m_bins, model.horizon / m_bins,
                     constant=model.schedule.hamiltonian(1)))
    m_steps = model.num_steps
    d_phys = len(model.jumps) + 1
    dim = model.dim
    if m_steps > MAX_BINS or dim * d_phys ** m_steps > MAX_AMPLITUDES:
        raise MemoryGuardError(
            f"{m_steps} bins of dimension {d_phys} exceed the oracle guard")
    kraus = kraus_step_ops(model)
    eps = model.schedule.step

    psi = np.zeros((dim,) + (d_phys,) * m_steps, dtype=complex)
    psi[(slice(None),) + (0,) * m_steps] = model.phi_i
    for k in range(1, m_steps + 1):
        u_k = expm(-1j * eps * model.schedule.hamiltonian(k))
        moved = np.moveaxis(psi, k, 1)  # (dim, bin_k, rest...)
        vac = moved[:, 0].copy()
        flat = vac.reshape(dim, -1)
        for alpha in range(d_phys):
            moved[:, alpha] = (u_k @ (kraus[alpha] @ flat)).reshape(vac.shape)
        psi = np.moveaxis(moved, 1, k)
    projected = np.tensordot(model.phi_f.conj(), psi, axes=(0, 0))
    norm_sq = float(np.vdot(projected, projected).real)
    if norm_sq < model.norm_floor:
        raise PostselectionTooUnlikely(f"N^2 = {norm_sq:.3e} below floor")
    return BinnedStateVector(amplitudes=projected / np.sqrt(norm_sq),
                             eps=eps, norm_sq=norm_sq,
                             channels=tuple(j.channel for j in model.jumps))


# ---------------------------------------------------------------------------
# bin operators
# ---------------------------------------------------------------------------

def annihilate(state_arr: np.ndarray, bin_index: int, level: int) -> np.ndarray:
    """Apply the bin annihilation operator |0><level| at a 1-based bin."""
    if not 1 <= bin_index <= state_arr.ndim:
        raise ValidationError(f"bin index {bin_index} out of range")
    out = np.zeros_like(state_arr)
    moved_out = np.moveaxis(out, bin_index - 1, 0)
    moved_in = np.moveaxis(state_arr, bin_index - 1, 0)
    moved_out[0] = moved_in[level]
    return out


def apply_mixing_generator(state: BinnedStateVector) -> np.ndarray:
    """Apply H_d = Sum_m i(A_m^dag B_m - A_m B_m^dag) to the state array.

    On the one-photon-per-bin truncation this is the per-bin rotation
    generator i(|A><B| - |B><A|), which never leaves the truncated space.
    """
    la = state.port_level("A")
    lb = state.port_level("B")
    out = np.zeros_like(state.amplitudes)
    for m in range(state.num_bins):
        moved_out = np.moveaxis(out, m, 0)
        moved_in = np.moveaxis(state.amplitudes, m, 0)
        moved_out[la] += 1j * moved_in[lb]
        moved_out[lb] += -1j * moved_in[la]
    return out


def oracle_qfi(state: BinnedStateVector) -> float:
    """4 (<H_d^2> - <H_d>^2) by direct expectation on the binned state."""
    hd_psi = apply_mixing_generator(state)
    mean = np.vdot(state.amplitudes, hd_psi)
    if abs(mean.imag) > 1e-10:
        raise ValidationError("generator expectation is not real")
    second = float(np.vdot(hd_psi, hd_psi).real)
    return 4.0 * (second - mean.real ** 2)


def oracle_correlator(state: BinnedStateVector, creations, annihilations) -> complex:
    """Exact normally-ordered correlator < prod A^dag  prod A >.

    ``creations`` and ``annihilations`` are lists of (bin_index, channel).
    """
    ket = state.amplitudes
    for b, ch in annihilations:
        ket = annihilate(ket, b, state.port_level(ch))
    bra = state.amplitudes
    for b, ch in creations:
        bra = annihilate(bra, b, state.port_level(ch))
    return complex(np.vdot(bra, ket))


def photon_numbers(state: BinnedStateVector) -> dict:
    """Expected photon count per channel."""
    counts = {}
    for ch in set(state.channels):
        lvl = [i + 1 for i, c in enumerate(state.channels) if c == ch]
        total = 0.0
        for m in range(state.num_bins):
            moved = np.moveaxis(state.amplitudes, m, 0)
            for l in lvl:
                total += float(np.sum(np.abs(moved[l]) ** 2))
        counts[ch] = total
    return counts


def number_sectors(state: BinnedStateVector):
    """(n_A, n_B) photon numbers of every basis index, as integer arrays."""
    la = state.port_level("A")
    lb = state.port_level("B")
    shape = state.amplitudes.shape
    na = np.zeros(shape, dtype=int)
    nb = np.zeros(shape, dtype=int)
    for m in range(state.num_bins):
        idx = [None] * state.num_bins
        levels = np.arange(state.phys_dim)
        broadcast = levels.reshape([-1 if i == m else 1
                                    for i in range(state.num_bins)])
        na = na + (broadcast == la)
        nb = nb + (broadcast == lb)
    return na, nb
