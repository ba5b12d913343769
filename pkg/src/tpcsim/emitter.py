"""Emitter level structure, conditional optical pulses, and imperfection channels.

The spin carries seven levels: three optical ground states, three excited
states, and one metastable shelf. Basis ordering is fixed once here and every
other module refers to these index constants, never to raw integers:

    0: |0>      ground, m_s = 0        (resonantly driven level)
    1: |-1>     ground, m_s = -1       (second qubit level)
    2: |+1>     ground, m_s = +1
    3: |0_e>    excited, m_s = 0
    4: |-1_e>   excited, m_s = -1
    5: |+1_e>   excited, m_s = +1
    6: MS       metastable shelf (loss within one cycle)

Time-bin modes are two-level occupation subsystems (0: vacuum, 1: one photon).
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .qsim import Operator, QuantumState, SubsystemSpec, apply_kraus, basis_ket, tensor

LVL_G0 = 0
LVL_GM1 = 1
LVL_GP1 = 2
LVL_E0 = 3
LVL_EM1 = 4
LVL_EP1 = 5
LVL_MS = 6
SPIN_DIM = 7
SPIN = "spin"

BIN_VAC = 0
BIN_OCC = 1


class EmitterModelError(ValueError):
    pass


@dataclass
class EmitterParams:
    """All branching and fidelity parameters of the emitter.

    ``p_cross`` may be the string ``"auto"``, in which case it is derived from
    the optical detuning through a Lorentzian line factor with the configured
    linewidth. Probabilities are dimensionless; detuning is GHz, linewidth MHz.
    """

    p_cross: float | str = "auto"
    detuning_ghz: float = 0.87
    linewidth_mhz: float = 13.0
    zpl_fraction: float = 0.03
    p_shelve: float = 0.0
    p_spin_flip: float = 0.0
    init_fidelity: float = 0.979
    nuclear_pol: float = 0.838
    p_readout_click: float = 0.167
    pi_pulse_error: float = 0.0

    def resolved_p_cross(self) -> float:
        if self.p_cross == "auto":
            return lorentzian_cross_excitation(self.detuning_ghz, self.linewidth_mhz)
        return float(self.p_cross)

    def validate(self) -> None:
        probs = {
            "p_shelve": self.p_shelve,
            "p_spin_flip": self.p_spin_flip,
            "init_fidelity": self.init_fidelity,
            "nuclear_pol": self.nuclear_pol,
            "p_readout_click": self.p_readout_click,
            "pi_pulse_error": self.pi_pulse_error,
            "p_cross": self.resolved_p_cross(),
        }
        for name, value in probs.items():
            if not 0.0 <= value <= 1.0:
                raise EmitterModelError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 < self.zpl_fraction <= 1.0:
            raise EmitterModelError(f"zpl_fraction must lie in (0, 1], got {self.zpl_fraction}")
        if self.detuning_ghz < 0 or self.linewidth_mhz <= 0:
            raise EmitterModelError("detuning must be >= 0 and linewidth > 0")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def lorentzian_cross_excitation(detuning_ghz: float, linewidth_mhz: float) -> float:
    """Off-resonant excitation probability from the Lorentzian line factor."""
    ratio = 2.0 * (detuning_ghz * 1e3) / linewidth_mhz
    return 1.0 / (1.0 + ratio * ratio)


def spin_spec() -> SubsystemSpec:
    return SubsystemSpec(SPIN, SPIN_DIM)


def initialize_spin(params: EmitterParams) -> QuantumState:
    """Optically pumped spin state as a density matrix on the 7-level space.

    Population ``init_fidelity`` sits on |-1>; the residual is split evenly
    between |0> and |+1>. Imperfect nuclear polarization is not a quantum
    degree of freedom here; it enters as a dephasing weight on microwave
    rotations (see mw_rotation_kraus).
    """
    params.validate()
    f = params.init_fidelity
    r = (1.0 - f) / 2.0
    pops = np.zeros(SPIN_DIM)
    pops[LVL_GM1] = f
    pops[LVL_G0] = r
    pops[LVL_GP1] = r
    return QuantumState((spin_spec(),), np.diag(pops.astype(complex)), "mixed")


def _ket(i: int) -> np.ndarray:
    v = np.zeros(SPIN_DIM, dtype=complex)
    v[i] = 1.0
    return v


def _proj(i: int) -> np.ndarray:
    return np.outer(_ket(i), _ket(i).conj())


def _flip(to: int, frm: int) -> np.ndarray:
    return np.outer(_ket(to), _ket(frm).conj())


def mw_rotation_kraus(theta: float, params: EmitterParams, target: str = SPIN) -> list[Operator]:
    """Microwave rotation in the {|0>, |-1>} subspace with hyperfine dephasing.

    With weight ``nuclear_pol`` the rotation is exact. The residual nuclear
    population detunes the drive; its effect is modeled as the same rotation
    followed by complete dephasing of the qubit coherence. The channel is
    trace-preserving and leaves post-rotation populations untouched, so spin
    readout immediately after a rotation is unaffected.
    """
    from .qsim import ry

    u = ry(theta, target=target, dim=SPIN_DIM, levels=(LVL_G0, LVL_GM1)).matrix
    w = params.nuclear_pol
    ops = [Operator(np.sqrt(w) * u, (target,))]
    if w < 1.0:
        rest = np.eye(SPIN_DIM, dtype=complex) - _proj(LVL_G0) - _proj(LVL_GM1)
        for pi in (_proj(LVL_G0), _proj(LVL_GM1), rest):
            ops.append(Operator(np.sqrt(1.0 - w) * (pi @ u), (target,)))
    return ops


def shelving_channel(params: EmitterParams) -> list[Operator]:
    """Non-radiative decay from |+-1_e> into the metastable shelf."""
    p = params.p_shelve
    keep = np.eye(SPIN_DIM, dtype=complex)
    keep[LVL_EM1, LVL_EM1] = np.sqrt(1.0 - p)
    keep[LVL_EP1, LVL_EP1] = np.sqrt(1.0 - p)
    ops = [Operator(keep, (SPIN,))]
    if p > 0:
        ops.append(Operator(np.sqrt(p) * _flip(LVL_MS, LVL_EM1), (SPIN,)))
        ops.append(Operator(np.sqrt(p) * _flip(LVL_MS, LVL_EP1), (SPIN,)))
    return ops


def spin_flip_channel(params: EmitterParams) -> list[Operator]:
    """Excited-state spin mixing: each excited level scatters to the other two."""
    p = params.p_spin_flip
    excited = (LVL_E0, LVL_EM1, LVL_EP1)
    keep = np.eye(SPIN_DIM, dtype=complex)
    for e in excited:
        keep[e, e] = np.sqrt(1.0 - p)
    ops = [Operator(keep, (SPIN,))]
    if p > 0:
        for src in excited:
            for dst in excited:
                if dst != src:
                    ops.append(Operator(np.sqrt(p / 2.0) * _flip(dst, src), (SPIN,)))
    return ops


def optical_pulse_kraus(params: EmitterParams, bin_label: str) -> list[Operator]:
    """Kraus set of one optical pi-pulse acting on (spin, fresh time bin).

    The resonant |0> -> |0_e> drive emits into the collected zero-phonon mode
    with probability ``zpl_fraction``; the no-emission (pulse error) amplitude
    stays coherent with the rest of the state since no environmental record
    distinguishes them. Phonon-sideband decay, excited-state spin mixing, and
    shelving each leave an environmental record and appear as separate Kraus
    branches. Mixed decay that does emit into the zero-phonon line lands in
    the same time bin (the line filter does not resolve the fine-structure
    detuning) but carries the flipped spin. Off-resonant cross excitation of
    |+-1> is followed by shelving / spin-flip / photon-loss branching only;
    its decay photons are never routed into the protocol mode.
    """
    pc = params.resolved_p_cross()
    pe = 1.0 - params.pi_pulse_error
    pf = params.p_spin_flip
    psh = params.p_shelve
    zpl = params.zpl_fraction

    vac_keep = np.zeros((2, 2), dtype=complex)
    vac_keep[BIN_VAC, BIN_VAC] = 1.0
    emit = np.zeros((2, 2), dtype=complex)
    emit[BIN_OCC, BIN_VAC] = 1.0
    occ_keep = np.zeros((2, 2), dtype=complex)
    occ_keep[BIN_OCC, BIN_OCC] = 1.0

    def on_vac(spin_m: np.ndarray) -> np.ndarray:
        return np.kron(spin_m, vac_keep)

    def emitting(spin_m: np.ndarray) -> np.ndarray:
        return np.kron(spin_m, emit)

    targets = (SPIN, bin_label)
    ops: list[np.ndarray] = []

    # coherent main branch: emission + unexcited amplitude + undisturbed levels
    main = np.sqrt(pe * (1.0 - pf) * zpl) * emitting(_proj(LVL_G0))
    main += np.sqrt(1.0 - pe) * on_vac(_proj(LVL_G0))
    main += np.sqrt(1.0 - pc) * on_vac(_proj(LVL_GM1) + _proj(LVL_GP1))
    inert = _proj(LVL_MS) + _proj(LVL_E0) + _proj(LVL_EM1) + _proj(LVL_EP1)
    main += on_vac(inert)
    ops.append(main)

    # phonon-sideband decay of the resonant branch: photon lost, spin back in |0>
    if pe * (1.0 - pf) * (1.0 - zpl) > 0:
        ops.append(np.sqrt(pe * (1.0 - pf) * (1.0 - zpl)) * on_vac(_proj(LVL_G0)))

    # excited-state mixing of the resonant branch
    if pe * pf > 0:
        for dst in (LVL_GM1, LVL_GP1):
            amp = pe * pf * (1.0 - psh) / 2.0
            if amp * zpl > 0:
                ops.append(np.sqrt(amp * zpl) * emitting(_flip(dst, LVL_G0)))
            if amp * (1.0 - zpl) > 0:
                ops.append(np.sqrt(amp * (1.0 - zpl)) * on_vac(_flip(dst, LVL_G0)))
        if pe * pf * psh > 0:
            ops.append(np.sqrt(pe * pf * psh) * on_vac(_flip(LVL_MS, LVL_G0)))

    # off-resonant cross excitation of |+-1>
    if pc > 0:
        for src in (LVL_GM1, LVL_GP1):
            back = pc * (1.0 - psh) * (1.0 - pf)
            if back > 0:
                ops.append(np.sqrt(back) * on_vac(_proj(src)))
            flip = pc * (1.0 - psh) * pf
            if flip > 0:
                ops.append(np.sqrt(flip) * on_vac(_flip(LVL_G0, src)))
            if pc * psh > 0:
                ops.append(np.sqrt(pc * psh) * on_vac(_flip(LVL_MS, src)))

    # occupied-bin subspace is inert (never reached when the bin is fresh)
    ops.append(np.kron(np.eye(SPIN_DIM, dtype=complex), occ_keep))

    return [Operator(m, targets) for m in ops]


def ideal_pulse_operator(bin_label: str, spin_dim: int = 2, resonant_level: int = LVL_G0) -> Operator:
    """Unitary limit of the pulse: swap vacuum/photon conditioned on |0>."""
    d = 2 * spin_dim
    m = np.eye(d, dtype=complex).reshape(spin_dim, 2, spin_dim, 2)
    m[resonant_level, :, resonant_level, :] = np.array([[0, 1], [1, 0]])
    return Operator(m.reshape(d, d), (SPIN, bin_label))


def optical_pi_pulse(state: QuantumState, params: EmitterParams, bin_label: str) -> QuantumState:
    """Apply one optical pi-pulse, creating the time-bin subsystem ``bin_label``."""
    if bin_label in state.labels:
        raise EmitterModelError(f"time bin {bin_label!r} already present")
    params.validate()
    vac = basis_ket((SubsystemSpec(bin_label, 2),), (BIN_VAC,))
    joint = tensor(state, vac)
    return apply_kraus(joint, optical_pulse_kraus(params, bin_label))


def readout_click_probability(state: QuantumState, params: EmitterParams, dark_click: float = 0.0) -> float:
    """Probability of a phonon-sideband readout click for the current spin state."""
    rho = partial_spin_populations(state)
    p = params.p_readout_click * rho[LVL_G0] + dark_click
    return float(min(1.0, max(0.0, p)))


def partial_spin_populations(state: QuantumState) -> np.ndarray:
    """Diagonal populations of the spin subsystem (any total dimension)."""
    from .qsim import partial_trace

    spin_only = partial_trace(state, [SPIN]) if len(state.subsystems) > 1 else state.to_density()
    pops = np.real(np.diag(spin_only.data))
    total = pops.sum()
    if total <= 0:
        raise EmitterModelError("state has no weight on the spin subsystem")
    return pops / total
