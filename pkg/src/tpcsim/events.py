"""Monte Carlo generation of timestamped detector click records.

Each cycle runs one protocol trajectory: a branch of every imperfection
channel is sampled, the photon arrival window and analyzer port are drawn from
the exact conditional probabilities of the sampled pure state, clicks are
thinned by the detection efficiency, Poisson background clicks are added, and
the phonon-sideband readout click is sampled from the final spin populations.

Cycles consume dedicated counter-based RNG streams keyed by (seed, block), so
the record stream is bit-for-bit reproducible and independent of how blocks
are sharded across workers. The per-cycle tomography basis follows the arrival
class of the detected photon (path-erased -> equatorial readout, path-revealed
-> polar readout), mirroring how measurement settings and event classes are
matched up in the corresponding hardware datasets.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import emitter as em
from .optics import ArrivalClass, InterferometerConfig
from .protocol import ProtocolConfig, build_sequence, pulse_times
from .qsim import SubsystemSpec, basis_ket, embedded_matrix, ry

RECORD_COLUMNS = ("cycle_id", "port", "arrival_class", "t_ns", "phase_rad", "prep_sign", "readout_click")
RECORD_DTYPE = np.dtype(
    [
        ("cycle_id", np.int64),
        ("port", "U1"),
        ("arrival_class", "U16"),
        ("t_ns", np.float64),
        ("phase_rad", np.float64),
        ("prep_sign", "U5"),
        ("readout_click", np.uint8),
    ]
)

_PHASE_SALT = 0x5EED_0001
_LEAF_PRUNE = 1e-12
_MAX_LEAVES = 20_000

PREP_NAMES = ("minus", "plus")
PORT_LETTERS = np.array(["D", "A", "R", "L"])
CLASS_NAMES = {
    "early": ArrivalClass.EARLY_REVEALING.value,
    "erased": ArrivalClass.ERASED.value,
    "late": ArrivalClass.LATE_REVEALING.value,
    "invalid": ArrivalClass.INVALID.value,
}


class EventModelError(ValueError):
    pass


class RecordFormatError(ValueError):
    pass


@dataclass
class DetectionParams:
    """Detection-chain parameters of the Monte Carlo.

    ``zpl_efficiency`` is the end-to-end source-to-click probability and
    already includes the zero-phonon branching fraction; the per-photon
    detector thinning is therefore zpl_efficiency / zpl_fraction for photons
    that survived the branching inside the quantum model.
    """

    zpl_efficiency: float = 2e-5
    background_rate_hz: float = 0.0
    readout_dark_click: float = 0.0
    seed: int = 2024
    alternate_preps: bool = True
    block_size: int = 65536

    def validate(self) -> None:
        if not 0.0 < self.zpl_efficiency <= 1.0:
            raise EventModelError("zpl_efficiency must lie in (0, 1]")
        if self.background_rate_hz < 0:
            raise EventModelError("background_rate_hz must be >= 0")
        if not 0.0 <= self.readout_dark_click <= 1.0:
            raise EventModelError("readout_dark_click must lie in [0, 1]")
        if self.block_size < 1:
            raise EventModelError("block_size must be >= 1")

    def detector_thinning(self, zpl_fraction: float) -> float:
        return min(1.0, self.zpl_efficiency / zpl_fraction)


class ClickRecord(NamedTuple):
    cycle_id: int
    port: str
    arrival_class: str
    t_ns: float
    phase_rad: float
    prep_sign: str
    readout_click: bool


def record_view(row) -> ClickRecord:
    return ClickRecord(
        int(row["cycle_id"]),
        str(row["port"]),
        str(row["arrival_class"]),
        float(row["t_ns"]),
        float(row["phase_rad"]),
        str(row["prep_sign"]),
        bool(row["readout_click"]),
    )


# -- trajectory compilation ------------------------------------------------------


class _CompiledModel:
    """Per-leaf tables of the single-photon cycle, shared by all cycles.

    Trajectory branches of all channels are enumerated once; each leaf stores
    the four spin vectors conditioned on the joint bin occupation, plus the
    derived timing, port, and readout coefficients. The erasure-visibility
    dephasing is folded in by doubling each leaf with the late-bin amplitude
    sign flipped.
    """

    def __init__(self, params: em.EmitterParams, protocol_cfg: ProtocolConfig, ifm: InterferometerConfig):
        params.validate()
        protocol_cfg.validate()
        ifm.validate()
        if protocol_cfg.n_photons != 1:
            raise EventModelError("compiled fast path only covers single-photon cycles")
        self.ifm = ifm
        self.protocol_cfg = protocol_cfg

        spin = SubsystemSpec(em.SPIN, em.SPIN_DIM)
        b1 = SubsystemSpec("bin1", 2)
        b2 = SubsystemSpec("bin2", 2)
        layout = basis_ket((spin, b1, b2), (0, 0, 0))

        def embed_all(kraus):
            return [embedded_matrix(k, layout) for k in kraus]

        pulse1 = embed_all(em.optical_pulse_kraus(params, "bin1"))
        pulse2 = embed_all(em.optical_pulse_kraus(params, "bin2"))
        flip = embed_all(em.mw_rotation_kraus(np.pi, params))

        init = em.initialize_spin(params)
        init_pops = np.real(np.diag(init.data))

        leaves: dict[int, list[np.ndarray]] = {}
        probs: dict[int, list[float]] = {}
        for prep_idx, prep in enumerate(PREP_NAMES):
            theta = np.pi / 2.0 if prep == "minus" else -np.pi / 2.0
            prep_kraus = embed_all(em.mw_rotation_kraus(theta, params))
            chains = [prep_kraus, pulse1, flip, pulse2]
            leaves[prep_idx] = []
            probs[prep_idx] = []
            for lvl in (em.LVL_G0, em.LVL_GM1, em.LVL_GP1):
                w0 = init_pops[lvl]
                if w0 < _LEAF_PRUNE:
                    continue
                root = np.zeros(em.SPIN_DIM * 4, dtype=complex)
                root[lvl * 4 + 0] = 1.0
                stack = [(root, w0, 0)]
                while stack:
                    vec, w, depth = stack.pop()
                    if depth == len(chains):
                        leaves[prep_idx].append(vec / np.linalg.norm(vec))
                        probs[prep_idx].append(w)
                        if len(leaves[prep_idx]) > _MAX_LEAVES:
                            raise EventModelError("trajectory tree too large; reduce channel branching")
                        continue
                    for k in chains[depth]:
                        child = k @ vec
                        p = float(np.vdot(child, child).real)
                        if p * w > _LEAF_PRUNE:
                            stack.append((child / np.sqrt(p), w * p, depth + 1))

        # visibility dephasing: flip the sign of the late-bin amplitude
        v = ifm.erasure_visibility
        all_probs, chi = [], {"00": [], "10": [], "01": [], "11": []}
        self.prep_offset = []
        self.prep_total = []
        for prep_idx in (0, 1):
            self.prep_offset.append(len(all_probs))
            for vec, w in zip(leaves[prep_idx], probs[prep_idx]):
                t = vec.reshape(em.SPIN_DIM, 2, 2)
                copies = [(w, 1.0)] if v >= 1.0 else [(w * (1 + v) / 2, 1.0), (w * (1 - v) / 2, -1.0)]
                for cw, sgn in copies:
                    if cw < _LEAF_PRUNE:
                        continue
                    all_probs.append(cw)
                    chi["00"].append(t[:, 0, 0])
                    chi["10"].append(t[:, 1, 0])
                    chi["01"].append(sgn * t[:, 0, 1])
                    chi["11"].append(t[:, 1, 1])
            self.prep_total.append(sum(probs[prep_idx]))
        self.prep_offset.append(len(all_probs))

        self.n_leaves = len(all_probs)
        w_arr = np.array(all_probs)
        self.chi = {k: np.array(vs) for k, vs in chi.items()}

        # cumulative leaf distribution per prep
        self.leaf_cum = []
        for prep_idx in (0, 1):
            lo, hi = self.prep_offset[prep_idx], self.prep_offset[prep_idx + 1]
            seg = w_arr[lo:hi]
            self.leaf_cum.append(np.cumsum(seg / seg.sum()))

        p00 = np.einsum("ls,ls->l", self.chi["00"].conj(), self.chi["00"]).real
        p10 = np.einsum("ls,ls->l", self.chi["10"].conj(), self.chi["10"]).real
        p01 = np.einsum("ls,ls->l", self.chi["01"].conj(), self.chi["01"]).real
        p11 = np.einsum("ls,ls->l", self.chi["11"].conj(), self.chi["11"]).real
        self.p10, self.p01, self.p11 = p10, p01, p11

        s = ifm.split_ratio
        if ifm.active_switch:
            amp_h2, amp_v2 = 1.0, 1.0
            p_early = np.zeros_like(p10)
            p_late = np.zeros_like(p01)
        else:
            amp_h2, amp_v2 = s, 1.0 - s
            p_early = (1.0 - s) * p10
            p_late = s * p01
        p_erased = amp_h2 * p10 + amp_v2 * p01
        self.timing_cum = np.cumsum(
            np.stack([p00, p_early, p_erased, p_late, p11], axis=1), axis=1
        )

        # erased-window port / readout coefficients
        zeta = np.sqrt(amp_h2 * amp_v2) * np.einsum("ls,ls->l", self.chi["01"].conj(), self.chi["10"])
        self.u_hv = p_erased
        self.zeta_abs = np.abs(zeta)
        self.zeta_arg = np.angle(zeta)

        u_x = ry(protocol_cfg.tomo_theta, em.SPIN, em.SPIN_DIM, (em.LVL_G0, em.LVL_GM1)).matrix
        row0_x = u_x[em.LVL_G0, :]
        alpha = np.sqrt(amp_h2) * (self.chi["10"] @ row0_x)
        beta = np.sqrt(amp_v2) * (self.chi["01"] @ row0_x)
        kappa = np.conj(alpha) * beta
        self.a2b2 = np.abs(alpha) ** 2 + np.abs(beta) ** 2
        self.kappa_abs = np.abs(kappa)
        self.kappa_arg = np.angle(kappa)

        def bright(vecs, pops, u):
            amp = vecs @ u[em.LVL_G0, :]
            with np.errstate(invalid="ignore", divide="ignore"):
                out = np.abs(amp) ** 2 / pops
            return np.nan_to_num(out, nan=0.0, posinf=0.0)

        eye = np.eye(em.SPIN_DIM, dtype=complex)
        self.bright_early = bright(self.chi["10"], p10, eye)
        self.bright_late = bright(self.chi["01"], p01, eye)
        self.bright_none = bright(self.chi["00"], p00, u_x)
        self.bright_dbl_x = bright(self.chi["11"], p11, u_x)
        self.bright_dbl_z = bright(self.chi["11"], p11, eye)

        self.port_offsets = np.array([0.0, np.pi, ifm.quadrature_offset, ifm.quadrature_offset + np.pi])
        self.split_ratio = s
        self.active_switch = ifm.active_switch
        self.herald_prob = {
            0: float(np.sum(w_arr[self.prep_offset[0] : self.prep_offset[1]] * p_erased[self.prep_offset[0] : self.prep_offset[1]])),
            1: float(np.sum(w_arr[self.prep_offset[1] : self.prep_offset[2]] * p_erased[self.prep_offset[1] : self.prep_offset[2]])),
        }


# -- phase trajectory ------------------------------------------------------------


def _keyed_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    """Counter-based generator for one (stream, block) pair of a run.

    Streams and blocks map to disjoint Philox keys, so any sharding of blocks
    across workers reproduces the identical draws.
    """
    key = np.array([np.uint64(seed & 0xFFFF_FFFF_FFFF_FFFF), np.uint64((stream << 48) | block)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _phase_block_rng(seed: int, block: int) -> np.random.Generator:
    return _keyed_rng(seed, 2, block)


def _cycle_block_rng(seed: int, block: int) -> np.random.Generator:
    return _keyed_rng(seed, 1, block)


def _walk_block_offsets(ifm: InterferometerConfig, n_blocks: int, block_size: int, n_cycles: int, seed: int, period_ns: float):
    """Starting phase of every block under the random-walk model."""
    sigma = np.sqrt(ifm.phase_drift_var_per_ns * period_ns)
    offsets = np.empty(n_blocks)
    acc = ifm.phase
    for b in range(n_blocks):
        offsets[b] = acc
        m = min(block_size, n_cycles - b * block_size)
        if sigma > 0:
            acc += sigma * _phase_block_rng(seed, b).standard_normal(m).sum()
    return offsets


def _block_true_phase(ifm: InterferometerConfig, ids: np.ndarray, seed: int, block: int, offset: float, period_ns: float):
    if ifm.phase_mode == "static":
        return np.full(ids.shape, ifm.phase)
    if ifm.phase_mode == "scan":
        return np.mod(ifm.phase + ifm.scan_step_rad * ids, 2.0 * np.pi)
    sigma = np.sqrt(ifm.phase_drift_var_per_ns * period_ns)
    if sigma == 0:
        return np.full(ids.shape, offset)
    steps = sigma * _phase_block_rng(seed, block).standard_normal(ids.shape[0])
    return offset + np.cumsum(steps)


# -- block simulation --------------------------------------------------------------


def _simulate_block(model: _CompiledModel, detection: DetectionParams, lo: int, hi: int, walk_offset: float):
    ifm = model.ifm
    pcfg = model.protocol_cfg
    params_ro = model._p_readout
    dark = detection.readout_dark_click
    eta = model._eta_det
    period = pcfg.cycle_period_ns
    t_a1, t_a2 = model._pulse_times
    delay = ifm.delay_ns
    w = ifm.window_ns

    m = hi - lo
    ids = np.arange(lo, hi, dtype=np.int64)
    rng = _cycle_block_rng(detection.seed, lo // detection.block_size)

    phase_true = _block_true_phase(ifm, ids, detection.seed, lo // detection.block_size, walk_offset, period)

    u_leaf = rng.random(m)
    u_time = rng.random(m)
    u_arm1 = rng.random(m)
    u_arm2 = rng.random(m)
    u_thin1 = rng.random(m)
    u_thin2 = rng.random(m)
    u_port1 = rng.random(m)
    u_port2 = rng.random(m)
    u_ro = rng.random(m)
    noise_ro = rng.standard_normal(m) * ifm.phase_readout_sigma
    n_bg = rng.poisson(model._bg_per_cycle, m) if model._bg_per_cycle > 0 else np.zeros(m, dtype=np.int64)
    total_bg = int(n_bg.sum())
    u_bg_time = rng.random(total_bg)
    u_bg_port = rng.random(total_bg)

    phase_read = phase_true + noise_ro

    if detection.alternate_preps:
        prep_idx = (ids % 2).astype(np.int64)
    else:
        prep_idx = np.full(m, PREP_NAMES.index(pcfg.prep_sign), dtype=np.int64)

    li = np.empty(m, dtype=np.int64)
    for p in (0, 1):
        msk = prep_idx == p
        if not msk.any():
            continue
        seg = np.searchsorted(model.leaf_cum[p], u_leaf[msk], side="right")
        seg = np.minimum(seg, len(model.leaf_cum[p]) - 1)
        li[msk] = model.prep_offset[p] + seg

    cum = model.timing_cum[li]
    total = cum[:, -1]
    outcome = (u_time[:, None] * total[:, None] > cum).sum(axis=1)
    # 0 none, 1 early, 2 erased, 3 late, 4 double

    # erased ports: conditional probabilities over D, A, R, L
    erased = outcome == 2
    port_idx = np.zeros(m, dtype=np.int64)
    pb = np.empty(m)
    pb.fill(0.0)

    if erased.any():
        le = li[erased]
        ph = phase_true[erased]
        base = model.u_hv[le]
        args = ph[:, None] + model.port_offsets[None, :]
        pj = base[:, None] + 2.0 * model.zeta_abs[le][:, None] * np.cos(args + model.zeta_arg[le][:, None])
        pj = np.maximum(pj, 0.0)
        cumj = np.cumsum(pj, axis=1)
        pick = u_port1[erased] * cumj[:, -1]
        port_idx[erased] = (pick[:, None] > cumj).sum(axis=1)
        o = model.port_offsets[port_idx[erased]]
        num = model.a2b2[le] + 2.0 * model.kappa_abs[le] * np.cos(ph + o - model.kappa_arg[le])
        den = base + 2.0 * model.zeta_abs[le] * np.cos(ph + o + model.zeta_arg[le])
        with np.errstate(invalid="ignore", divide="ignore"):
            pb_er = np.clip(np.nan_to_num(num / den, nan=0.0, posinf=0.0), 0.0, 1.0)
        pb[erased] = pb_er

    early = outcome == 1
    late = outcome == 3
    none = outcome == 0
    pb[early] = model.bright_early[li[early]]
    pb[late] = model.bright_late[li[late]]
    pb[none] = model.bright_none[li[none]]
    port_idx[early] = np.minimum((u_port1[early] * 4).astype(np.int64), 3)
    port_idx[late] = np.minimum((u_port1[late] * 4).astype(np.int64), 3)

    rows: list[tuple] = []
    dbl = np.flatnonzero(outcome == 4)
    s = model.split_ratio
    dbl_ro: dict[int, bool] = {}
    for j in dbl:
        # both bins occupied: each photon routed independently, cycle readout
        # follows the earliest surviving click (rejected downstream anyway)
        clicks = []
        if model.active_switch:
            first_erased, second_erased = True, True
        else:
            first_erased = u_arm1[j] < s
            second_erased = u_arm2[j] < 1.0 - s
        if u_thin1[j] < eta:
            if first_erased:
                clicks.append(("erased", t_a2, min(int(u_port1[j] * 4), 3)))
            else:
                clicks.append(("early", t_a1, min(int(u_port1[j] * 4), 3)))
        if u_thin2[j] < eta:
            if second_erased:
                clicks.append(("erased", t_a2, min(int(u_port2[j] * 4), 3)))
            else:
                clicks.append(("late", t_a2 + delay, min(int(u_port2[j] * 4), 3)))
        clicks.sort(key=lambda c: c[1])
        theta_is_x = not clicks or clicks[0][0] == "erased"
        pb_j = model.bright_dbl_x[li[j]] if theta_is_x else model.bright_dbl_z[li[j]]
        click_ro = bool(u_ro[j] < params_ro * pb_j + dark)
        dbl_ro[int(j)] = click_ro
        t0 = ids[j] * period
        for cls, t_off, pidx in clicks:
            rows.append(
                (
                    ids[j],
                    PORT_LETTERS[pidx],
                    CLASS_NAMES[cls],
                    t0 + t_off,
                    phase_read[j],
                    PREP_NAMES[prep_idx[j]],
                    1 if click_ro else 0,
                )
            )

    ro_click = u_ro < params_ro * pb + dark

    detected = (early | late | erased) & (u_thin1 < eta)
    det_idx = np.flatnonzero(detected)
    t_offset = np.where(outcome == 1, t_a1, np.where(outcome == 2, t_a2, t_a2 + delay))
    for j in det_idx:
        rows.append(
            (
                ids[j],
                PORT_LETTERS[port_idx[j]],
                CLASS_NAMES["early" if outcome[j] == 1 else "erased" if outcome[j] == 2 else "late"],
                ids[j] * period + t_offset[j],
                phase_read[j],
                PREP_NAMES[prep_idx[j]],
                1 if ro_click[j] else 0,
            )
        )

    if total_bg:
        span_lo = t_a1 - w
        span = 2.0 * delay + 2.0 * w
        owners = np.repeat(np.arange(m), n_bg)
        t_in = span_lo + u_bg_time * span
        rel = t_in - t_a2
        cls = np.full(total_bg, CLASS_NAMES["invalid"], dtype=object)
        cls[np.abs(rel) <= w] = CLASS_NAMES["erased"]
        cls[np.abs(rel + delay) <= w] = CLASS_NAMES["early"]
        cls[np.abs(rel - delay) <= w] = CLASS_NAMES["late"]
        bports = np.minimum((u_bg_port * 4).astype(np.int64), 3)
        for k in range(total_bg):
            j = int(owners[k])
            clicked = dbl_ro[j] if j in dbl_ro else bool(ro_click[j])
            rows.append(
                (
                    ids[j],
                    PORT_LETTERS[bports[k]],
                    cls[k],
                    ids[j] * period + t_in[k],
                    phase_read[j],
                    PREP_NAMES[prep_idx[j]],
                    1 if clicked else 0,
                )
            )

    rows.sort(key=lambda r: (r[0], r[3]))
    out = np.array(rows, dtype=RECORD_DTYPE) if rows else np.empty(0, dtype=RECORD_DTYPE)
    return out


def _block_task(args):
    model, detection, lo, hi, walk_offset = args
    return _simulate_block(model, detection, lo, hi, walk_offset)


# -- public API --------------------------------------------------------------------


def simulate_cycles(
    n_cycles: int,
    params: em.EmitterParams,
    ifm: InterferometerConfig,
    protocol_cfg: ProtocolConfig,
    detection: DetectionParams,
    workers: int = 1,
) -> np.ndarray:
    """Simulate ``n_cycles`` protocol cycles and return the click records.

    Deterministic in (configs, detection.seed); the ``workers`` count shards
    whole RNG blocks across processes and never changes the output.
    """
    if n_cycles < 1:
        raise EventModelError("n_cycles must be >= 1")
    detection.validate()
    if protocol_cfg.n_photons == 1:
        model = _CompiledModel(params, protocol_cfg, ifm)
        _attach_runtime(model, params, detection, protocol_cfg, ifm)
        n_blocks = (n_cycles + detection.block_size - 1) // detection.block_size
        if ifm.phase_mode == "walk":
            offsets = _walk_block_offsets(ifm, n_blocks, detection.block_size, n_cycles, detection.seed, protocol_cfg.cycle_period_ns)
        else:
            offsets = np.zeros(n_blocks)
        tasks = [
            (model, detection, b * detection.block_size, min(n_cycles, (b + 1) * detection.block_size), offsets[b])
            for b in range(n_blocks)
        ]
        if workers > 1 and n_blocks > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_block_task, tasks, chunksize=max(1, n_blocks // (4 * workers))))
        else:
            parts = [_block_task(t) for t in tasks]
        if parts:
            return np.concatenate(parts)
        return np.empty(0, dtype=RECORD_DTYPE)
    return _simulate_multiphoton(n_cycles, params, ifm, protocol_cfg, detection)


def _attach_runtime(model: _CompiledModel, params, detection, protocol_cfg, ifm):
    steps = build_sequence(protocol_cfg, ifm)
    times = pulse_times(steps)
    model._pulse_times = (times[0], times[1])
    model._p_readout = params.p_readout_click
    model._eta_det = detection.detector_thinning(params.zpl_fraction)
    span_ns = 2.0 * ifm.delay_ns + 2.0 * ifm.window_ns
    model._bg_per_cycle = detection.background_rate_hz * 4.0 * span_ns * 1e-9


# -- multi-photon path --------------------------------------------------------------


def _simulate_multiphoton(n_cycles, params, ifm, protocol_cfg, detection):
    """Per-cycle sampler for photon chains (slower, general n)."""
    params.validate()
    ifm.validate()
    protocol_cfg.validate()
    if detection.background_rate_hz > 0:
        raise EventModelError("background clicks are modeled on the single-photon path only")
    n = protocol_cfg.n_photons
    steps = build_sequence(protocol_cfg, ifm)
    times = pulse_times(steps)
    period = protocol_cfg.cycle_period_ns
    eta = detection.detector_thinning(params.zpl_fraction)
    s = ifm.split_ratio
    v = ifm.erasure_visibility
    dark = detection.readout_dark_click

    spin = SubsystemSpec(em.SPIN, em.SPIN_DIM)
    bins = [SubsystemSpec(f"bin{j}", 2) for j in range(1, 2 * n + 1)]
    layout = basis_ket(tuple([spin] + bins), tuple([0] * (1 + 2 * n)))
    dims = (em.SPIN_DIM,) + (2,) * (2 * n)

    def embed_all(kraus):
        return [embedded_matrix(k, layout) for k in kraus]

    channels: list[list[np.ndarray]] = []
    thetas = {"minus": np.pi / 2.0, "plus": -np.pi / 2.0}
    prep_chans = {
        name: embed_all(em.mw_rotation_kraus(theta, params)) for name, theta in thetas.items()
    }
    # the first rotation is the preparation and is applied per-cycle through
    # prep_chans (its sign may alternate); later rotations come from the steps
    mw_by_theta: dict[float, list[np.ndarray]] = {}
    seq_ops: list[tuple[str, object]] = []
    prep_seen = False
    for step in steps:
        if step.kind == "mw_rotation":
            if not prep_seen:
                prep_seen = True
                continue
            if step.theta not in mw_by_theta:
                mw_by_theta[step.theta] = embed_all(em.mw_rotation_kraus(step.theta, params))
            seq_ops.append(("mw", step.theta))
        elif step.kind == "optical_pulse":
            seq_ops.append(("pulse", step.bin_label))
    pulse_chans = {
        label: embed_all(em.optical_pulse_kraus(params, label))
        for label in [f"bin{j}" for j in range(1, 2 * n + 1)]
    }

    init_pops = np.real(np.diag(em.initialize_spin(params).data))
    u_x = ry(protocol_cfg.tomo_theta, em.SPIN, em.SPIN_DIM, (em.LVL_G0, em.LVL_GM1)).matrix

    ports_off = np.array([0.0, np.pi, ifm.quadrature_offset, ifm.quadrature_offset + np.pi])

    rng = _keyed_rng(detection.seed, 3, 0)
    phase = ifm.phase
    sigma_step = np.sqrt(ifm.phase_drift_var_per_ns * period)
    rows = []

    def sample_kraus(vec, chans):
        weights = []
        children = []
        for k in chans:
            child = k @ vec
            p = float(np.vdot(child, child).real)
            weights.append(p)
            children.append(child)
        weights = np.array(weights)
        weights = weights / weights.sum()
        idx = int(np.searchsorted(np.cumsum(weights), rng.random(), side="right"))
        idx = min(idx, len(chans) - 1)
        child = children[idx]
        return child / np.linalg.norm(child)

    for cid in range(n_cycles):
        if ifm.phase_mode == "walk" and sigma_step > 0:
            phase = phase + sigma_step * rng.standard_normal()
        elif ifm.phase_mode == "scan":
            phase = float(np.mod(ifm.phase + ifm.scan_step_rad * cid, 2 * np.pi))
        phase_read = phase + (rng.standard_normal() * ifm.phase_readout_sigma if ifm.phase_readout_sigma > 0 else 0.0)

        prep = pcfg_prep(protocol_cfg, detection, cid)
        lvl = int(np.searchsorted(np.cumsum(init_pops / init_pops.sum()), rng.random(), side="right"))
        lvl = min(lvl, em.SPIN_DIM - 1)
        vec = np.zeros(int(np.prod(dims)), dtype=complex)
        vec[np.ravel_multi_index((lvl,) + (0,) * (2 * n), dims)] = 1.0
        vec = sample_kraus(vec, prep_chans[prep])
        for kind, arg in seq_ops:
            if kind == "mw":
                vec = sample_kraus(vec, mw_by_theta[arg])
            else:
                vec = sample_kraus(vec, pulse_chans[arg])

        clicks = []
        tensor_vec = vec.reshape(dims)
        for k in range(1, n + 1):
            ax1, ax2 = 2 * k - 1, 2 * k
            sl = [slice(None)] * (1 + 2 * n)

            def block(i, j):
                sel = list(sl)
                sel[ax1], sel[ax2] = i, j
                return tensor_vec[tuple(sel)]

            chi10, chi01, chi11 = block(1, 0), block(0, 1), block(1, 1)
            p10 = float(np.vdot(chi10, chi10).real)
            p01 = float(np.vdot(chi01, chi01).real)
            p11 = float(np.vdot(chi11, chi11).real)
            p00 = max(0.0, 1.0 - p10 - p01 - p11)
            if ifm.active_switch:
                pe_, pl_ = 0.0, 0.0
                per_ = p10 + p01
                ah, av = 1.0, 1.0
            else:
                pe_, pl_ = (1 - s) * p10, s * p01
                per_ = s * p10 + (1 - s) * p01
                ah, av = np.sqrt(s), np.sqrt(1 - s)
            u = rng.random()
            t_emit_first = times[2 * k - 2]
            t_ref = times[2 * k - 1]
            new_tensor = np.zeros_like(tensor_vec)

            def put(i, j, values):
                sel = list(sl)
                sel[ax1], sel[ax2] = i, j
                new_tensor[tuple(sel)] = values

            if u < p00:
                put(0, 0, block(0, 0))
            elif u < p00 + pe_:
                if rng.random() < eta:
                    clicks.append(("early", t_emit_first, int(rng.random() * 4)))
                put(0, 0, chi10)
            elif u < p00 + pe_ + per_:
                vsign = 1.0 if (v >= 1.0 or rng.random() < (1 + v) / 2) else -1.0
                pj = []
                collapsed = []
                for o in ports_off:
                    c = 0.5 * (ah * np.exp(1j * phase) * chi10 + av * vsign * np.exp(-1j * o) * chi01)
                    pj.append(float(np.vdot(c, c).real))
                    collapsed.append(c)
                pj = np.array(pj)
                pidx = int(np.searchsorted(np.cumsum(pj / pj.sum()), rng.random(), side="right"))
                pidx = min(pidx, 3)
                if rng.random() < eta:
                    clicks.append(("erased", t_ref, pidx))
                put(0, 0, collapsed[pidx])
            elif u < p00 + pe_ + per_ + pl_:
                if rng.random() < eta:
                    clicks.append(("late", t_ref + ifm.delay_ns, int(rng.random() * 4)))
                put(0, 0, chi01)
            else:
                c1_er = ifm.active_switch or rng.random() < s
                c2_er = ifm.active_switch or rng.random() < 1 - s
                if rng.random() < eta:
                    clicks.append(("erased", t_ref, int(rng.random() * 4)) if c1_er else ("early", t_emit_first, int(rng.random() * 4)))
                if rng.random() < eta:
                    clicks.append(("erased", t_ref, int(rng.random() * 4)) if c2_er else ("late", t_ref + ifm.delay_ns, int(rng.random() * 4)))
                put(0, 0, chi11)
            norm = np.linalg.norm(new_tensor)
            if norm < 1e-15:
                tensor_vec = new_tensor
                break
            tensor_vec = new_tensor / norm

        clicks.sort(key=lambda c: c[1])
        theta_is_x = not clicks or clicks[0][0] == "erased"
        spin_amp = tensor_vec.reshape(em.SPIN_DIM, -1)
        u_ro = u_x if theta_is_x else np.eye(em.SPIN_DIM)
        rotated = np.einsum("st,tk->sk", u_ro, spin_amp)
        tot = float(np.vdot(rotated, rotated).real)
        p_bright = float(np.vdot(rotated[em.LVL_G0], rotated[em.LVL_G0]).real) / tot if tot > 0 else 0.0
        click_ro = rng.random() < params.p_readout_click * p_bright + dark

        for cls, t_off, pidx in clicks:
            rows.append(
                (
                    cid,
                    PORT_LETTERS[pidx],
                    CLASS_NAMES[cls],
                    cid * period + t_off,
                    phase_read,
                    prep,
                    1 if click_ro else 0,
                )
            )

    rows.sort(key=lambda r: (r[0], r[3]))
    return np.array(rows, dtype=RECORD_DTYPE) if rows else np.empty(0, dtype=RECORD_DTYPE)


def pcfg_prep(protocol_cfg: ProtocolConfig, detection: DetectionParams, cycle_id: int) -> str:
    if detection.alternate_preps:
        return PREP_NAMES[cycle_id % 2]
    return protocol_cfg.prep_sign


# -- record I/O ---------------------------------------------------------------------


def write_records(path, records: np.ndarray) -> None:
    header = ",".join(RECORD_COLUMNS)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for r in records:
            fh.write(
                f"{int(r['cycle_id'])},{r['port']},{r['arrival_class']},"
                f"{r['t_ns']:.3f},{r['phase_rad']:.9f},{r['prep_sign']},{int(r['readout_click'])}\n"
            )


def read_records(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = tuple(header.split(","))
        if cols != RECORD_COLUMNS:
            missing = set(RECORD_COLUMNS) - set(cols)
            raise RecordFormatError(
                f"bad header: expected columns {','.join(RECORD_COLUMNS)}"
                + (f" (missing {','.join(sorted(missing))})" if missing else "")
            )
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(RECORD_COLUMNS):
                raise RecordFormatError(f"line {lineno}: expected {len(RECORD_COLUMNS)} fields, got {len(parts)}")
            try:
                rows.append(
                    (
                        int(parts[0]),
                        parts[1],
                        parts[2],
                        float(parts[3]),
                        float(parts[4]),
                        parts[5],
                        int(parts[6]),
                    )
                )
            except ValueError as exc:
                raise RecordFormatError(f"line {lineno}: {exc}") from exc
    return np.array(rows, dtype=RECORD_DTYPE) if rows else np.empty(0, dtype=RECORD_DTYPE)


def pair_coincidences(records: np.ndarray, n_photons: int = 1):
    """Pair each cycle's photon click(s) with its readout flag.

    Cycles carrying more clicks than the protocol emits photons lie outside
    the protocol subspace and are rejected (counted, not returned). Returns
    (pairs, n_rejected) with pairs as (ClickRecord, readout_click) tuples.
    """
    ids = records["cycle_id"]
    if ids.size and np.any(np.diff(ids) < 0):
        raise EventModelError("records must be sorted by cycle_id")
    pairs = []
    rejected = 0
    start = 0
    n = len(records)
    while start < n:
        end = start
        while end < n and ids[end] == ids[start]:
            end += 1
        if end - start > n_photons:
            rejected += 1
        else:
            for k in range(start, end):
                rec = record_view(records[k])
                pairs.append((rec, rec.readout_click))
        start = end
    return pairs, rejected


def summarize(records: np.ndarray, n_photons: int = 1) -> dict:
    pairs, rejected = pair_coincidences(records, n_photons)
    heralds = int(np.sum(records["arrival_class"] == ArrivalClass.ERASED.value))
    coincidences = sum(1 for _, click in pairs if click)
    return {
        "records": int(len(records)),
        "heralded": heralds,
        "coincidences": coincidences,
        "rejected_cycles": rejected,
    }
