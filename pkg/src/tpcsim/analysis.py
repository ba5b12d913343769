"""Correlation and fidelity-bound reconstruction from click records.

Path-revealing events identify the emission cycle (early -> first cycle -> H,
late -> second cycle -> V) and, combined with the polar-basis spin readout,
give the diagonal populations in the ordering

    rho11 = (|0>, H)   rho22 = (|0>, V)   rho33 = (|-1>, H)   rho44 = (|-1>, V)

with ZZ counted positive for the correlated pairs (|0>, V) and (|-1>, H).
Path-erased events carry the interferometer phase; the bright-state
probability against the effective analyzer phase (record phase + port offset)
falls on one sinusoid per preparation sign, whose contrasts combine into the
XX correlation. Readout clicks are inverted through the calibrated
bright-state click probability before any probability is formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import pi, sin

import numpy as np

from .optics import ArrivalClass, InterferometerConfig

PREP_ORDER = ("minus", "plus")
DIAGONAL_LABELS = ("rho11_0H", "rho22_0V", "rho33_m1H", "rho44_m1V")


class AnalysisError(ValueError):
    pass


@dataclass
class AnalysisParams:
    """Calibration constants and estimator knobs for record analysis."""

    p_readout_click: float = 0.167
    readout_dark_click: float = 0.0
    n_phase_bins: int = 16
    min_cell_count: int = 25
    quadrature_offset: float = pi / 4.0

    def validate(self) -> None:
        if not 0.0 < self.p_readout_click <= 1.0:
            raise AnalysisError("p_readout_click must lie in (0, 1]")
        if not 0.0 <= self.readout_dark_click < self.p_readout_click:
            raise AnalysisError("readout_dark_click must lie in [0, p_readout_click)")
        if self.n_phase_bins < 4:
            raise AnalysisError("n_phase_bins must be >= 4")
        if self.min_cell_count < 1:
            raise AnalysisError("min_cell_count must be >= 1")

    def port_offsets(self) -> dict[str, float]:
        q = self.quadrature_offset
        return {"D": 0.0, "A": pi, "R": q, "L": q + pi}

    def invert_click_fraction(self, f: float) -> float:
        """Bright-state probability from a raw click fraction."""
        span = self.p_readout_click - self.readout_dark_click
        return float(np.clip((f - self.readout_dark_click) / span, 0.0, 1.0))

    def click_fraction_sigma(self, k: int, n: int) -> float:
        """Binomial error of the inverted bright-state probability."""
        if n == 0:
            return float("inf")
        f = (k + 0.5) / (n + 1.0)  # smoothing keeps the variance estimate off zero
        span = self.p_readout_click - self.readout_dark_click
        return float(np.sqrt(f * (1.0 - f) / n) / span)


@dataclass
class FitCurve:
    amplitude: float
    amplitude_err: float
    phase0: float
    baseline: float
    n_events: int


@dataclass(frozen=True)
class PhaseBin:
    """One effective-phase bin: center plus click bookkeeping for a cell."""

    center: float
    n_events: int
    n_clicks: int

    def __post_init__(self):
        if self.n_events < 0 or self.n_clicks < 0 or self.n_clicks > self.n_events:
            raise AnalysisError("phase bin counts must be non-negative and consistent")


def phase_bins(
    records: np.ndarray,
    params: AnalysisParams,
    port_offsets: dict[str, float] | None = None,
) -> dict[tuple[str, str], list[PhaseBin]]:
    """Histogram of path-erased events over effective phase.

    Keys are (prep_sign, port); each value is the full list of bins (centers
    partition [0, 2 pi)), with event and readout-click counts per bin.
    """
    params.validate()
    offsets = params.port_offsets() if port_offsets is None else port_offsets
    erased = records[records["arrival_class"] == ArrivalClass.ERASED.value]
    nb = params.n_phase_bins
    width = 2.0 * pi / nb
    centers = (np.arange(nb) + 0.5) * width
    out: dict[tuple[str, str], list[PhaseBin]] = {}
    for prep in PREP_ORDER:
        for port, offset in offsets.items():
            sel = erased[(erased["prep_sign"] == prep) & (erased["port"] == port)]
            phases = np.mod(np.asarray(sel["phase_rad"]) + offset, 2.0 * pi)
            idx = np.minimum((phases / width).astype(int), nb - 1)
            n_b = np.bincount(idx, minlength=nb)
            k_b = np.bincount(idx, weights=sel["readout_click"].astype(float), minlength=nb)
            out[(prep, port)] = [
                PhaseBin(float(c), int(n), int(k)) for c, n, k in zip(centers, n_b, k_b)
            ]
    return out


@dataclass
class CorrelationReport:
    n_records: int
    n_rejected_cycles: int
    diagonals: tuple[float, float, float, float]
    diagonal_errors: tuple[float, float, float, float]
    c_zz: float
    c_zz_err: float
    c_xx: float
    c_xx_err: float
    fits: dict[str, FitCurve]
    background_fraction: float
    background_fraction_err: float
    f_bound_raw: float
    f_bound_raw_err: float
    significance_raw: float
    f_bound_corrected: float
    f_bound_corrected_err: float
    significance_corrected: float
    c_zz_corrected: float = 0.0
    c_zz_corrected_err: float = 0.0
    c_xx_corrected: float = 0.0
    c_xx_corrected_err: float = 0.0
    insufficient_cells: tuple[str, ...] = ()
    curves: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def to_text(self) -> str:
        lines = [
            f"n_records = {self.n_records}",
            f"rejected_cycles = {self.n_rejected_cycles}",
        ]
        for label, value, err in zip(DIAGONAL_LABELS, self.diagonals, self.diagonal_errors):
            lines.append(f"{label} = {value:.6f} +- {err:.6f}")
        lines.append(f"c_zz = {self.c_zz:.6f} +- {self.c_zz_err:.6f}")
        lines.append(f"c_xx = {self.c_xx:.6f} +- {self.c_xx_err:.6f}")
        for prep in PREP_ORDER:
            if prep in self.fits:
                fit = self.fits[prep]
                lines.append(
                    f"fit_{prep}_amplitude = {fit.amplitude:.6f} +- {fit.amplitude_err:.6f}"
                )
                lines.append(f"fit_{prep}_phase = {fit.phase0:.6f}")
                lines.append(f"fit_{prep}_baseline = {fit.baseline:.6f}")
        lines.append(
            f"background_fraction = {self.background_fraction:.6f} +- {self.background_fraction_err:.6f}"
        )
        lines.append(f"c_zz_corrected = {self.c_zz_corrected:.6f} +- {self.c_zz_corrected_err:.6f}")
        lines.append(f"c_xx_corrected = {self.c_xx_corrected:.6f} +- {self.c_xx_corrected_err:.6f}")
        lines.append(f"f_bound_raw = {self.f_bound_raw:.6f} +- {self.f_bound_raw_err:.6f}")
        lines.append(f"significance_raw = {self.significance_raw:.2f}")
        lines.append(
            f"f_bound_corrected = {self.f_bound_corrected:.6f} +- {self.f_bound_corrected_err:.6f}"
        )
        lines.append(f"significance_corrected = {self.significance_corrected:.2f}")
        if self.insufficient_cells:
            lines.append("insufficient_statistics = " + ",".join(self.insufficient_cells))
        return "\n".join(lines) + "\n"


# -- diagonal (polar-basis) tomography ------------------------------------------


@dataclass
class DiagonalResult:
    diagonals: tuple[float, float, float, float]
    errors: tuple[float, float, float, float]
    c_zz: float
    c_zz_err: float
    stats: dict[str, float]
    insufficient: tuple[str, ...]


def diagonal_tomography(records: np.ndarray, params: AnalysisParams) -> DiagonalResult:
    """Populations and ZZ correlation from path-revealing events."""
    params.validate()
    early = records[records["arrival_class"] == ArrivalClass.EARLY_REVEALING.value]
    late = records[records["arrival_class"] == ArrivalClass.LATE_REVEALING.value]
    n_e, n_l = len(early), len(late)
    if n_e == 0 or n_l == 0:
        raise AnalysisError("diagonal tomography needs both path-revealing arrival classes")
    insufficient = []
    for name, n in (("early", n_e), ("late", n_l)):
        if n < params.min_cell_count:
            insufficient.append(f"revealing_{name}")

    k_e = int(early["readout_click"].sum())
    k_l = int(late["readout_click"].sum())
    p0_e = params.invert_click_fraction(k_e / n_e)
    p0_l = params.invert_click_fraction(k_l / n_l)
    s_e = params.click_fraction_sigma(k_e, n_e)
    s_l = params.click_fraction_sigma(k_l, n_l)

    w_h = n_e / (n_e + n_l)
    s_wh = float(np.sqrt(w_h * (1.0 - w_h) / (n_e + n_l)))

    rho11 = w_h * p0_e
    rho33 = w_h * (1.0 - p0_e)
    rho22 = (1.0 - w_h) * p0_l
    rho44 = (1.0 - w_h) * (1.0 - p0_l)

    e11 = np.hypot(p0_e * s_wh, w_h * s_e)
    e33 = np.hypot((1.0 - p0_e) * s_wh, w_h * s_e)
    e22 = np.hypot(p0_l * s_wh, (1.0 - w_h) * s_l)
    e44 = np.hypot((1.0 - p0_l) * s_wh, (1.0 - w_h) * s_l)

    c_zz = rho22 + rho33 - rho11 - rho44
    dc_dwh = -(2.0 * p0_l - 1.0) - (2.0 * p0_e - 1.0)
    c_err = float(
        np.sqrt((dc_dwh * s_wh) ** 2 + (2.0 * (1.0 - w_h) * s_l) ** 2 + (2.0 * w_h * s_e) ** 2)
    )
    stats = {"n_early": n_e, "n_late": n_l, "w_h": w_h, "s_wh": s_wh, "p0_e": p0_e, "p0_l": p0_l, "s_e": s_e, "s_l": s_l}
    return DiagonalResult(
        (rho11, rho22, rho33, rho44),
        (float(e11), float(e22), float(e33), float(e44)),
        float(c_zz),
        c_err,
        stats,
        tuple(insufficient),
    )


# -- equatorial fringe fit --------------------------------------------------------


@dataclass
class EquatorialResult:
    c_xx: float
    c_xx_err: float
    fits: dict[str, FitCurve]
    curves: dict[str, np.ndarray]
    insufficient: tuple[str, ...]


def _fit_one_prep(phases: np.ndarray, clicks: np.ndarray, params: AnalysisParams):
    nb = params.n_phase_bins
    width = 2.0 * pi / nb
    idx = np.minimum((np.mod(phases, 2.0 * pi) / width).astype(int), nb - 1)
    n_b = np.bincount(idx, minlength=nb).astype(float)
    k_b = np.bincount(idx, weights=clicks.astype(float), minlength=nb)

    filled = n_b > 0
    if filled.sum() * width <= pi:
        raise AnalysisError("phase coverage below half a period; cannot fit the fringe")

    centers = (np.arange(nb) + 0.5) * width
    span = params.p_readout_click - params.readout_dark_click
    f_b = np.zeros(nb)
    f_b[filled] = k_b[filled] / n_b[filled]
    y = np.clip((f_b - params.readout_dark_click) / span, 0.0, 1.0)
    f_smooth = (k_b + 0.5) / (n_b + 1.0)
    var = f_smooth * (1.0 - f_smooth) / np.maximum(n_b, 1.0) / span**2

    x = centers[filled]
    design = np.stack([np.ones_like(x), np.cos(x), np.sin(x)], axis=1)
    w = 1.0 / var[filled]
    wx = design * w[:, None]
    normal = design.T @ wx
    rhs = wx.T @ y[filled]
    try:
        coef = np.linalg.solve(normal, rhs)
        cov = np.linalg.inv(normal)
    except np.linalg.LinAlgError as exc:
        raise AnalysisError("fringe fit did not converge (singular design)") from exc
    c0, a, b = coef

    # finite bin width attenuates the harmonic by sinc(width / 2)
    atten = sin(width / 2.0) / (width / 2.0)
    amplitude = 2.0 * float(np.hypot(a, b)) / atten
    phase0 = float(np.arctan2(b, a))
    denom = max(np.hypot(a, b), 1e-30)
    grad = np.array([0.0, 2.0 * a / denom, 2.0 * b / denom]) / atten
    amp_err = float(np.sqrt(grad @ cov @ grad))

    curve = np.stack([centers[filled], y[filled], np.sqrt(var[filled]), n_b[filled]], axis=1)
    return FitCurve(amplitude, amp_err, phase0, float(c0), int(n_b.sum())), curve


def fit_equatorial(
    records: np.ndarray,
    params: AnalysisParams,
    port_offsets: dict[str, float] | None = None,
) -> EquatorialResult:
    """Per-preparation fringe fits and the combined XX correlation.

    Events from all equatorial ports are merged on a single fringe through the
    effective phase (recorded phase + port offset). The two preparation signs
    produce anti-phased fringes; the XX correlation is the averaged contrast
    with its sign fixed by the fitted relative phase, which makes the value
    invariant under any common shift of the phase origin.
    """
    params.validate()
    offsets = params.port_offsets() if port_offsets is None else port_offsets
    erased = records[records["arrival_class"] == ArrivalClass.ERASED.value]
    if len(erased) == 0:
        raise AnalysisError("no path-erased events to fit")

    fits: dict[str, FitCurve] = {}
    curves: dict[str, np.ndarray] = {}
    insufficient = []
    for prep in PREP_ORDER:
        sel = erased[erased["prep_sign"] == prep]
        if len(sel) == 0:
            raise AnalysisError(f"missing path-erased events for preparation {prep!r}")
        if len(sel) < params.min_cell_count * params.n_phase_bins / 4:
            insufficient.append(f"erased_{prep}")
        off = np.array([offsets[p] for p in sel["port"]])
        phases = np.asarray(sel["phase_rad"]) + off
        fit, curve = _fit_one_prep(phases, sel["readout_click"], params)
        fits[prep] = fit
        curves[prep] = curve

    rel = fits["minus"].phase0 - fits["plus"].phase0
    sign = -np.sign(np.cos(rel)) if abs(np.cos(rel)) > 1e-12 else 1.0
    c_xx = float(sign * 0.5 * (fits["minus"].amplitude + fits["plus"].amplitude))
    c_xx_err = float(0.5 * np.hypot(fits["minus"].amplitude_err, fits["plus"].amplitude_err))
    return EquatorialResult(c_xx, c_xx_err, fits, curves, tuple(insufficient))


# -- background --------------------------------------------------------------------


def estimate_background_fraction(records: np.ndarray, ifm: InterferometerConfig):
    """Background fraction of path-erased clicks from inter-window click rates.

    Clicks between the arrival windows can only be background; their rate per
    nanosecond, scaled by the erased-window width, predicts the background
    count hiding under the erased window.
    """
    ifm.validate()
    n_inv = int(np.sum(records["arrival_class"] == ArrivalClass.INVALID.value))
    n_erased = int(np.sum(records["arrival_class"] == ArrivalClass.ERASED.value))
    if n_erased == 0:
        raise AnalysisError("no path-erased events; background fraction undefined")
    t_invalid = 2.0 * (ifm.delay_ns - 2.0 * ifm.window_ns)
    t_window = 2.0 * ifm.window_ns
    if t_invalid <= 0:
        raise AnalysisError("window geometry leaves no inter-window region")
    expected_bg = n_inv * t_window / t_invalid
    b = min(expected_bg / n_erased, 0.999)
    sigma = (np.sqrt(max(n_inv, 1)) * t_window / t_invalid) / n_erased
    return float(b), float(sigma)


def subtract_background(report: CorrelationReport, background_fraction: float, background_err: float = 0.0) -> CorrelationReport:
    """Corrected report under uniform, spin-uncorrelated background.

    Correlations divide by (1 - b); diagonals shed a uniform weight b/4 per
    cell and renormalize.
    """
    b = background_fraction
    if not 0.0 <= b < 1.0:
        raise AnalysisError("background fraction must lie in [0, 1)")
    scale = 1.0 / (1.0 - b)

    def corr(c, s):
        err = np.hypot(s * scale, c * background_err * scale**2)
        return c * scale, float(err)

    c_zz, c_zz_err = corr(report.c_zz, report.c_zz_err)
    c_xx, c_xx_err = corr(report.c_xx, report.c_xx_err)
    diag = tuple((d - b / 4.0) * scale for d in report.diagonals)
    diag_err = tuple(
        float(np.hypot(e * scale, abs(d - 0.25) * background_err * scale**2))
        for d, e in zip(report.diagonals, report.diagonal_errors)
    )
    f_corr, f_corr_err = _bound_with_error(diag, diag_err, c_xx, c_xx_err)
    return CorrelationReport(
        n_records=report.n_records,
        n_rejected_cycles=report.n_rejected_cycles,
        diagonals=report.diagonals,
        diagonal_errors=report.diagonal_errors,
        c_zz=report.c_zz,
        c_zz_err=report.c_zz_err,
        c_xx=report.c_xx,
        c_xx_err=report.c_xx_err,
        fits=report.fits,
        background_fraction=b,
        background_fraction_err=background_err,
        f_bound_raw=report.f_bound_raw,
        f_bound_raw_err=report.f_bound_raw_err,
        significance_raw=report.significance_raw,
        f_bound_corrected=f_corr,
        f_bound_corrected_err=f_corr_err,
        significance_corrected=significance(f_corr, f_corr_err),
        c_zz_corrected=c_zz,
        c_zz_corrected_err=c_zz_err,
        c_xx_corrected=c_xx,
        c_xx_corrected_err=c_xx_err,
        insufficient_cells=report.insufficient_cells,
        curves=report.curves,
    )


def corrected_correlations(report: CorrelationReport) -> tuple[float, float]:
    b = report.background_fraction
    return report.c_zz / (1.0 - b), report.c_xx / (1.0 - b)


# -- fidelity bound ----------------------------------------------------------------


def fidelity_bound(diagonals, c_xx: float) -> float:
    """Entanglement fidelity lower bound from diagonals and the XX correlation.

    Positivity bounds the Bell coherence by sqrt(rho11 rho44), which turns the
    measured correlations into 0.5 (rho22 + rho33 - 2 sqrt(rho11 rho44) + Cxx).
    Negative values are meaningful diagnostics and are not clamped.
    """
    rho11, rho22, rho33, rho44 = diagonals
    return 0.5 * (rho22 + rho33 - 2.0 * np.sqrt(max(rho11, 0.0) * max(rho44, 0.0)) + c_xx)


def _bound_with_error(diagonals, diagonal_errors, c_xx, c_xx_err):
    rho11, rho22, rho33, rho44 = (max(d, 0.0) for d in diagonals)
    f = fidelity_bound(diagonals, c_xx)
    product = rho11 * rho44
    if product > 1e-12:
        d11 = -0.5 * np.sqrt(rho44 / rho11)
        d44 = -0.5 * np.sqrt(rho11 / rho44)
    else:
        d11 = d44 = 0.0  # sqrt term is quadratically small in the populations
    e11, e22, e33, e44 = diagonal_errors
    var = (
        (0.5 * e22) ** 2
        + (0.5 * e33) ** 2
        + (d11 * e11) ** 2
        + (d44 * e44) ** 2
        + (0.5 * c_xx_err) ** 2
    )
    return float(f), float(np.sqrt(var))


def significance(f_bound: float, f_err: float) -> float:
    """Standard deviations above the classical fidelity bound 0.5."""
    if f_err <= 0:
        raise AnalysisError("cannot form a significance from non-positive error")
    return float((f_bound - 0.5) / f_err)


def binomial_sigma(p: float, n: int) -> float:
    if n <= 0:
        raise AnalysisError("zero total counts")
    return float(np.sqrt(p * (1.0 - p) / n))


# -- pipeline ----------------------------------------------------------------------


def reject_multiclick_cycles(records: np.ndarray, n_photons: int = 1):
    """Drop cycles whose click count exceeds the protocol photon number."""
    if len(records) == 0:
        return records, 0
    ids = records["cycle_id"]
    uniq, counts = np.unique(ids, return_counts=True)
    bad = set(uniq[counts > n_photons].tolist())
    if not bad:
        return records, 0
    keep = np.array([cid not in bad for cid in ids])
    return records[keep], len(bad)


def analyze_records(
    records: np.ndarray,
    params: AnalysisParams,
    ifm: InterferometerConfig,
    background: float | None = None,
    auto_background: bool = False,
) -> CorrelationReport:
    """Full reconstruction: diagonals, fringe fits, bounds, uncertainties."""
    params.validate()
    clean, rejected = reject_multiclick_cycles(records)
    if len(clean) == 0:
        raise AnalysisError("no usable records")
    diag = diagonal_tomography(clean, params)
    eq = fit_equatorial(clean, params)
    f_raw, f_raw_err = _bound_with_error(diag.diagonals, diag.errors, eq.c_xx, eq.c_xx_err)

    report = CorrelationReport(
        n_records=int(len(clean)),
        n_rejected_cycles=int(rejected),
        diagonals=diag.diagonals,
        diagonal_errors=diag.errors,
        c_zz=diag.c_zz,
        c_zz_err=diag.c_zz_err,
        c_xx=eq.c_xx,
        c_xx_err=eq.c_xx_err,
        fits=eq.fits,
        background_fraction=0.0,
        background_fraction_err=0.0,
        f_bound_raw=f_raw,
        f_bound_raw_err=f_raw_err,
        significance_raw=significance(f_raw, f_raw_err),
        f_bound_corrected=f_raw,
        f_bound_corrected_err=f_raw_err,
        significance_corrected=significance(f_raw, f_raw_err),
        c_zz_corrected=diag.c_zz,
        c_zz_corrected_err=diag.c_zz_err,
        c_xx_corrected=eq.c_xx,
        c_xx_corrected_err=eq.c_xx_err,
        insufficient_cells=tuple(diag.insufficient) + tuple(eq.insufficient),
        curves=eq.curves,
    )
    b, b_err = 0.0, 0.0
    if auto_background:
        b, b_err = estimate_background_fraction(clean, ifm)
    elif background is not None:
        b, b_err = float(background), 0.0
    if b > 0.0:
        report = subtract_background(report, b, b_err)
    return report


def write_diagonals_csv(path, report: CorrelationReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("population,value,error\n")
        for label, value, err in zip(DIAGONAL_LABELS, report.diagonals, report.diagonal_errors):
            fh.write(f"{label},{value:.6f},{err:.6f}\n")


def write_curves_csv(path, report: CorrelationReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("prep_sign,phase_center,p_bright,error,n_events\n")
        for prep, curve in report.curves.items():
            for center, y, err, n in curve:
                fh.write(f"{prep},{center:.6f},{y:.6f},{err:.6f},{int(n)}\n")
